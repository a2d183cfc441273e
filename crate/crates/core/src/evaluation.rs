//! Statistics used to compare metric maps: normalized and signed voxel errors,
//! symmetric KL divergence of binned distributions, percentage differences,
//! paired t-tests with Benjamini–Hochberg correction and Hedges' g.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{arg_err, Error, Result};
use crate::volume::{BrainMask, Region};

pub const DEFAULT_BINS: usize = 100;
pub const CLIP_LOW: f64 = 0.1;
pub const CLIP_HIGH: f64 = 99.9;

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(arg_err!("{name} contains non-finite values"));
    }
    Ok(())
}

/// Percentile `q ∈ [0, 100]` of already sorted values, interpolating linearly
/// between order statistics.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    percentile_sorted(&s, q)
}

/// Clamps values into their own `[low, high]` percentile range; returns the bounds.
pub fn clip_percentiles(values: &mut [f64], low: f64, high: f64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (a, b) = (percentile_sorted(&s, low), percentile_sorted(&s, high));
    values.iter_mut().for_each(|v| *v = v.clamp(a, b));
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Evaluation("cannot summarize an empty sample".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: percentile_sorted(&s, 50.0),
            q1: percentile_sorted(&s, 25.0),
            q3: percentile_sorted(&s, 75.0),
            min: s[0],
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelErrors {
    /// `|predicted − acquired| / acquired`, clipped.
    pub mne: Vec<f64>,
    /// `predicted − acquired`, clipped.
    pub error: Vec<f64>,
    pub mne_clip: (f64, f64),
    pub error_clip: (f64, f64),
    /// Masked voxels left out of the MNE because `acquired == 0`.
    pub zero_acquired: usize,
}

fn masked_pair(a: &Array3<f64>, b: &Array3<f64>, mask: &BrainMask) -> Result<Vec<(f64, f64)>> {
    let shape = mask.shape();
    if a.shape() != shape || b.shape() != shape {
        return Err(arg_err!(
            "map shapes {:?} and {:?} do not match mask {shape:?}",
            a.shape(),
            b.shape()
        ));
    }
    let pairs: Vec<(f64, f64)> = ndarray::Zip::from(a)
        .and(b)
        .and(mask.array())
        .fold(Vec::new(), |mut acc, &x, &y, &m| {
            if m {
                acc.push((x, y));
            }
            acc
        });
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(arg_err!("maps contain non-finite values inside the mask"));
    }
    Ok(pairs)
}

/// Values of `map` inside `mask`, in memory order.
pub fn masked_values(map: &Array3<f64>, mask: &BrainMask) -> Result<Vec<f64>> {
    Ok(masked_pair(map, map, mask)?.into_iter().map(|(v, _)| v).collect())
}

pub fn voxel_errors(predicted: &Array3<f64>, acquired: &Array3<f64>, mask: &BrainMask) -> Result<VoxelErrors> {
    let pairs = masked_pair(predicted, acquired, mask)?;
    if pairs.is_empty() {
        return Err(arg_err!("empty mask"));
    }
    let mut error: Vec<f64> = pairs.iter().map(|(p, a)| p - a).collect();
    let mut mne: Vec<f64> = pairs
        .iter()
        .filter(|(_, a)| *a != 0.0)
        .map(|(p, a)| ((p - a) / a).abs())
        .collect();
    let zero_acquired = pairs.len() - mne.len();
    let error_clip = clip_percentiles(&mut error, CLIP_LOW, CLIP_HIGH);
    let mne_clip = clip_percentiles(&mut mne, CLIP_LOW, CLIP_HIGH);
    Ok(VoxelErrors {
        mne,
        error,
        mne_clip,
        error_clip,
        zero_acquired,
    })
}

/// `KL(P‖Q) + KL(Q‖P)` of two probability mass functions, skipping bins where
/// either mass is zero.
pub fn kl_symmetric_mass(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(arg_err!("mass functions have {} and {} bins", p.len(), q.len()));
    }
    check_finite("P", p)?;
    check_finite("Q", q)?;
    let kept: Vec<(f64, f64)> = p
        .iter()
        .zip(q)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .collect();
    if kept.is_empty() {
        return Err(Error::Evaluation("no bin has mass in both distributions".into()));
    }
    // each term is invariant under swapping a and b, bit for bit
    Ok(kept.iter().map(|(a, b)| (a - b) * (a.ln() - b.ln())).sum())
}

/// Normalized histograms of both samples over `k` shared, equal-width bins
/// spanning their joint range.
pub fn shared_histograms(p: &[f64], q: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.is_empty() || q.is_empty() {
        return Err(arg_err!("KL divergence needs two nonempty samples"));
    }
    if k == 0 {
        return Err(arg_err!("bin count must be >= 1"));
    }
    check_finite("sample", p)?;
    check_finite("sample", q)?;
    let lo = p.iter().chain(q).copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().chain(q).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / k as f64;
    let bin = |v: f64| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(k - 1)
        } else {
            0
        }
    };
    let hist = |s: &[f64]| {
        let mut h = vec![0.0; k];
        for &v in s {
            h[bin(v)] += 1.0;
        }
        h.iter_mut().for_each(|c| *c /= s.len() as f64);
        h
    };
    Ok((hist(p), hist(q)))
}

pub fn kl_symmetric(p: &[f64], q: &[f64], k: usize) -> Result<f64> {
    let (hp, hq) = shared_histograms(p, q, k)?;
    kl_symmetric_mass(&hp, &hq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionValues {
    pub values: Vec<f64>,
    /// Region voxels skipped for a zero denominator.
    pub excluded: usize,
}

fn region_check(region: &Region, maps: &[&Array3<f64>]) -> Result<()> {
    let shape = maps[0].shape();
    if maps.iter().any(|m| m.shape() != shape) {
        return Err(arg_err!("maps differ in shape"));
    }
    if region.n_voxels() == 0 {
        return Err(arg_err!("empty region"));
    }
    region.check_within([shape[0], shape[1], shape[2]])
}

/// `100·|(h − b)/b − (h_a − b_a)/b_a|` over the region.
pub fn percentage_difference(
    harmonized: &Array3<f64>,
    baseline: &Array3<f64>,
    harmonized_altered: &Array3<f64>,
    baseline_altered: &Array3<f64>,
    region: &Region,
) -> Result<RegionValues> {
    region_check(region, &[harmonized, baseline, harmonized_altered, baseline_altered])?;
    let mut out = RegionValues {
        values: Vec::with_capacity(region.n_voxels()),
        excluded: 0,
    };
    for p in region.voxels() {
        let (h, b, ha, ba) = (harmonized[p], baseline[p], harmonized_altered[p], baseline_altered[p]);
        if b == 0.0 || ba == 0.0 {
            out.excluded += 1;
            continue;
        }
        out.values.push(100.0 * ((h - b) / b - (ha - ba) / ba).abs());
    }
    Ok(out)
}

/// `100·|a − b| / ((a + b)/2)` over the region.
pub fn raw_percentage_difference(a: &Array3<f64>, b: &Array3<f64>, region: &Region) -> Result<RegionValues> {
    region_check(region, &[a, b])?;
    let mut out = RegionValues {
        values: Vec::with_capacity(region.n_voxels()),
        excluded: 0,
    };
    for p in region.voxels() {
        let s = a[p] + b[p];
        if s == 0.0 {
            out.excluded += 1;
            continue;
        }
        out.values.push(100.0 * (a[p] - b[p]).abs() / (s / 2.0));
    }
    Ok(out)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Student's t-test for paired samples.
pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(arg_err!("paired samples have lengths {} and {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("paired t-test needs at least 2 pairs".into()));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let (mean, sd) = mean_sd(&d);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let n = d.len() as f64;
    let t = mean * n.sqrt() / sd;
    let df = n - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// Benjamini–Hochberg step-up adjustment, in input order.
pub fn fdr_correct(pvals: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(arg_err!("p-value {p} outside [0, 1]"));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvals[i] * m as f64 / (rank + 1) as f64);
        // p·m/k can round a hair below p when k = m
        adjusted[i] = running.max(pvals[i]).min(1.0);
    }
    let reject = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok((adjusted, reject))
}

/// `|μ₁ − μ₂| / ((σ₁ + σ₂)/2) · (1 − 3/(4(n₁ + n₂) − 9))` with sample standard
/// deviations.
pub fn hedges_g(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Degenerate("Hedges' g needs two samples of size >= 2".into()));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let (m1, s1) = mean_sd(x);
    let (m2, s2) = mean_sd(y);
    if !(s1 + s2 > 0.0) {
        return Err(Error::Degenerate("both samples have zero spread".into()));
    }
    let n = (x.len() + y.len()) as f64;
    Ok((m1 - m2).abs() / ((s1 + s2) / 2.0) * (1.0 - 3.0 / (4.0 * n - 9.0)))
}

/// Normal-approximation interval with variance
/// `(n₁ + n₂)/(n₁n₂) + g²/(2(n₁ + n₂))`.
pub fn g_confidence_interval(x: &[f64], y: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(arg_err!("confidence level must lie in (0, 1)"));
    }
    let g = hedges_g(x, y)?;
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let var = (n1 + n2) / (n1 * n2) + g * g / (2.0 * (n1 + n2));
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * var.sqrt();
    Ok((g - half, g + half))
}

pub const CI_METHOD: &str = "normal approximation, var = (n1+n2)/(n1*n2) + g^2/(2(n1+n2))";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub n: usize,
}

impl ErrorSummary {
    fn new(values: &[f64], clip: (f64, f64)) -> Result<Self> {
        let s = Summary::of(values)?;
        Ok(Self {
            mean: s.mean,
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            clip_low: clip.0,
            clip_high: clip.1,
            n: s.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestRecord {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub p_fdr: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: String,
}

impl EffectSize {
    pub fn compute(x: &[f64], y: &[f64], level: f64) -> Result<Self> {
        let (ci_low, ci_high) = g_confidence_interval(x, y, level)?;
        Ok(Self {
            value: hedges_g(x, y)?,
            ci_low,
            ci_high,
            level,
            method: CI_METHOD.into(),
        })
    }

    pub fn contains(&self, g: f64) -> bool {
        self.ci_low <= g && g <= self.ci_high
    }
}

/// Comparison of a pair against its altered counterpart inside a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlterationRecord {
    pub region: Region,
    pub percentage_difference: Option<Summary>,
    pub excluded_voxels: usize,
    /// g between each map and its altered version over the region.
    pub g_predicted: Option<EffectSize>,
    pub g_acquired: Option<EffectSize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub subject: String,
    pub comparison: String,
    pub mne: ErrorSummary,
    pub error: ErrorSummary,
    pub kl_sym: f64,
    pub kl_bins: usize,
    /// `None` when the paired differences are degenerate (e.g. identical maps).
    pub ttest: Option<TTestRecord>,
    pub g: Option<EffectSize>,
    pub excluded_voxels: usize,
    pub alteration: Option<AlterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
    pub fdr_alpha: f64,
    /// Bins are shared per comparison only, so KL values of different
    /// comparisons are not comparable.
    pub note: String,
}

/// Maps for one metric comparison.
pub struct MetricInputs<'a> {
    pub metric: String,
    pub subject: String,
    pub comparison: String,
    pub predicted: &'a Array3<f64>,
    pub acquired: &'a Array3<f64>,
    pub altered: Option<(&'a Array3<f64>, &'a Array3<f64>, Region)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub fdr_alpha: f64,
    pub ci_level: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            fdr_alpha: 0.05,
            ci_level: 0.95,
        }
    }
}

fn degenerate_as_none<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn region_values(map: &Array3<f64>, region: &Region) -> Vec<f64> {
    region.voxels().map(|p| map[p]).collect()
}

/// Builds the report; t-test p-values are FDR-adjusted across all records.
pub fn evaluate(inputs: &[MetricInputs<'_>], mask: &BrainMask, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(inputs.len());
    let mut raw_tests = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let errs = voxel_errors(inp.predicted, inp.acquired, mask)?;
        let pv = masked_values(inp.predicted, mask)?;
        let av = masked_values(inp.acquired, mask)?;
        let kl_sym = kl_symmetric(&pv, &av, cfg.bins)?;
        let ttest = degenerate_as_none(paired_ttest(&pv, &av))?;
        let g = degenerate_as_none(EffectSize::compute(&pv, &av, cfg.ci_level))?;
        let alteration = match &inp.altered {
            None => None,
            Some((pa, aa, region)) => {
                let pd = percentage_difference(inp.predicted, inp.acquired, pa, aa, region)?;
                let g_of = |a: &Array3<f64>, b: &Array3<f64>| {
                    degenerate_as_none(EffectSize::compute(&region_values(a, region), &region_values(b, region), cfg.ci_level))
                };
                Some(AlterationRecord {
                    region: *region,
                    percentage_difference: if pd.values.is_empty() { None } else { Some(Summary::of(&pd.values)?) },
                    excluded_voxels: pd.excluded,
                    g_predicted: g_of(inp.predicted, pa)?,
                    g_acquired: g_of(inp.acquired, aa)?,
                })
            }
        };
        raw_tests.push(ttest);
        records.push(MetricRecord {
            metric: inp.metric.clone(),
            subject: inp.subject.clone(),
            comparison: inp.comparison.clone(),
            mne: ErrorSummary::new(&errs.mne, errs.mne_clip).or_else(|_| ErrorSummary::new(&[0.0], (0.0, 0.0)))?,
            error: ErrorSummary::new(&errs.error, errs.error_clip)?,
            kl_sym,
            kl_bins: cfg.bins,
            ttest: None,
            g,
            excluded_voxels: errs.zero_acquired,
            alteration,
        });
    }
    let ps: Vec<f64> = raw_tests.iter().flatten().map(|t| t.p).collect();
    let (adj, rej) = fdr_correct(&ps, cfg.fdr_alpha)?;
    let mut k = 0;
    for (rec, t) in records.iter_mut().zip(raw_tests) {
        if let Some(t) = t {
            rec.ttest = Some(TTestRecord {
                t: t.t,
                df: t.df,
                p: t.p,
                p_fdr: adj[k],
                reject: rej[k],
            });
            k += 1;
        }
    }
    Ok(EvalReport {
        records,
        fdr_alpha: cfg.fdr_alpha,
        note: "KL bins are shared within each comparison only; KL values across comparisons are not comparable".into(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per record with the headline numbers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "metric,subject,comparison,mne_mean,mne_median,mne_q1,mne_q3,error_mean,error_median,error_q1,error_q3,kl_sym,t,df,p,p_fdr,reject,g,g_ci_low,g_ci_high,excluded_voxels\n",
        );
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.records {
            let t = r.ttest.as_ref();
            let g = r.g.as_ref();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.metric,
                r.subject,
                r.comparison,
                r.mne.mean,
                r.mne.median,
                r.mne.q1,
                r.mne.q3,
                r.error.mean,
                r.error.median,
                r.error.q1,
                r.error.q3,
                r.kl_sym,
                f(t.map(|t| t.t)),
                f(t.map(|t| t.df)),
                f(t.map(|t| t.p)),
                f(t.map(|t| t.p_fdr)),
                t.map(|t| t.reject.to_string()).unwrap_or_default(),
                f(g.map(|g| g.value)),
                f(g.map(|g| g.ci_low)),
                f(g.map(|g| g.ci_high)),
                r.excluded_voxels
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_abs_diff_eq!(percentile(&v, 10.0), 1.3, epsilon = 1e-12);
    }

    #[test]
    fn voxel_error_formulas() {
        let p = Array3::from_elem((2, 2, 1), 1.1);
        let a = Array3::from_elem((2, 2, 1), 1.0);
        let e = voxel_errors(&p, &a, &BrainMask::full([2, 2, 1])).unwrap();
        for (m, r) in e.mne.iter().zip(&e.error) {
            assert_abs_diff_eq!(*m, 0.1, epsilon = 1e-12);
            assert_abs_diff_eq!(*r, 0.1, epsilon = 1e-12);
        }
        let z = voxel_errors(&a, &a, &BrainMask::full([2, 2, 1])).unwrap();
        assert!(z.mne.iter().chain(&z.error).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_acquired_is_excluded_from_mne() {
        let p = Array3::from_elem((3, 1, 1), 2.0);
        let mut a = Array3::from_elem((3, 1, 1), 1.0);
        a[[0, 0, 0]] = 0.0;
        let e = voxel_errors(&p, &a, &BrainMask::full([3, 1, 1])).unwrap();
        assert_eq!(e.zero_acquired, 1);
        assert_eq!(e.mne.len(), 2);
        assert_eq!(e.error.len(), 3);
    }

    #[test]
    fn two_bin_kl() {
        assert_abs_diff_eq!(kl_symmetric_mass(&[0.5, 0.5], &[0.9, 0.1]).unwrap(), 0.87889, epsilon = 1e-5);
        assert!(kl_symmetric_mass(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn identical_samples_have_zero_kl() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert_eq!(kl_symmetric(&a, &a, 100).unwrap(), 0.0);
        assert_eq!(kl_symmetric(&[3.0; 4], &[3.0; 9], 100).unwrap(), 0.0);
        assert!(kl_symmetric(&[], &a, 100).is_err());
    }

    #[test]
    fn percentage_examples() {
        let r = Region::new([0, 0, 0], [1, 1, 1]).unwrap();
        let m = |v: f64| Array3::from_elem((1, 1, 1), v);
        let v = percentage_difference(&m(1.2), &m(1.0), &m(1.1), &m(1.0), &r).unwrap();
        assert_abs_diff_eq!(v.values[0], 10.0, epsilon = 1e-12);
        let v = percentage_difference(&m(2.2), &m(2.0), &m(1.1), &m(1.0), &r).unwrap();
        assert_abs_diff_eq!(v.values[0], 0.0, epsilon = 1e-12);
        let v = percentage_difference(&m(1.0), &m(0.0), &m(1.0), &m(1.0), &r).unwrap();
        assert_eq!((v.values.len(), v.excluded), (0, 1));
        assert_eq!(raw_percentage_difference(&m(3.0), &m(1.0), &r).unwrap().values, vec![100.0]);
        assert_eq!(raw_percentage_difference(&m(1.0), &m(3.0), &r).unwrap().values, vec![100.0]);
        assert!(raw_percentage_difference(&m(1.0), &m(1.0), &Region::new([1, 0, 0], [1, 1, 1]).unwrap()).is_err());
    }

    #[test]
    fn ttest_reference_and_degenerate() {
        let t = paired_ttest(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_abs_diff_eq!(t.t, 12f64.sqrt(), epsilon = 1e-12);
        assert_eq!(t.df, 2.0);
        assert_abs_diff_eq!(t.p, 0.07418, epsilon = 1e-5);
        let u = paired_ttest(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(u.t, -t.t);
        assert_eq!(u.p, t.p);
        assert!(matches!(paired_ttest(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bh_step_up() {
        let (adj, rej) = fdr_correct(&[0.01, 0.02, 0.04], 0.05).unwrap();
        assert_eq!(rej, vec![true; 3]);
        assert_abs_diff_eq!(adj[2], 0.04, epsilon = 1e-15);
        assert_eq!(fdr_correct(&[0.3], 0.05).unwrap().0, vec![0.3]);
        assert_eq!(fdr_correct(&[1.0, 1.0], 0.05).unwrap().1, vec![false, false]);
        let (adj, _) = fdr_correct(&[0.04, 0.01, 0.03], 0.05).unwrap();
        assert_abs_diff_eq!(adj[1], 0.03, epsilon = 1e-15);
        assert!(fdr_correct(&[1.5], 0.05).is_err());
    }

    #[test]
    fn hedges_g_reference() {
        // means 1 and 0, both sample sds exactly 1, n = 10
        let base = [-1.5, -1.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.5];
        let (_, sd) = mean_sd(&base);
        let y: Vec<f64> = base.iter().map(|v| v / sd).collect();
        let x: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
        assert_abs_diff_eq!(hedges_g(&x, &y).unwrap(), 1.0 - 3.0 / 71.0, epsilon = 1e-12);
        assert_eq!(hedges_g(&x, &y).unwrap(), hedges_g(&y, &x).unwrap());
        assert_eq!(hedges_g(&y, &y).unwrap(), 0.0);
        assert!(matches!(hedges_g(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Degenerate(_))));
        let (lo, hi) = g_confidence_interval(&x, &y, 0.95).unwrap();
        assert!(lo < 0.9577 && 0.9577 < hi);
    }
}
