//! Reference values recomputed by hand here; the library only supplies the
//! values under test.

use dlharmonize::evaluation::{
    fdr_correct, g_confidence_interval, hedges_g, kl_symmetric, kl_symmetric_mass, paired_ttest, percentage_difference,
    raw_percentage_difference, voxel_errors,
};
use dlharmonize::volume::{BrainMask, Region};
use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::common::{mean, rng, sd};
use crate::Outcome;

const TOL: f64 = 1e-3;
/// Allowed relative difference between analytic and bootstrap CI widths.
const CI_WIDTH_TOL: f64 = 0.10;
const RESAMPLES: usize = 10_000;

struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn near(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.count += 1;
        if !((got - want).abs() <= tol) {
            self.failed.push(format!("{name}: {got} vs {want}"));
        }
    }

    fn exact<T: PartialEq + std::fmt::Debug>(&mut self, name: &str, got: T, want: T) {
        self.count += 1;
        if got != want {
            self.failed.push(format!("{name}: {got:?} vs {want:?}"));
        }
    }
}

fn one_voxel(v: f64) -> Array3<f64> {
    Array3::from_elem((1, 1, 1), v)
}

/// Ten values with sample mean `mu` and sample standard deviation exactly 1.
fn unit_sample(mu: f64) -> Vec<f64> {
    let base: Vec<f64> = (1..=10).map(f64::from).collect();
    let (m, s) = (mean(&base), sd(&base));
    base.iter().map(|v| mu + (v - m) / s).collect()
}

/// `|μ₁ − μ₂| / ((σ₁ + σ₂)/2) · J`, written out for the bootstrap.
fn g_by_hand(x: &[f64], y: &[f64]) -> f64 {
    let j = 1.0 - 3.0 / (4.0 * (x.len() + y.len()) as f64 - 9.0);
    (mean(x) - mean(y)).abs() / ((sd(x) + sd(y)) / 2.0) * j
}

pub fn formulas() -> Outcome {
    let mut c = Checks {
        failed: Vec::new(),
        count: 0,
    };

    // symmetric KL of two mass functions
    let (p, q) = ([0.5f64, 0.5], [0.9f64, 0.1]);
    let kl_hand: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a / b).ln()).sum();
    let kl = kl_symmetric_mass(&p, &q).unwrap();
    c.near("kl two-bin", kl, kl_hand, TOL);
    c.near("kl two-bin literal", kl, 0.8789, TOL);
    c.exact("kl symmetric", kl_symmetric_mass(&q, &p).unwrap(), kl);
    let sample: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let other: Vec<f64> = sample.iter().map(|v| v * 1.3 + 0.1).collect();
    c.exact("kl identical", kl_symmetric(&sample, &sample, 100).unwrap(), 0.0);
    c.exact(
        "kl argument order",
        kl_symmetric(&sample, &other, 100).unwrap(),
        kl_symmetric(&other, &sample, 100).unwrap(),
    );

    // Hedges' g
    let (x, y) = (unit_sample(1.0), unit_sample(0.0));
    let g_hand = 1.0 - 3.0 / 71.0;
    let g = hedges_g(&x, &y).unwrap();
    c.near("g", g, g_hand, TOL);
    c.near("g literal", g, 0.9577, TOL);
    c.exact("g swap", hedges_g(&y, &x).unwrap(), g);
    c.exact("g equal means", hedges_g(&x, &x).unwrap(), 0.0);

    // paired t-test; two-sided p for 2 degrees of freedom is 1 − t/√(t² + 2)
    let (tx, ty) = ([2.0, 4.0, 6.0], [1.0, 2.0, 3.0]);
    let tt = paired_ttest(&tx, &ty).unwrap();
    let t_hand = 2.0 * 3f64.sqrt();
    c.near("t", tt.t, t_hand, TOL);
    c.near("t literal", tt.t, 3.4641, TOL);
    c.exact("t df", tt.df, 2.0);
    c.near("t p", tt.p, 1.0 - t_hand / (t_hand * t_hand + 2.0).sqrt(), TOL);
    c.near("t p literal", tt.p, 0.0742, TOL);
    let flipped = paired_ttest(&ty, &tx).unwrap();
    c.exact("t negated", flipped.t, -tt.t);
    c.exact("t negated p", flipped.p, tt.p);
    c.exact("t zero variance", paired_ttest(&ty, &ty).map(|_| ()).map_err(|e| e.code()), Err("E_DEGENERATE"));

    // Benjamini–Hochberg step-up
    let (adj, rej) = fdr_correct(&[0.01, 0.02, 0.04], 0.05).unwrap();
    for (got, want) in adj.iter().zip([0.03, 0.03, 0.04]) {
        c.near("bh adjusted", *got, want, TOL);
    }
    c.exact("bh rejections", rej, vec![true; 3]);
    c.exact("bh single", fdr_correct(&[0.3], 0.05).unwrap(), (vec![0.3], vec![false]));
    c.exact("bh all ones", fdr_correct(&[1.0; 4], 0.05).unwrap().1, vec![false; 4]);

    // percentage differences
    let r = Region::new([0, 0, 0], [1, 1, 1]).unwrap();
    let pd = |h, b, ha, ba| {
        percentage_difference(&one_voxel(h), &one_voxel(b), &one_voxel(ha), &one_voxel(ba), &r)
            .unwrap()
            .values[0]
    };
    c.near("percentage 1.2 vs 1.1", pd(1.2, 1.0, 1.1, 1.0), 10.0, TOL);
    c.exact("percentage unchanged", pd(2.0, 2.0, 3.0, 3.0), 0.0);
    c.exact("percentage equal change", pd(1.1, 1.0, 2.2, 2.0), 0.0);
    let raw = |a, b| raw_percentage_difference(&one_voxel(a), &one_voxel(b), &r).unwrap().values[0];
    c.near("raw 3 vs 1", raw(3.0, 1.0), 100.0, TOL);
    c.exact("raw swap", raw(1.0, 3.0), raw(3.0, 1.0));
    c.exact("raw equal", raw(2.0, 2.0), 0.0);

    // voxel errors and clipping
    let mask = BrainMask::full([1, 1, 1]);
    let e = voxel_errors(&one_voxel(1.1), &one_voxel(1.0), &mask).unwrap();
    c.exact("mne", e.mne[0], (1.1f64 - 1.0).abs() / 1.0);
    c.exact("error", e.error[0], 1.1 - 1.0);
    let same = voxel_errors(&one_voxel(4.0), &one_voxel(4.0), &mask).unwrap();
    c.exact("identical maps", (same.mne[0], same.error[0]), (0.0, 0.0));
    let mut values: Vec<f64> = (0..1000).map(|i| 1.0 + (i as f64 * 0.731).sin()).collect();
    values[417] = 1e6;
    let mut sorted: Vec<f64> = values.iter().map(|v| (v + 1.0) - 1.0).collect();
    sorted.sort_by(f64::total_cmp);
    let h: f64 = 0.999 * 999.0;
    let (lo, frac) = (h.floor() as usize, h - h.floor());
    let p999 = sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
    let acquired = Array3::from_elem((10, 10, 10), 1.0);
    let predicted = Array3::from_shape_vec((10, 10, 10), values.iter().map(|v| v + 1.0).collect()).unwrap();
    let clipped = voxel_errors(&predicted, &acquired, &BrainMask::full([10, 10, 10])).unwrap();
    let max = clipped.error.iter().copied().fold(f64::MIN, f64::max);
    c.near("outlier clipped", max, p999, TOL);

    // CI against a parametric bootstrap of the same design
    let (lo_ci, hi_ci) = g_confidence_interval(&x, &y, 0.95).unwrap();
    let mut r = rng(0xb007);
    let mut gs: Vec<f64> = (0..RESAMPLES)
        .map(|_| {
            let a: Vec<f64> = (0..10).map(|_| 1.0 + r.sample::<f64, _>(StandardNormal)).collect();
            let b: Vec<f64> = (0..10).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            g_by_hand(&a, &b)
        })
        .collect();
    gs.sort_by(f64::total_cmp);
    let q = |f: f64| gs[((RESAMPLES - 1) as f64 * f).round() as usize];
    let boot_width = q(0.975) - q(0.025);
    let width = hi_ci - lo_ci;
    c.count += 1;
    if (width / boot_width - 1.0).abs() > CI_WIDTH_TOL {
        c.failed.push(format!("ci width {width:.4} vs bootstrap {boot_width:.4}"));
    }
    c.exact("ci contains g", lo_ci <= g && g <= hi_ci, true);

    Outcome::new(
        c.failed.is_empty(),
        if c.failed.is_empty() {
            format!(
                "{} checks (KL {kl:.4}, g {g:.4}, t {:.4}, p {:.4}, CI width {width:.3} vs bootstrap {boot_width:.3})",
                c.count, tt.t, tt.p
            )
        } else {
            format!("{} of {} checks failed: {}", c.failed.len(), c.count, c.failed.join("; "))
        },
    )
}
