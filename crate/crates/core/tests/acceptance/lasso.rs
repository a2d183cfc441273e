use std::time::Instant;

use dlharmonize::lasso::{solve_lasso, PathConfig, Selection, SparseCoder};
use nalgebra::DVector;
use rand::Rng;

use crate::common::{gaussian_vector, kkt_violation, rng, unit_columns};
use crate::Outcome;

const INSTANCES: usize = 200;
const KKT_TOL: f64 = 1e-6;
const TIME_LIMIT_S: f64 = 10.0;

pub fn optimality() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xacc1);
    let cfg = PathConfig::default();
    let (mut worst, mut nonzero_above_max, mut errors) = (0.0f64, 0, 0);
    for _ in 0..INSTANCES {
        let m = r.random_range(1..=16);
        let p = r.random_range(1..=32);
        let d = unit_columns(m, p, &mut r);
        let x = gaussian_vector(m, &mut r);
        let lmax = (0..p).map(|j| d.column(j).dot(&x).abs()).fold(0.0, f64::max);
        let lambda = lmax * r.random_range(0.01..1.0);
        match solve_lasso(&d, &x, lambda, None, &cfg) {
            Ok(a) => worst = worst.max(kkt_violation(&d, &x, &a, lambda)),
            Err(_) => errors += 1,
        }
        for scale in [1.0, 1.5] {
            match solve_lasso(&d, &x, lmax * scale, None, &cfg) {
                Ok(a) if a.iter().all(|&v| v == 0.0) => {}
                _ => nonzero_above_max += 1,
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= KKT_TOL && nonzero_above_max == 0 && errors == 0 && secs < TIME_LIMIT_S,
        format!(
            "{INSTANCES} instances, max KKT violation {worst:.2e} (tol {KKT_TOL:.0e}), \
             {nonzero_above_max} nonzero solutions at lambda >= lambda_max, {errors} errors, {secs:.2} s (limit {TIME_LIMIT_S} s)"
        ),
    )
}

const TRIALS: u64 = 100;
const ROWS: usize = 30;
const ATOMS: usize = 10;
const AIC_RATE: f64 = 0.95;
const CV_RATE: f64 = 0.90;

/// `x = Dα* + e` with two active atoms and `σ = 0.01‖Dα*‖`.
fn instance(seed: u64) -> (nalgebra::DMatrix<f64>, DVector<f64>, [usize; 2]) {
    let mut r = rng(seed);
    let d = unit_columns(ROWS, ATOMS, &mut r);
    let i = r.random_range(0..ATOMS);
    let j = (i + r.random_range(1..ATOMS)) % ATOMS;
    let mut alpha = DVector::zeros(ATOMS);
    for k in [i, j] {
        let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        alpha[k] = sign * r.random_range(1.0..2.0);
    }
    let clean = &d * &alpha;
    let sigma = 0.01 * clean.norm();
    let x = &clean + gaussian_vector(ROWS, &mut r) * sigma;
    (d, x, [i, j])
}

pub fn selection() -> Outcome {
    let (mut aic_hits, mut cv_contains, mut cv_exact) = (0, 0, 0);
    let mut aic_df = Vec::new();
    for t in 0..TRIALS {
        let (d, x, support) = instance(0x5e1 + t);
        let coder = SparseCoder::new(d);
        let aic = coder
            .code(&x, &PathConfig { selection: Selection::Aic, ..Default::default() }, 0)
            .expect("aic coding");
        aic_df.push(aic.df);
        if aic.df == 2 {
            aic_hits += 1;
        }
        let cv_cfg = PathConfig {
            selection: Selection::Cv,
            rng_seed: t,
            ..Default::default()
        };
        let cv = coder.code(&x, &cv_cfg, 0).expect("cv coding");
        if support.iter().all(|&k| cv.alpha[k] != 0.0) {
            cv_contains += 1;
            if cv.df == 2 {
                cv_exact += 1;
            }
        }
    }
    let n = TRIALS as f64;
    let aic_rate = aic_hits as f64 / n;
    let cv_rate = cv_contains as f64 / n;
    aic_df.sort_unstable();
    Outcome::new(
        aic_rate >= AIC_RATE && cv_rate >= CV_RATE,
        format!(
            "AIC df=2 in {:.0}% (need {:.0}%, median df {}), CV support contained in {:.0}% (need {:.0}%, exact {:.0}%)",
            100.0 * aic_rate,
            100.0 * AIC_RATE,
            aic_df[aic_df.len() / 2],
            100.0 * cv_rate,
            100.0 * CV_RATE,
            100.0 * cv_exact as f64 / n
        ),
    )
}
