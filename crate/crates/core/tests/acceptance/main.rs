//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `cargo test -p dlharmonize --test acceptance` runs everything; pass
//! criterion numbers (`-- 1 4 8`) to run a subset.

#[path = "../common/mod.rs"]
mod common;

mod fixtures;
mod harmonization;
mod lasso;
mod pipeline;
mod stats;
mod training;

use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "lasso optimality", lasso::optimality),
    (2, "lambda selection", lasso::selection),
    (3, "dictionary training", training::progress),
    (4, "patch roundtrip", training::patch_roundtrip),
    (5, "harmonization across gain and noise", harmonization::gain_and_noise),
    (6, "upsampling", harmonization::upsampling),
    (7, "alteration effect size", harmonization::alteration),
    (8, "statistics formulas", stats::formulas),
    (9, "determinism", pipeline::determinism),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{verdict}] {name}: {} ({:.1} s)",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
