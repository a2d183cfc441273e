//! Scanner "A" phantom and the dictionary trained on it, built once and shared
//! by the training, harmonization and alteration criteria.

use std::sync::OnceLock;
use std::time::Instant;

use dlharmonize::dictionary::{batch_objective, split_holdout, Dictionary, TrainConfig, Trainer};
use dlharmonize::harmonizer::{pooled_patches, Dataset};
use dlharmonize::patching::PatchConfig;
use dlharmonize::volume::{DiffusionVolume, GradientTable};

use crate::common::{full_mask, gtab, phantom};

pub const SHAPE: [usize; 3] = [24, 24, 24];
pub const DIRS: usize = 12;
pub const ITERATIONS: usize = 500;
pub const HELD_OUT: usize = 32;
pub const SEED: u64 = 2024;

pub struct Trained {
    pub dictionary: Dictionary,
    /// Largest `|‖d_j‖ − 1|` seen after any iteration.
    pub norm_deviation: f64,
    /// Held-out objective after each monitored iteration.
    pub early: Vec<f64>,
    pub late: Vec<f64>,
    pub train_secs: f64,
    pub monitor_secs: f64,
    pub replaced: usize,
}

pub fn gradients() -> GradientTable {
    gtab(1, DIRS)
}

/// Noise-free acquisition of the reference scanner.
pub fn scanner_a() -> &'static DiffusionVolume {
    static A: OnceLock<DiffusionVolume> = OnceLock::new();
    A.get_or_init(|| phantom(SHAPE, &gradients(), 1.0, 0.0, 0))
}

pub fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(train)
}

fn train() -> Trained {
    let vol = scanner_a().clone();
    let ds = Dataset {
        id: "scanner-a".into(),
        mask: full_mask(&vol),
        gtab: gradients(),
        volume: vol,
    };
    let patch_cfg = PatchConfig {
        seed: SEED,
        ..Default::default()
    };
    let (omega, shape) = pooled_patches(std::slice::from_ref(&ds), &patch_cfg).unwrap();
    let (omega, held) = split_holdout(&omega, HELD_OUT, SEED).unwrap();
    let cfg = TrainConfig {
        n_iterations: ITERATIONS,
        rng_seed: SEED,
        ..Default::default()
    };
    let window = ITERATIONS / 10;
    let mut trainer = Trainer::new(&omega, shape, cfg).unwrap();
    let (mut early, mut late) = (Vec::new(), Vec::new());
    let (mut train_secs, mut monitor_secs) = (0.0, 0.0);
    let mut norm_deviation = 0.0f64;
    let mut replaced = 0;
    while !trainer.is_done() {
        let t = Instant::now();
        let s = trainer.step().unwrap();
        train_secs += t.elapsed().as_secs_f64();
        replaced += s.replaced_atoms;
        for c in trainer.atoms().column_iter() {
            norm_deviation = norm_deviation.max((c.norm() - 1.0).abs());
        }
        let it = trainer.iteration();
        if it <= window || it > ITERATIONS - window {
            let t = Instant::now();
            let obj = batch_objective(trainer.atoms(), &held, &cfg.path_cfg).unwrap();
            monitor_secs += t.elapsed().as_secs_f64();
            if it <= window { early.push(obj) } else { late.push(obj) }
        }
    }
    Trained {
        dictionary: trainer.into_dictionary().unwrap(),
        norm_deviation,
        early,
        late,
        train_secs,
        monitor_secs,
        replaced,
    }
}
