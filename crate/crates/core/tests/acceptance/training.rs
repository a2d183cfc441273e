use std::collections::BTreeSet;

use dlharmonize::patching::{extract_patches, reassemble, PatchConfig};
use dlharmonize::volume::{BrainMask, DiffusionVolume};
use ndarray::{Array3, Array4};
use rand::Rng;

use crate::common::{gtab, mean, rng};
use crate::fixtures::{trained, ITERATIONS, SHAPE};
use crate::Outcome;

const NORM_TOL: f64 = 1e-10;
/// Wall-clock budget on four cores, scaled by the cores actually available.
const BUDGET_4_CORES_S: f64 = 300.0;

pub fn progress() -> Outcome {
    let t = trained();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let budget = BUDGET_4_CORES_S * 4.0 / cores.min(4) as f64;
    let (first, last) = (mean(&t.early), mean(&t.late));
    let pass = t.norm_deviation <= NORM_TOL && last <= first && t.train_secs < budget;
    Outcome::new(
        pass,
        format!(
            "{}^3 phantom, {ITERATIONS} iterations: max |norm-1| {:.1e} (tol {NORM_TOL:.0e}); held-out objective \
             first 10% {first:.5} -> last 10% {last:.5}; {} atoms replaced; training {:.0} s + monitoring {:.0} s \
             on {cores} core(s) (budget {budget:.0} s = 300 s x 4 / cores)",
            SHAPE[0], t.norm_deviation, t.replaced, t.train_secs, t.monitor_secs
        ),
    )
}

const COMBINATIONS: usize = 20;
const ROUNDTRIP_TOL: f64 = 1e-12;

pub fn patch_roundtrip() -> Outcome {
    let mut r = rng(0x4a7c);
    let g = gtab(1, 6);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut covered_total = 0usize;
    while done < COMBINATIONS {
        let shape: [usize; 3] = std::array::from_fn(|_| r.random_range(4..=9));
        let size = r.random_range(1..=4);
        let cfg = PatchConfig {
            spatial_size: size,
            n_neighbors: r.random_range(0..=5),
            include_b0: r.random_bool(0.7),
            stride: r.random_range(1..=size),
            full_inclusion: r.random_bool(0.3),
            seed: r.random(),
        };
        let density = r.random_range(0.2..0.9);
        let mask = Array3::from_shape_fn(shape, |_| r.random_bool(density));
        let Ok(mask) = BrainMask::new(mask) else { continue };
        let data = Array4::from_shape_fn((shape[0], shape[1], shape[2], g.len()), |_| r.random_range(0.0..1000.0));
        let vol = DiffusionVolume::from_data(data).unwrap();
        let Ok(ps) = extract_patches(&vol, &g, &mask, &cfg) else { continue };
        let out = reassemble(&ps, &ps.matrix, vol.shape()).unwrap();

        let volumes: BTreeSet<usize> = ps.blocks.iter().flatten().copied().collect();
        let mut covered = BTreeSet::new();
        for o in &ps.origins {
            for dz in 0..size {
                for dy in 0..size {
                    for dx in 0..size {
                        covered.insert([o.corner[0] + dx, o.corner[1] + dy, o.corner[2] + dz]);
                    }
                }
            }
        }
        for &[x, y, z] in &covered {
            for &v in &volumes {
                worst = worst.max((out.data()[[x, y, z, v]] - vol.data()[[x, y, z, v]]).abs());
            }
        }
        covered_total += covered.len();
        done += 1;
    }
    Outcome::new(
        worst <= ROUNDTRIP_TOL,
        format!("{COMBINATIONS} mask/patch combinations, {covered_total} covered voxels, max deviation {worst:.2e} (tol {ROUNDTRIP_TOL:.0e})"),
    )
}
