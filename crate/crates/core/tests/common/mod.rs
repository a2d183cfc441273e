//! Helpers shared by the integration tests. The oracles here recompute things
//! from first principles and never call into the code they check.
#![allow(dead_code)]

use dlharmonize::alteration::{make_phantom, TensorField};
use dlharmonize::volume::{BrainMask, DiffusionVolume, GradientTable};
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian matrix with unit-norm columns.
pub fn unit_columns(m: usize, p: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut d = DMatrix::from_fn(m, p, |_, _| r.sample::<f64, _>(StandardNormal));
    for mut c in d.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    d
}

pub fn gaussian_vector(n: usize, r: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Largest violation of the lasso optimality conditions, from the residual
/// computed here: `|d_jᵀr| ≤ λ` off the support and `d_jᵀr = λ·sign(α_j)` on it.
pub fn kkt_violation(d: &DMatrix<f64>, x: &DVector<f64>, alpha: &DVector<f64>, lambda: f64) -> f64 {
    let mut r = x.clone();
    for j in 0..d.ncols() {
        if alpha[j] != 0.0 {
            for i in 0..d.nrows() {
                r[i] -= d[(i, j)] * alpha[j];
            }
        }
    }
    (0..d.ncols())
        .map(|j| {
            let g: f64 = (0..d.nrows()).map(|i| d[(i, j)] * r[i]).sum();
            if alpha[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * alpha[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn gtab(n_b0: usize, dirs: usize) -> GradientTable {
    GradientTable::single_shell(n_b0, dirs, 1000.0).unwrap()
}

/// Smooth brain-like phantom with its S₀ scaled by `gain`.
pub fn phantom(shape: [usize; 3], g: &GradientTable, gain: f64, sigma: f64, seed: u64) -> DiffusionVolume {
    let mut field = TensorField::smooth_brain(shape);
    field.s0.mapv_inplace(|v| v * gain);
    make_phantom(&field, g, sigma, seed).unwrap()
}

pub fn mean_s0(shape: [usize; 3]) -> f64 {
    TensorField::smooth_brain(shape).s0.mean().unwrap()
}

pub fn crop(vol: &DiffusionVolume, offset: [usize; 3], size: [usize; 3]) -> DiffusionVolume {
    let [a, b, c] = offset;
    let data = vol
        .data()
        .slice(s![a..a + size[0], b..b + size[1], c..c + size[2], ..])
        .to_owned();
    DiffusionVolume::from_data(data).unwrap()
}

pub fn full_mask(vol: &DiffusionVolume) -> BrainMask {
    BrainMask::full(vol.spatial_shape())
}

/// Trilinear resampling of every channel onto `out` voxels, both grids
/// sampling the same field of view at cell centres; edges clamp.
pub fn trilinear(data: &Array4<f64>, out: [usize; 3]) -> Array4<f64> {
    let (nx, ny, nz, nv) = data.dim();
    let n = [nx, ny, nz];
    let coord = |i: usize, a: usize| -> (usize, usize, f64) {
        let t = ((i as f64 + 0.5) * n[a] as f64 / out[a] as f64 - 0.5).clamp(0.0, (n[a] - 1) as f64);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(n[a] - 1);
        (lo, hi, t - lo as f64)
    };
    Array4::from_shape_fn((out[0], out[1], out[2], nv), |(x, y, z, v)| {
        let (x0, x1, fx) = coord(x, 0);
        let (y0, y1, fy) = coord(y, 1);
        let (z0, z1, fz) = coord(z, 2);
        let mut acc = 0.0;
        for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
            for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                    acc += wx * wy * wz * data[[xi, yi, zi, v]];
                }
            }
        }
        acc
    })
}

pub fn rmse(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let n = a.len() as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn masked(map: &Array3<f64>, mask: &BrainMask) -> Vec<f64> {
    map.iter().zip(mask.array()).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
