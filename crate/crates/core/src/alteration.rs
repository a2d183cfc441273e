//! Free-water contamination of a region, and synthetic tensor phantoms.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array3, Array4};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::rng;
use crate::volume::{DiffusionVolume, GradientTable, Region};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlterationConfig {
    pub region: Region,
    pub f_low: f64,
    pub f_high: f64,
    /// Free-water diffusivity in mm²/s.
    pub d_csf: f64,
    pub rng_seed: u64,
}

impl Default for AlterationConfig {
    fn default() -> Self {
        Self {
            region: Region {
                offset: [0, 0, 0],
                shape: [15, 20, 10],
            },
            f_low: 0.7,
            f_high: 0.9,
            d_csf: 3e-3,
            rng_seed: 0,
        }
    }
}

impl AlterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.f_low && self.f_low <= self.f_high && self.f_high <= 1.0) {
            return Err(arg_err!(
                "need 0 <= f_low <= f_high <= 1, got [{}, {}]",
                self.f_low,
                self.f_high
            ));
        }
        if !(self.d_csf > 0.0 && self.d_csf.is_finite()) {
            return Err(arg_err!("d_csf must be positive"));
        }
        Ok(())
    }
}

/// Everything needed to reproduce an alteration exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlterationRecord {
    pub region: Region,
    pub f_low: f64,
    pub f_high: f64,
    pub d_csf: f64,
    pub seed: u64,
    /// One fraction per region voxel, x fastest.
    pub fractions: Vec<f64>,
}

fn voxel_id([x, y, z]: [usize; 3], shape: [usize; 3]) -> u64 {
    (x + shape[0] * (y + shape[1] * z)) as u64
}

/// Adds `f·S₀·exp(−b·d_csf)` to every channel of every region voxel, with one
/// `f ~ U(f_low, f_high)` per voxel and `S₀` the mean of its b0 channels.
pub fn alter_volume(vol: &DiffusionVolume, gtab: &GradientTable, cfg: &AlterationConfig) -> Result<(DiffusionVolume, AlterationRecord)> {
    cfg.validate()?;
    if gtab.len() != vol.n_volumes() {
        return Err(arg_err!(
            "gradient table has {} entries for {} volumes",
            gtab.len(),
            vol.n_volumes()
        ));
    }
    let spatial = vol.spatial_shape();
    cfg.region.check_within(spatial)?;
    let b0 = gtab.b0_indices();
    let weights: Vec<f64> = gtab.bvals().iter().map(|b| (-b * cfg.d_csf).exp()).collect();

    let voxels: Vec<[usize; 3]> = cfg.region.voxels().collect();
    let fractions: Vec<f64> = voxels
        .par_iter()
        .map(|&p| {
            if cfg.f_low == cfg.f_high {
                cfg.f_low
            } else {
                let mut r = rng::salted(cfg.rng_seed, rng::salt::ALTER, voxel_id(p, spatial));
                r.random_range(cfg.f_low..cfg.f_high)
            }
        })
        .collect();

    let mut data = vol.data().clone();
    for (&[x, y, z], &f) in voxels.iter().zip(&fractions) {
        let s0 = b0.iter().map(|&v| data[[x, y, z, v]]).sum::<f64>() / b0.len() as f64;
        for (v, w) in weights.iter().enumerate() {
            data[[x, y, z, v]] += f * s0 * w;
        }
    }
    let record = AlterationRecord {
        region: cfg.region,
        f_low: cfg.f_low,
        f_high: cfg.f_high,
        d_csf: cfg.d_csf,
        seed: cfg.rng_seed,
        fractions,
    };
    Ok((vol.with_data(data)?, record))
}

/// Per-voxel diffusion tensors (`[Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]`, mm²/s) and
/// unweighted signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub tensors: Array4<f64>,
    pub s0: Array3<f64>,
}

/// Tensor with eigenvalues `evals` along the columns of the rotation `frame`.
pub fn tensor_from_frame(evals: [f64; 3], frame: &Matrix3<f64>) -> [f64; 6] {
    let d = frame * Matrix3::from_diagonal(&Vector3::from(evals)) * frame.transpose();
    [d[(0, 0)], d[(1, 1)], d[(2, 2)], d[(0, 1)], d[(0, 2)], d[(1, 2)]]
}

/// Tensor with `evals[0]` along `dir`; the other two axes are an
/// arbitrary orthonormal completion.
pub fn tensor_along(evals: [f64; 3], dir: [f64; 3]) -> [f64; 6] {
    let e1 = Vector3::from(dir).normalize();
    let helper = if e1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e2 = e1.cross(&helper).normalize();
    let e3 = e1.cross(&e2);
    tensor_from_frame(evals, &Matrix3::from_columns(&[e1, e2, e3]))
}

impl TensorField {
    pub fn from_fn(shape: [usize; 3], f: impl Fn([usize; 3]) -> ([f64; 6], f64)) -> Self {
        let mut tensors = Array4::zeros((shape[0], shape[1], shape[2], 6));
        let mut s0 = Array3::zeros(shape);
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    let (t, s) = f([x, y, z]);
                    for (i, v) in t.into_iter().enumerate() {
                        tensors[[x, y, z, i]] = v;
                    }
                    s0[[x, y, z]] = s;
                }
            }
        }
        Self { tensors, s0 }
    }

    pub fn isotropic(shape: [usize; 3], d: f64, s0: f64) -> Self {
        Self::from_fn(shape, |_| ([d, d, d, 0.0, 0.0, 0.0], s0))
    }

    /// Smooth brain-like field: a free-water core, a ring of fibres circling
    /// the z axis with slowly tilting orientation, and isotropic tissue
    /// outside, blended with smooth weights; `S₀` varies gently in space.
    pub fn smooth_brain(shape: [usize; 3]) -> Self {
        let c = shape.map(|n| (n as f64 - 1.0) / 2.0);
        let half = shape.map(|n| (n as f64 / 2.0).max(1.0));
        Self::from_fn(shape, |[x, y, z]| {
            let u = [(x as f64 - c[0]) / half[0], (y as f64 - c[1]) / half[1], (z as f64 - c[2]) / half[2]];
            let r = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let smooth = |t: f64| 0.5 * (1.0 + (t * 6.0).tanh());
            let w_csf = 1.0 - smooth((r - 0.25) * 4.0);
            let w_gm = smooth((r - 0.8) * 4.0);
            let w_wm = (1.0 - w_csf - w_gm).max(0.0);
            let tilt = 0.6 * u[2];
            let dir = [-u[1] * tilt.cos(), u[0] * tilt.cos(), r.max(1e-3) * tilt.sin()];
            let wm = if r > 1e-9 {
                tensor_along([1.7e-3, 0.3e-3, 0.3e-3], dir)
            } else {
                [0.77e-3, 0.77e-3, 0.77e-3, 0.0, 0.0, 0.0]
            };
            let iso = |d: f64| [d, d, d, 0.0, 0.0, 0.0];
            let csf = iso(2.5e-3);
            let gm = iso(0.8e-3);
            let t: [f64; 6] = std::array::from_fn(|i| w_csf * csf[i] + w_wm * wm[i] + w_gm * gm[i]);
            let s0 = 1000.0 * (1.0 + 0.15 * (1.3 * u[0]).sin() + 0.1 * (0.9 * u[1] + 0.5 * u[2]).cos()) + 300.0 * w_csf;
            (t, s0)
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.s0.shape();
        [s[0], s[1], s[2]]
    }
}

/// `S = S₀·exp(−b gᵀDg)`, optionally with Rician noise
/// `√((S + ε₁)² + ε₂²)`, `ε ~ N(0, σ²)`, drawn per voxel from `seed`.
pub fn make_phantom(field: &TensorField, gtab: &GradientTable, noise_sigma: f64, seed: u64) -> Result<DiffusionVolume> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(arg_err!("noise sigma must be >= 0"));
    }
    let shape = field.shape();
    let [nx, ny, nz] = shape;
    let n = gtab.len();
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let voxels: Vec<[usize; 3]> = (0..nz)
        .flat_map(|z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
        .collect();
    let signals: Vec<Vec<f64>> = voxels
        .par_iter()
        .map(|&p| {
            let [x, y, z] = p;
            let t = |i| field.tensors[[x, y, z, i]];
            let s0 = field.s0[p];
            let mut r = rng::salted(seed, rng::salt::PHANTOM, voxel_id(p, shape));
            (0..n)
                .map(|v| {
                    let b = gtab.bvals()[v];
                    let g = gtab.bvecs()[v];
                    let q = t(0) * g[0] * g[0]
                        + t(1) * g[1] * g[1]
                        + t(2) * g[2] * g[2]
                        + 2.0 * (t(3) * g[0] * g[1] + t(4) * g[0] * g[2] + t(5) * g[1] * g[2]);
                    let s = s0 * (-b * q).exp();
                    if noise_sigma > 0.0 {
                        let (e1, e2) = (noise.sample(&mut r), noise.sample(&mut r));
                        ((s + e1).powi(2) + e2 * e2).sqrt()
                    } else {
                        s
                    }
                })
                .collect()
        })
        .collect();
    let mut data = Array4::zeros((nx, ny, nz, n));
    for (&[x, y, z], s) in voxels.iter().zip(signals) {
        for (v, val) in s.into_iter().enumerate() {
            data[[x, y, z, v]] = val;
        }
    }
    DiffusionVolume::from_data(data)
}
