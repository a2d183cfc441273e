//! Scalar maps compared across scanners: ADC and FA from a log-linear tensor
//! fit, RISH features from a spherical-harmonics fit.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use ndarray::{Array3, Array4};
use rayon::prelude::*;

use crate::error::{arg_err, Error, Result};
use crate::sh;
use crate::volume::{BrainMask, DiffusionVolume, GradientTable};

/// Signals at or below zero are raised to this before taking the log.
pub const MIN_SIGNAL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

/// Per-voxel tensors stored as `[Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]`; zero outside
/// the mask.
#[derive(Debug, Clone)]
pub struct TensorFit {
    pub tensors: Array4<f64>,
    pub log_s0: Array3<f64>,
    pub mask: BrainMask,
}

impl TensorFit {
    pub fn tensor(&self, [x, y, z]: [usize; 3]) -> Matrix3<f64> {
        let t = |i| self.tensors[[x, y, z, i]];
        Matrix3::new(t(0), t(3), t(4), t(3), t(1), t(5), t(4), t(5), t(2))
    }
}

/// Per-voxel real even SH coefficients up to `order`.
#[derive(Debug, Clone)]
pub struct ShFit {
    pub coefficients: Array4<f64>,
    pub order: usize,
    pub mask: BrainMask,
}

fn check_inputs(vol: &DiffusionVolume, gtab: &GradientTable, mask: &BrainMask) -> Result<()> {
    if gtab.len() != vol.n_volumes() {
        return Err(arg_err!(
            "gradient table has {} entries for {} volumes",
            gtab.len(),
            vol.n_volumes()
        ));
    }
    if mask.shape() != vol.spatial_shape() {
        return Err(arg_err!(
            "mask shape {:?} != volume shape {:?}",
            mask.shape(),
            vol.spatial_shape()
        ));
    }
    Ok(())
}

/// `(XᵀX + reg)⁻¹Xᵀ`, or an error when the system is rank deficient.
fn solver(x: &DMatrix<f64>, reg: Option<&DVector<f64>>, what: &str) -> Result<DMatrix<f64>> {
    let mut normal = x.transpose() * x;
    if let Some(r) = reg {
        for (i, v) in r.iter().enumerate() {
            normal[(i, i)] += v;
        }
    }
    let eig = SymmetricEigen::new(normal.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0) || eig.eigenvalues.min() <= RANK_TOL * max {
        return Err(Error::Fit(format!("{what}: design matrix is rank deficient")));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Fit(format!("{what}: normal equations are not positive definite")))?;
    Ok(chol.solve(&x.transpose()))
}

fn masked_voxels(mask: &BrainMask) -> Vec<[usize; 3]> {
    mask.array()
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|((x, y, z), _)| [x, y, z])
        .collect()
}

/// Applies `solve` to the selected channels of every masked voxel.
fn voxelwise(
    vol: &DiffusionVolume,
    mask: &BrainMask,
    channels: &[usize],
    width: usize,
    solve: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> Array4<f64> {
    let data = vol.data();
    let voxels = masked_voxels(mask);
    let fitted: Vec<Vec<f64>> = voxels
        .par_iter()
        .map(|&[x, y, z]| {
            let s: Vec<f64> = channels.iter().map(|&v| data[[x, y, z, v]]).collect();
            solve(&s)
        })
        .collect();
    let [nx, ny, nz] = vol.spatial_shape();
    let mut out = Array4::zeros((nx, ny, nz, width));
    for ([x, y, z], f) in voxels.iter().zip(fitted) {
        for (i, v) in f.into_iter().enumerate() {
            out[[*x, *y, *z, i]] = v;
        }
    }
    out
}

/// Ordinary least squares on the log signal.
pub fn fit_dti(vol: &DiffusionVolume, gtab: &GradientTable, mask: &BrainMask) -> Result<TensorFit> {
    check_inputs(vol, gtab, mask)?;
    let n_dwi = gtab.dwi_indices().len();
    if gtab.b0_indices().is_empty() || n_dwi < 6 {
        return Err(Error::Fit(format!(
            "tensor fit needs at least 6 diffusion directions and a b0, got {n_dwi} directions"
        )));
    }
    let n = gtab.len();
    let design = DMatrix::from_fn(n, 7, |r, c| {
        let b = gtab.bvals()[r];
        let g = gtab.bvecs()[r];
        match c {
            0 => 1.0,
            1 => -b * g[0] * g[0],
            2 => -b * g[1] * g[1],
            3 => -b * g[2] * g[2],
            4 => -2.0 * b * g[0] * g[1],
            5 => -2.0 * b * g[0] * g[2],
            _ => -2.0 * b * g[1] * g[2],
        }
    });
    let pinv = solver(&design, None, &format!("tensor fit over {n_dwi} directions"))?;
    let all: Vec<usize> = (0..n).collect();
    let fitted = voxelwise(vol, mask, &all, 7, |s| {
        let y = DVector::from_iterator(s.len(), s.iter().map(|&v| v.max(MIN_SIGNAL).ln()));
        (&pinv * y).iter().copied().collect()
    });
    let log_s0 = fitted.index_axis(ndarray::Axis(3), 0).to_owned();
    let tensors = fitted.slice(ndarray::s![.., .., .., 1..]).to_owned();
    Ok(TensorFit {
        tensors,
        log_s0,
        mask: mask.clone(),
    })
}

fn tensor_map(fit: &TensorFit, f: impl Fn(Matrix3<f64>) -> f64 + Sync) -> Array3<f64> {
    let voxels = masked_voxels(&fit.mask);
    let values: Vec<f64> = voxels.par_iter().map(|&p| f(fit.tensor(p))).collect();
    let mut out = Array3::zeros(fit.mask.shape());
    for (p, v) in voxels.iter().zip(values) {
        out[*p] = v;
    }
    out
}

/// Mean diffusivity `trace(D)/3`.
pub fn adc(fit: &TensorFit) -> Array3<f64> {
    tensor_map(fit, |d| d.trace() / 3.0)
}

/// FA from the eigenvalues, given as a free function for direct use.
pub fn fa_from_eigenvalues(l: [f64; 3]) -> f64 {
    let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mean = (l[0] + l[1] + l[2]) / 3.0;
    let dev = ((l[0] - mean).powi(2) + (l[1] - mean).powi(2) + (l[2] - mean).powi(2)).sqrt();
    ((1.5f64).sqrt() * dev / norm).clamp(0.0, 1.0)
}

pub fn fa(fit: &TensorFit) -> Array3<f64> {
    tensor_map(fit, |d| {
        let e = d.symmetric_eigenvalues();
        fa_from_eigenvalues([e[0], e[1], e[2]])
    })
}

/// Least-squares SH fit of the diffusion-weighted channels. `laplace_beltrami`
/// weights the `l²(l+1)²` smoothness penalty (0 disables it).
pub fn fit_sh(
    vol: &DiffusionVolume,
    gtab: &GradientTable,
    mask: &BrainMask,
    order: usize,
    laplace_beltrami: f64,
) -> Result<ShFit> {
    check_inputs(vol, gtab, mask)?;
    if order % 2 == 1 {
        return Err(arg_err!("SH order must be even, got {order}"));
    }
    if !(laplace_beltrami >= 0.0 && laplace_beltrami.is_finite()) {
        return Err(arg_err!("Laplace-Beltrami weight must be >= 0"));
    }
    let dwi = gtab.dwi_indices();
    let n_coef = sh::n_coefficients(order);
    if dwi.len() < n_coef {
        return Err(Error::Fit(format!(
            "order {order} needs {n_coef} directions, only {} are available",
            dwi.len()
        )));
    }
    let rows: Vec<Vec<f64>> = dwi.iter().map(|&v| sh::basis_row(order, gtab.bvecs()[v])).collect();
    let design = DMatrix::from_fn(dwi.len(), n_coef, |r, c| rows[r][c]);
    let reg = (laplace_beltrami > 0.0).then(|| {
        let mut r = DVector::zeros(n_coef);
        for l in (0..=order).step_by(2) {
            let pen = (l * l * (l + 1) * (l + 1)) as f64;
            for j in sh::order_offset(l)..sh::order_offset(l) + 2 * l + 1 {
                r[j] = laplace_beltrami * pen;
            }
        }
        r
    });
    let pinv = solver(&design, reg.as_ref(), &format!("order-{order} SH fit"))?;
    let coefficients = voxelwise(vol, mask, &dwi, n_coef, |s| {
        (&pinv * DVector::from_column_slice(s)).iter().copied().collect()
    });
    Ok(ShFit {
        coefficients,
        order,
        mask: mask.clone(),
    })
}

/// `Σ_m c_{l,m}²` per voxel.
pub fn rish(fit: &ShFit, l: usize) -> Result<Array3<f64>> {
    if l % 2 == 1 || l > fit.order {
        return Err(arg_err!("RISH order {l} must be even and at most {}", fit.order));
    }
    let start = sh::order_offset(l);
    let c = fit.coefficients.slice(ndarray::s![.., .., .., start..start + 2 * l + 1]);
    Ok(c.map_axis(ndarray::Axis(3), |v| v.iter().map(|x| x * x).sum()))
}

/// The four maps written by the `metrics` command.
#[derive(Debug, Clone)]
pub struct MetricMaps {
    pub adc: Array3<f64>,
    pub fa: Array3<f64>,
    pub rish0: Array3<f64>,
    pub rish2: Array3<f64>,
}

impl MetricMaps {
    pub const NAMES: [&'static str; 4] = ["adc", "fa", "rish0", "rish2"];

    pub fn get(&self, name: &str) -> Option<&Array3<f64>> {
        match name {
            "adc" => Some(&self.adc),
            "fa" => Some(&self.fa),
            "rish0" => Some(&self.rish0),
            "rish2" => Some(&self.rish2),
            _ => None,
        }
    }
}

pub fn compute_all(
    vol: &DiffusionVolume,
    gtab: &GradientTable,
    mask: &BrainMask,
    sh_order: usize,
    laplace_beltrami: f64,
) -> Result<MetricMaps> {
    let t = fit_dti(vol, gtab, mask)?;
    let s = fit_sh(vol, gtab, mask, sh_order.max(2), laplace_beltrami)?;
    Ok(MetricMaps {
        adc: adc(&t),
        fa: fa(&t),
        rish0: rish(&s, 0)?,
        rish2: rish(&s, 2)?,
    })
}
