//! Spatial-angular blocks: each non-b0 DWI is grouped with one b0 image and its
//! closest directions on the sphere, and every s×s×s window of that block is
//! vectorized into one column of the patch matrix. Reassembly puts reconstructed
//! columns back and averages overlaps.

use nalgebra::DMatrix;
use ndarray::{Array3, Array4, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng;
use crate::volume::{BrainMask, DiffusionVolume, GradientTable};

/// Columns whose standard deviation is at or below this keep a scale of 1.
pub const MIN_PATCH_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchConfig {
    /// Edge length `s` of the cubic spatial window.
    pub spatial_size: usize,
    /// Angular neighbours `A` added next to the centre DWI.
    pub n_neighbors: usize,
    pub include_b0: bool,
    pub stride: usize,
    /// Keep only patches lying entirely inside the mask (default: any overlap).
    pub full_inclusion: bool,
    /// Seed for the per-block b0 draw.
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            spatial_size: 3,
            n_neighbors: 5,
            include_b0: true,
            stride: 1,
            full_inclusion: false,
            seed: 0,
        }
    }
}

impl PatchConfig {
    /// Channels per block: optional b0, the centre DWI and its neighbours.
    pub fn channels(&self) -> usize {
        self.n_neighbors + 1 + usize::from(self.include_b0)
    }

    pub fn patch_shape(&self) -> PatchShape {
        PatchShape {
            size: self.spatial_size,
            channels: self.channels(),
        }
    }

    pub fn validate(&self, gtab: &GradientTable) -> Result<()> {
        if self.spatial_size == 0 {
            return Err(arg_err!("patch size must be >= 1"));
        }
        if self.stride == 0 {
            return Err(arg_err!("stride must be >= 1"));
        }
        let n_dwi = gtab.dwi_indices().len();
        if n_dwi == 0 {
            return Err(arg_err!("gradient table has no diffusion-weighted volume"));
        }
        if self.n_neighbors + 1 > n_dwi {
            return Err(arg_err!(
                "{} angular neighbours requested but only {} DWIs exist",
                self.n_neighbors,
                n_dwi
            ));
        }
        Ok(())
    }
}

/// Geometry of one vectorized block: `size³` voxels times `channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[usize; 4]", try_from = "[usize; 4]")]
pub struct PatchShape {
    pub size: usize,
    pub channels: usize,
}

impl PatchShape {
    pub fn voxels(&self) -> usize {
        self.size.pow(3)
    }

    /// Column length m = s³·C.
    pub fn len(&self) -> usize {
        self.voxels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row of voxel `(i, j, k)` of channel `c`; x runs fastest.
    pub fn row(&self, c: usize, [i, j, k]: [usize; 3]) -> usize {
        let s = self.size;
        c * s * s * s + i + s * (j + s * k)
    }
}

impl From<PatchShape> for [usize; 4] {
    fn from(p: PatchShape) -> Self {
        [p.size, p.size, p.size, p.channels]
    }
}

impl TryFrom<[usize; 4]> for PatchShape {
    type Error = String;

    fn try_from(a: [usize; 4]) -> Result<Self, String> {
        if a[0] != a[1] || a[1] != a[2] {
            return Err(format!("patch shape {a:?} is not cubic"));
        }
        Ok(PatchShape {
            size: a[0],
            channels: a[3],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    /// Lowest-index corner of the window.
    pub corner: [usize; 3],
    /// Index into [`PatchSet::blocks`].
    pub block: usize,
}

/// The patch matrix Ω plus everything needed to undo the vectorization.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// m×n, one column per block window, each scaled to unit variance.
    pub matrix: DMatrix<f64>,
    pub scales: Vec<f64>,
    /// Per-volume means (over the mask) subtracted before extraction.
    pub volume_means: Vec<f64>,
    pub origins: Vec<PatchOrigin>,
    /// Volume indices making up each block, in channel order.
    pub blocks: Vec<Vec<usize>>,
    pub patch_shape: PatchShape,
    /// Spatial shape of the source volume.
    pub spatial_shape: [usize; 3],
}

impl PatchSet {
    pub fn n_patches(&self) -> usize {
        self.matrix.ncols()
    }
}

fn angle(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
    dot.abs().min(1.0).acos()
}

/// The `count` non-b0 volumes closest to `center` on the sphere, treating
/// antipodal directions as identical. Ties go to the lower index.
pub fn angular_neighbors(gtab: &GradientTable, center: usize, count: usize) -> Result<Vec<usize>> {
    if center >= gtab.len() || gtab.is_b0(center) {
        return Err(arg_err!("volume {center} is not a diffusion-weighted volume"));
    }
    let others: Vec<usize> = gtab.dwi_indices().into_iter().filter(|&i| i != center).collect();
    if count > others.len() {
        return Err(arg_err!(
            "{count} neighbours requested but only {} other DWIs exist",
            others.len()
        ));
    }
    let c = gtab.bvecs()[center];
    let mut ranked: Vec<(f64, usize)> = others.iter().map(|&i| (angle(&c, &gtab.bvecs()[i]), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(count).map(|(_, i)| i).collect())
}

/// Block channel lists, one per non-b0 volume.
pub fn build_blocks(gtab: &GradientTable, cfg: &PatchConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate(gtab)?;
    let b0s = gtab.b0_indices();
    let mut draw = rng::salted(cfg.seed, rng::salt::BLOCK_B0, 0);
    gtab.dwi_indices()
        .into_iter()
        .map(|d| {
            let mut block = Vec::with_capacity(cfg.channels());
            if cfg.include_b0 {
                block.push(b0s[draw.random_range(0..b0s.len())]);
            }
            block.push(d);
            block.extend(angular_neighbors(gtab, d, cfg.n_neighbors)?);
            Ok(block)
        })
        .collect()
}

fn window_positions(spatial: [usize; 3], cfg: &PatchConfig, mask: &BrainMask) -> Vec<[usize; 3]> {
    let s = cfg.spatial_size;
    let steps = |n: usize| (0..=n - s).step_by(cfg.stride);
    let m = mask.array();
    let mut out = Vec::new();
    for k in steps(spatial[2]) {
        for j in steps(spatial[1]) {
            for i in steps(spatial[0]) {
                let window = m.slice(ndarray::s![i..i + s, j..j + s, k..k + s]);
                let keep = if cfg.full_inclusion {
                    window.iter().all(|&v| v)
                } else {
                    window.iter().any(|&v| v)
                };
                if keep {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Per-volume mean over the mask.
pub fn masked_means(vol: &DiffusionVolume, mask: &BrainMask) -> Vec<f64> {
    let n = mask.count() as f64;
    (0..vol.n_volumes())
        .map(|v| {
            vol.channel(v)
                .iter()
                .zip(mask.array().iter())
                .filter(|(_, &m)| m)
                .map(|(x, _)| *x)
                .sum::<f64>()
                / n
        })
        .collect()
}

pub fn extract_patches(
    vol: &DiffusionVolume,
    gtab: &GradientTable,
    mask: &BrainMask,
    cfg: &PatchConfig,
) -> Result<PatchSet> {
    if gtab.len() != vol.n_volumes() {
        return Err(arg_err!(
            "gradient table has {} entries for {} volumes",
            gtab.len(),
            vol.n_volumes()
        ));
    }
    let spatial = vol.spatial_shape();
    if mask.shape() != spatial {
        return Err(arg_err!("mask shape {:?} != volume shape {spatial:?}", mask.shape()));
    }
    let s = cfg.spatial_size;
    if spatial.iter().any(|&d| d < s) {
        return Err(arg_err!("volume {spatial:?} smaller than patch size {s}"));
    }
    let blocks = build_blocks(gtab, cfg)?;
    let volume_means = masked_means(vol, mask);
    let positions = window_positions(spatial, cfg, mask);
    if positions.is_empty() {
        return Err(Error::Extraction("no patch intersects the mask".into()));
    }

    let mut centered = vol.data().clone();
    for (v, mut ch) in centered.axis_iter_mut(Axis(3)).enumerate() {
        ch -= volume_means[v];
    }

    let shape = cfg.patch_shape();
    let m = shape.len();
    let origins: Vec<PatchOrigin> = (0..blocks.len())
        .flat_map(|b| positions.iter().map(move |&corner| PatchOrigin { corner, block: b }))
        .collect();
    let n = origins.len();

    let mut values = vec![0.0; m * n];
    let scales: Vec<f64> = values
        .par_chunks_mut(m)
        .zip(origins.par_iter())
        .map(|(col, o)| {
            let [i0, j0, k0] = o.corner;
            for (c, &v) in blocks[o.block].iter().enumerate() {
                for k in 0..s {
                    for j in 0..s {
                        for i in 0..s {
                            col[shape.row(c, [i, j, k])] = centered[[i0 + i, j0 + j, k0 + k, v]];
                        }
                    }
                }
            }
            let mean = col.iter().sum::<f64>() / m as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let std = var.sqrt();
            if std > MIN_PATCH_STD {
                col.iter_mut().for_each(|x| *x /= std);
                std
            } else {
                1.0
            }
        })
        .collect();

    Ok(PatchSet {
        matrix: DMatrix::from_vec(m, n, values),
        scales,
        volume_means,
        origins,
        blocks,
        patch_shape: shape,
        spatial_shape: spatial,
    })
}

/// Puts reconstructed columns back on a voxel grid, possibly of another
/// resolution. `place` maps a source corner to its target corner and
/// `out_shape` is the target patch geometry (same channel count).
pub fn reassemble_mapped(
    patches: &PatchSet,
    reconstructed: &DMatrix<f64>,
    target_shape: [usize; 4],
    out_shape: PatchShape,
    place: impl Fn([usize; 3]) -> [usize; 3] + Sync,
) -> Result<DiffusionVolume> {
    if reconstructed.ncols() != patches.n_patches() || reconstructed.nrows() != out_shape.len() {
        return Err(arg_err!(
            "reconstruction is {}x{}, expected {}x{}",
            reconstructed.nrows(),
            reconstructed.ncols(),
            out_shape.len(),
            patches.n_patches()
        ));
    }
    if out_shape.channels != patches.patch_shape.channels {
        return Err(arg_err!("channel count changed during reconstruction"));
    }
    let n_vol = target_shape[3];
    if n_vol != patches.volume_means.len() {
        return Err(arg_err!(
            "target has {n_vol} volumes, patches came from {}",
            patches.volume_means.len()
        ));
    }
    let spatial = [target_shape[0], target_shape[1], target_shape[2]];
    let s = out_shape.size;
    let corners: Vec<[usize; 3]> = patches.origins.iter().map(|o| place(o.corner)).collect();
    if let Some(c) = corners.iter().find(|c| (0..3).any(|a| c[a] + s > spatial[a])) {
        return Err(arg_err!("patch at {c:?} does not fit in {spatial:?}"));
    }

    // (column index, channel within block) for every contribution to volume v
    let mut by_volume: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_vol];
    for (col, o) in patches.origins.iter().enumerate() {
        for (c, &v) in patches.blocks[o.block].iter().enumerate() {
            by_volume[v].push((col, c));
        }
    }

    // Each volume is reduced by one task in column order, so the sums do not
    // depend on the number of workers.
    let channels: Vec<Array3<f64>> = by_volume
        .par_iter()
        .enumerate()
        .map(|(v, contribs)| {
            // Neumaier-compensated sums keep the average within a few ulps
            let mut sum = Array3::<f64>::zeros(spatial);
            let mut comp = Array3::<f64>::zeros(spatial);
            let mut count = Array3::<u32>::zeros(spatial);
            for &(col, c) in contribs {
                let scale = patches.scales[col];
                let [i0, j0, k0] = corners[col];
                let column = reconstructed.column(col);
                for k in 0..s {
                    for j in 0..s {
                        for i in 0..s {
                            let p = [i0 + i, j0 + j, k0 + k];
                            let x = column[out_shape.row(c, [i, j, k])] * scale;
                            let t = sum[p] + x;
                            comp[p] += if sum[p].abs() >= x.abs() { (sum[p] - t) + x } else { (x - t) + sum[p] };
                            sum[p] = t;
                            count[p] += 1;
                        }
                    }
                }
            }
            let mean = patches.volume_means[v];
            ndarray::Zip::from(&mut sum).and(&comp).and(&count).for_each(|s, &e, &n| {
                *s = if n > 0 { (*s + e) / n as f64 + mean } else { mean };
            });
            sum
        })
        .collect();

    let mut out = Array4::<f64>::zeros(target_shape);
    for (v, ch) in channels.into_iter().enumerate() {
        out.index_axis_mut(Axis(3), v).assign(&ch);
    }
    DiffusionVolume::from_data(out)
}

/// Inverse of [`extract_patches`] on the original grid.
pub fn reassemble(
    patches: &PatchSet,
    reconstructed: &DMatrix<f64>,
    target_shape: [usize; 4],
) -> Result<DiffusionVolume> {
    if reconstructed.shape() != patches.matrix.shape() {
        return Err(arg_err!(
            "reconstruction shape {:?} != patch matrix shape {:?}",
            reconstructed.shape(),
            patches.matrix.shape()
        ));
    }
    reassemble_mapped(patches, reconstructed, target_shape, patches.patch_shape, |c| c)
}
