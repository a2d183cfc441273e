//! Training a target dictionary from one or several scanners and reconstructing
//! source data against it, optionally at a finer spatial resolution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{self, Dictionary, Provenance, TrainConfig, Trainer};
use crate::error::{arg_err, Result};
use crate::lasso::{PathConfig, SparseCode, SparseCoder};
use crate::patching::{extract_patches, reassemble_mapped, PatchConfig, PatchSet, PatchShape};
use crate::volume::{BrainMask, DiffusionVolume, GradientTable};

/// One acquisition: data, its gradient table and a brain mask.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub volume: DiffusionVolume,
    pub gtab: GradientTable,
    pub mask: BrainMask,
}

impl Dataset {
    pub fn patches(&self, cfg: &PatchConfig) -> Result<PatchSet> {
        extract_patches(&self.volume, &self.gtab, &self.mask, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsample {
    /// Trilinear interpolation at cell centres.
    #[default]
    Trilinear,
    /// Area-weighted box average.
    Mean,
}

impl std::str::FromStr for Downsample {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trilinear" | "linear" => Ok(Downsample::Trilinear),
            "mean" | "meanpool" | "mean-pool" => Ok(Downsample::Mean),
            _ => Err(arg_err!("unknown downsampling method {s:?} (trilinear|mean)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonizeConfig {
    pub patch_cfg: PatchConfig,
    pub path_cfg: PathConfig,
    /// Per-axis resolution ratio (target voxels per source voxel).
    pub upsample_ratio: Option<[f64; 3]>,
    pub downsample: Downsample,
    pub rng_seed: u64,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        Self {
            patch_cfg: PatchConfig::default(),
            path_cfg: PathConfig::default(),
            upsample_ratio: None,
            downsample: Downsample::default(),
            rng_seed: 0,
        }
    }
}

impl HarmonizeConfig {
    fn seeded(&self) -> (PatchConfig, PathConfig) {
        (
            PatchConfig {
                seed: self.rng_seed,
                ..self.patch_cfg
            },
            PathConfig {
                rng_seed: self.rng_seed,
                ..self.path_cfg
            },
        )
    }

    /// Patch edge length on the output grid.
    pub fn target_patch_size(&self) -> Result<usize> {
        let s = self.patch_cfg.spatial_size;
        match self.upsample_ratio {
            None => Ok(s),
            Some(r) => {
                check_ratio(r)?;
                let sizes = r.map(|ra| (ra * s as f64).round() as usize);
                if sizes[0] != sizes[1] || sizes[1] != sizes[2] {
                    return Err(arg_err!(
                        "ratio {r:?} maps the {s}-voxel patch to the non-cubic {sizes:?}"
                    ));
                }
                Ok(sizes[0])
            }
        }
    }
}

fn check_ratio(r: [f64; 3]) -> Result<()> {
    if r.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(arg_err!("resolution ratio must be positive, got {r:?}"));
    }
    Ok(())
}

/// Parses `"5/3"`, `"1.5"` or a per-axis `"5/3,5/3,5/3"`.
pub fn parse_ratio(text: &str) -> Result<[f64; 3]> {
    let one = |t: &str| -> Result<f64> {
        let t = t.trim();
        let v = match t.split_once('/') {
            Some((n, d)) => {
                let n: f64 = n.trim().parse().map_err(|_| arg_err!("bad ratio {text:?}"))?;
                let d: f64 = d.trim().parse().map_err(|_| arg_err!("bad ratio {text:?}"))?;
                n / d
            }
            None => t.parse().map_err(|_| arg_err!("bad ratio {text:?}"))?,
        };
        Ok(v)
    };
    let parts: Vec<&str> = text.split(',').collect();
    let r = match parts.as_slice() {
        [a] => [one(a)?; 3],
        [a, b, c] => [one(a)?, one(b)?, one(c)?],
        _ => return Err(arg_err!("ratio needs one or three components, got {text:?}")),
    };
    check_ratio(r)?;
    Ok(r)
}

/// Pools the patches of every dataset into one Ω and trains on it.
pub fn train_target_dictionary(datasets: &[Dataset], patch_cfg: &PatchConfig, train_cfg: &TrainConfig) -> Result<Dictionary> {
    let (omega, shape) = pooled_patches(datasets, patch_cfg)?;
    let ids = datasets.iter().map(|d| d.id.clone()).collect();
    let mut t = Trainer::new(&omega, shape, *train_cfg)?.with_sources(ids);
    while !t.is_done() {
        t.step()?;
    }
    t.into_dictionary()
}

/// Concatenated patch matrix of all datasets, in dataset order.
pub fn pooled_patches(datasets: &[Dataset], patch_cfg: &PatchConfig) -> Result<(DMatrix<f64>, PatchShape)> {
    if datasets.is_empty() {
        return Err(arg_err!("at least one dataset is required"));
    }
    let sets = datasets
        .iter()
        .map(|d| d.patches(patch_cfg))
        .collect::<Result<Vec<_>>>()?;
    let shape = sets[0].patch_shape;
    if let Some((i, s)) = sets.iter().enumerate().find(|(_, s)| s.patch_shape != shape) {
        return Err(arg_err!(
            "dataset {} yields {:?} patches, dataset {} yields {:?}",
            datasets[i].id,
            <[usize; 4]>::from(s.patch_shape),
            datasets[0].id,
            <[usize; 4]>::from(shape)
        ));
    }
    if sets.len() == 1 {
        return Ok((sets.into_iter().next().unwrap().matrix, shape));
    }
    let n: usize = sets.iter().map(|s| s.n_patches()).sum();
    let mut omega = DMatrix::zeros(shape.len(), n);
    let mut at = 0;
    for s in &sets {
        omega.columns_mut(at, s.n_patches()).copy_from(&s.matrix);
        at += s.n_patches();
    }
    Ok((omega, shape))
}

/// `to × from` matrix resampling one axis of a cube of `from` samples.
fn axis_weights(from: usize, to: usize, method: Downsample) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(to, from);
    let step = from as f64 / to as f64;
    match method {
        Downsample::Trilinear => {
            for i in 0..to {
                let u = ((i as f64 + 0.5) * step - 0.5).clamp(0.0, (from - 1) as f64);
                let lo = u.floor() as usize;
                let t = u - lo as f64;
                w[(i, lo)] += 1.0 - t;
                if t > 0.0 {
                    w[(i, lo + 1)] += t;
                }
            }
        }
        Downsample::Mean => {
            for i in 0..to {
                let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
                for j in 0..from {
                    let overlap = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
                    w[(i, j)] = overlap / step;
                }
            }
        }
    }
    w
}

/// Resizes every atom's spatial block to `size³`, channel by channel. Atoms are
/// left unnormalized so a code fitted against the result also applies to `d`.
pub fn downsample_dictionary(d: &Dictionary, size: usize, method: Downsample) -> Result<Dictionary> {
    let from = d.patch_shape();
    if size == 0 || size > from.size {
        return Err(arg_err!("cannot resize {}-voxel atoms to {size}", from.size));
    }
    if size == from.size {
        return Ok(d.clone());
    }
    let to = PatchShape {
        size,
        channels: from.channels,
    };
    let w = axis_weights(from.size, size, method);
    let (s, t) = (from.size, size);
    let mut atoms = DMatrix::zeros(to.len(), d.p());
    for (col, atom) in atoms.column_iter_mut().zip(d.atoms().column_iter()) {
        let mut col = col;
        for c in 0..from.channels {
            for k in 0..t {
                for j in 0..t {
                    for i in 0..t {
                        let mut v = 0.0;
                        for kk in 0..s {
                            let wk = w[(k, kk)];
                            if wk == 0.0 {
                                continue;
                            }
                            for jj in 0..s {
                                let wjk = wk * w[(j, jj)];
                                if wjk == 0.0 {
                                    continue;
                                }
                                for ii in 0..s {
                                    v += wjk * w[(i, ii)] * atom[from.row(c, [ii, jj, kk])];
                                }
                            }
                        }
                        col[to.row(c, [i, j, k])] = v;
                    }
                }
            }
        }
    }
    Dictionary::new(
        atoms,
        to,
        false,
        Provenance {
            resampled_from: Some(from.into()),
            ..d.provenance.clone()
        },
    )
}

/// Sparse codes of every column of `patches`, in column order.
pub fn code_patches(coder: &SparseCoder, patches: &DMatrix<f64>, cfg: &PathConfig) -> Result<Vec<SparseCode>> {
    dictionary::code_batch(coder, patches, cfg, 0)
}

/// `D·α` for every code.
pub fn reconstruct(d: &DMatrix<f64>, codes: &[SparseCode]) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = codes.par_iter().map(|c| d * &c.alpha).collect();
    if cols.is_empty() {
        return DMatrix::zeros(d.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Codes the source patches against `coding` and rebuilds them with `output`,
/// using the same coefficients for both.
pub fn code_and_reconstruct(
    patches: &DMatrix<f64>,
    coding: &DMatrix<f64>,
    output: &DMatrix<f64>,
    cfg: &PathConfig,
) -> Result<(DMatrix<f64>, Vec<SparseCode>)> {
    if coding.ncols() != output.ncols() {
        return Err(arg_err!(
            "coding dictionary has {} atoms, output dictionary {}",
            coding.ncols(),
            output.ncols()
        ));
    }
    let coder = SparseCoder::new(coding.clone());
    let codes = code_patches(&coder, patches, cfg)?;
    Ok((reconstruct(output, &codes), codes))
}

/// Output shape of an upsampled volume.
pub fn upsampled_shape(spatial: [usize; 3], ratio: [f64; 3]) -> [usize; 3] {
    std::array::from_fn(|a| ((spatial[a] as f64 * ratio[a]).round() as usize).max(1))
}

/// Reconstructs `source` with `d` held fixed.
pub fn harmonize(source: &Dataset, d: &Dictionary, cfg: &HarmonizeConfig) -> Result<DiffusionVolume> {
    let (patch_cfg, path_cfg) = cfg.seeded();
    if patch_cfg.channels() != d.patch_shape().channels {
        return Err(arg_err!(
            "source blocks have {} channels, dictionary atoms {}",
            patch_cfg.channels(),
            d.patch_shape().channels
        ));
    }
    let target_size = cfg.target_patch_size()?;
    if target_size != d.patch_shape().size {
        return Err(arg_err!(
            "source patches map to size {target_size} but the dictionary holds size {}",
            d.patch_shape().size
        ));
    }
    path_cfg.validate()?;
    let patches = source.patches(&patch_cfg)?;
    let [nx, ny, nz, nv] = source.volume.shape();

    let coding = downsample_dictionary(d, patch_cfg.spatial_size, cfg.downsample)?;
    let (recon, _) = code_and_reconstruct(&patches.matrix, coding.atoms(), d.atoms(), &path_cfg)?;

    let out = match cfg.upsample_ratio {
        None => reassemble_mapped(&patches, &recon, [nx, ny, nz, nv], d.patch_shape(), |c| c)?,
        Some(r) => {
            let [ox, oy, oz] = upsampled_shape([nx, ny, nz], r);
            let limit = [ox, oy, oz].map(|n| n.saturating_sub(target_size));
            if [ox, oy, oz].iter().any(|&n| n < target_size) {
                return Err(arg_err!("upsampled volume {:?} is smaller than one patch", [ox, oy, oz]));
            }
            let place = move |c: [usize; 3]| -> [usize; 3] {
                std::array::from_fn(|a| ((c[a] as f64 * r[a]).round() as usize).min(limit[a]))
            };
            reassemble_mapped(&patches, &recon, [ox, oy, oz, nv], d.patch_shape(), place)?
        }
    };
    let voxel = source.volume.voxel_size();
    let ratio = cfg.upsample_ratio.unwrap_or([1.0; 3]);
    Ok(out.with_geometry(
        std::array::from_fn(|a| voxel[a] / ratio[a]),
        rescale_affine(source.volume.affine(), ratio),
    ))
}

/// Affine of a grid refined by `ratio`, keeping the field of view aligned on
/// voxel edges.
pub fn rescale_affine(affine: &[[f64; 4]; 4], ratio: [f64; 3]) -> [[f64; 4]; 4] {
    let mut out = *affine;
    for r in 0..3 {
        let mut shift = 0.0;
        for c in 0..3 {
            out[r][c] = affine[r][c] / ratio[c];
            shift += affine[r][c] * (0.5 / ratio[c] - 0.5);
        }
        out[r][3] = affine[r][3] + shift;
    }
    out
}
