//! Online dictionary learning.
//!
//! Starting from p unit-normalized patches, every iteration draws a mini-batch
//! from Ω, sparse-codes it against the current atoms with per-patch λ selection,
//! folds the codes into the running statistics `A = Σ ααᵀ`, `B = Σ xαᵀ`, and
//! sweeps once over the atoms with the closed-form block-coordinate update.
//!
//! Dictionaries are stored in the `DLD1` container: the 4-byte magic, a
//! little-endian u32 header length, a UTF-8 JSON header and the atoms as
//! little-endian f64 in column-major order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::lasso::{lasso_objective, PathConfig, Selection, SparseCode, SparseCoder};
use crate::patching::{PatchSet, PatchShape};
use crate::rng::{self, Rng};

pub const MAGIC: &[u8; 4] = b"DLD1";
pub const FORMAT_VERSION: u32 = 1;
/// Atoms whose accumulated energy `A_jj` is at or below this are replaced.
pub const DEAD_ATOM: f64 = 1e-10;
const UNIT_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection: Option<Selection>,
    /// Identifiers of the datasets pooled for training.
    pub sources: Vec<String>,
    /// Set on dictionaries derived by resampling another one.
    pub resampled_from: Option<[usize; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    patch_shape: PatchShape,
    unit_norm: bool,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    m: usize,
    p: usize,
    patch_shape: PatchShape,
    unit_norm: bool,
    provenance: Provenance,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>, patch_shape: PatchShape, unit_norm: bool, provenance: Provenance) -> Result<Self> {
        if atoms.nrows() != patch_shape.len() {
            return Err(arg_err!(
                "atoms have {} rows but patch shape {:?} needs {}",
                atoms.nrows(),
                <[usize; 4]>::from(patch_shape),
                patch_shape.len()
            ));
        }
        if atoms.ncols() == 0 {
            return Err(arg_err!("dictionary has no atoms"));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(arg_err!("dictionary contains non-finite values"));
        }
        if unit_norm {
            if let Some((j, c)) = atoms
                .column_iter()
                .enumerate()
                .find(|(_, c)| (c.norm() - 1.0).abs() > UNIT_NORM_TOL)
            {
                return Err(arg_err!("atom {j} has norm {} but unit_norm is set", c.norm()));
            }
        }
        Ok(Self {
            atoms,
            patch_shape,
            unit_norm,
            provenance,
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn patch_shape(&self) -> PatchShape {
        self.patch_shape
    }

    pub fn unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn m(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn p(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            m: self.m(),
            p: self.p(),
            patch_shape: self.patch_shape,
            unit_norm: self.unit_norm,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.atoms.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.atoms.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic: not a DLD1 dictionary".into()));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + h)
            .ok_or_else(|| Error::Format("truncated dictionary header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Format(format!("dictionary header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dictionary version {}", header.version)));
        }
        let n = header
            .m
            .checked_mul(header.p)
            .ok_or_else(|| Error::Format("dictionary size overflows".into()))?;
        let payload = &bytes[8 + h..];
        if payload.len() != 8 * n {
            return Err(Error::Format(format!(
                "dictionary payload has {} bytes, expected {}",
                payload.len(),
                8 * n
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let atoms = DMatrix::from_vec(header.m, header.p, values);
        Self::new(atoms, header.patch_shape, header.unit_norm, header.provenance)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Nonzero columns of Ω, drawn as unit-norm atoms.
pub struct AtomPool<'a> {
    omega: &'a DMatrix<f64>,
    nonzero: Vec<usize>,
}

impl<'a> AtomPool<'a> {
    pub fn new(omega: &'a DMatrix<f64>) -> Result<Self> {
        let nonzero: Vec<usize> = omega
            .column_iter()
            .enumerate()
            .filter(|(_, c)| c.norm_squared() > 0.0)
            .map(|(j, _)| j)
            .collect();
        if nonzero.is_empty() {
            return Err(Error::Initialization("every patch is zero".into()));
        }
        Ok(Self { omega, nonzero })
    }

    pub fn draw(&self, rng: &mut Rng) -> DVector<f64> {
        let j = self.nonzero[rng.random_range(0..self.nonzero.len())];
        self.omega.column(j).normalize()
    }
}

/// p columns drawn uniformly from Ω (with replacement when Ω has fewer than p
/// columns), each scaled to unit norm. Zero columns are never drawn.
pub fn init_atoms(omega: &DMatrix<f64>, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::Initialization("dictionary needs at least one atom".into()));
    }
    if omega.ncols() == 0 {
        return Err(Error::Initialization("empty patch set".into()));
    }
    let pool = AtomPool::new(omega)?;
    let mut rng = rng::salted(seed, rng::salt::TRAIN, u64::MAX);
    let mut atoms = DMatrix::zeros(omega.nrows(), p);
    if omega.ncols() >= p {
        // without replacement; zero draws are redrawn
        let mut picked = rand::seq::index::sample(&mut rng, omega.ncols(), p).into_vec();
        for (k, j) in picked.iter_mut().enumerate() {
            let col = omega.column(*j);
            if col.norm_squared() > 0.0 {
                atoms.set_column(k, &col.normalize());
            } else {
                atoms.set_column(k, &pool.draw(&mut rng));
            }
        }
    } else {
        for k in 0..p {
            atoms.set_column(k, &pool.draw(&mut rng));
        }
    }
    Ok(atoms)
}

pub fn init_dictionary(patches: &PatchSet, p: usize, seed: u64) -> Result<Dictionary> {
    let atoms = init_atoms(&patches.matrix, p, seed)?;
    Dictionary::new(
        atoms,
        patches.patch_shape,
        true,
        Provenance {
            seed,
            ..Default::default()
        },
    )
}

/// One pass of block-coordinate updates over all atoms:
/// `u_j = (B_j − D·A_j)/A_jj + d_j`, `d_j = u_j/‖u_j‖`. Atoms with `A_jj` at or
/// below [`DEAD_ATOM`] (or a vanishing `u_j`) are replaced by fresh patches.
/// Returns how many atoms were replaced.
pub fn dictionary_update(
    atoms: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    replacements: &AtomPool<'_>,
    rng: &mut Rng,
) -> Result<usize> {
    let (m, p) = atoms.shape();
    if a.shape() != (p, p) || b.shape() != (m, p) {
        return Err(arg_err!(
            "accumulators are {:?} and {:?} for a {m}x{p} dictionary",
            a.shape(),
            b.shape()
        ));
    }
    let mut replaced = 0;
    let mut u = DVector::zeros(m);
    for j in 0..p {
        let ajj = a[(j, j)];
        if ajj > DEAD_ATOM {
            // u = (B_j − D A_j)/A_jj + d_j
            u.copy_from(&b.column(j));
            u.gemv(-1.0, atoms, &a.column(j), 1.0);
            u /= ajj;
            u += atoms.column(j);
            let norm = u.norm();
            if norm > 0.0 && norm.is_finite() {
                atoms.set_column(j, &(&u / norm));
                continue;
            }
        }
        atoms.set_column(j, &replacements.draw(rng));
        replaced += 1;
    }
    Ok(replaced)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_iterations: usize,
    pub batch_size: usize,
    /// Number of atoms; twice the column length when unset.
    pub n_atoms: Option<usize>,
    pub path_cfg: PathConfig,
    pub rng_seed: u64,
    /// Factor applied to A and B before each accumulation (1 = plain sums).
    pub accumulator_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iterations: 500,
            batch_size: 32,
            n_atoms: None,
            path_cfg: PathConfig {
                selection: Selection::Cv,
                ..PathConfig::default()
            },
            rng_seed: 0,
            accumulator_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(arg_err!("n_iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(arg_err!("batch_size must be >= 1"));
        }
        if !(self.accumulator_scale > 0.0 && self.accumulator_scale <= 1.0) {
            return Err(arg_err!("accumulator_scale must lie in (0, 1]"));
        }
        self.path_cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: usize,
    /// Mean of `½‖x − Dα‖² + λ‖α‖₁` over the batch, before the update.
    pub batch_objective: f64,
    pub mean_df: f64,
    pub replaced_atoms: usize,
}

/// Codes every column of `batch` with the given atoms, in parallel.
/// `stream_base` keys the per-patch folds.
pub fn code_batch(coder: &SparseCoder, batch: &DMatrix<f64>, cfg: &PathConfig, stream_base: u64) -> Result<Vec<SparseCode>> {
    (0..batch.ncols())
        .into_par_iter()
        .map(|i| {
            let x = batch.column(i).into_owned();
            coder.code(&x, cfg, stream_base.wrapping_add(i as u64))
        })
        .collect()
}

/// Mean objective of a fixed batch under the current atoms, each patch using
/// its own selected λ.
pub fn batch_objective(atoms: &DMatrix<f64>, batch: &DMatrix<f64>, cfg: &PathConfig) -> Result<f64> {
    let coder = SparseCoder::new(atoms.clone());
    let codes = code_batch(&coder, batch, cfg, 0)?;
    let total: f64 = codes
        .iter()
        .enumerate()
        .map(|(i, c)| lasso_objective(atoms, &batch.column(i).into_owned(), &c.alpha, c.lambda_selected))
        .sum();
    Ok(total / batch.ncols().max(1) as f64)
}

/// Stepwise trainer; [`train`] runs it to completion.
pub struct Trainer<'a> {
    omega: &'a DMatrix<f64>,
    pool: AtomPool<'a>,
    patch_shape: PatchShape,
    cfg: TrainConfig,
    atoms: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    rng: Rng,
    iteration: usize,
    sources: Vec<String>,
}

impl<'a> Trainer<'a> {
    pub fn new(omega: &'a DMatrix<f64>, patch_shape: PatchShape, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if omega.nrows() != patch_shape.len() {
            return Err(arg_err!(
                "patch matrix has {} rows, patch shape needs {}",
                omega.nrows(),
                patch_shape.len()
            ));
        }
        let m = omega.nrows();
        let p = cfg.n_atoms.unwrap_or(2 * m);
        let atoms = init_atoms(omega, p, cfg.rng_seed)?;
        Ok(Self {
            omega,
            pool: AtomPool::new(omega)?,
            patch_shape,
            cfg,
            atoms,
            a: DMatrix::zeros(p, p),
            b: DMatrix::zeros(m, p),
            rng: rng::salted(cfg.rng_seed, rng::salt::TRAIN, 0),
            iteration: 0,
            sources: Vec::new(),
        })
    }

    pub fn with_sources(mut self, sources: Vec<String>) -> Self {
        self.sources = sources;
        self
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn accumulator_a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.n_iterations
    }

    /// Draws a batch, codes it, accumulates and updates the atoms once.
    pub fn step(&mut self) -> Result<StepStats> {
        let n = self.omega.ncols();
        let cols: Vec<usize> = (0..self.cfg.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        let batch = self.omega.select_columns(cols.iter());
        let coder = SparseCoder::new(self.atoms.clone());
        let stream = (self.iteration as u64) * self.cfg.batch_size as u64;
        let path_cfg = PathConfig {
            rng_seed: self.cfg.rng_seed,
            ..self.cfg.path_cfg
        };
        let codes = code_batch(&coder, &batch, &path_cfg, stream)?;

        if self.cfg.accumulator_scale != 1.0 {
            self.a *= self.cfg.accumulator_scale;
            self.b *= self.cfg.accumulator_scale;
        }
        let mut objective = 0.0;
        let mut df = 0usize;
        for (i, code) in codes.iter().enumerate() {
            let x = batch.column(i);
            objective += lasso_objective(&self.atoms, &x.into_owned(), &code.alpha, code.lambda_selected);
            df += code.df;
            let support: Vec<(usize, f64)> = code
                .alpha
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect();
            for &(j, aj) in &support {
                for &(k, ak) in &support {
                    self.a[(k, j)] += aj * ak;
                }
                self.b.column_mut(j).axpy(aj, &x, 1.0);
            }
        }
        let replaced = dictionary_update(&mut self.atoms, &self.a, &self.b, &self.pool, &mut self.rng)?;
        self.iteration += 1;
        Ok(StepStats {
            iteration: self.iteration,
            batch_objective: objective / codes.len() as f64,
            mean_df: df as f64 / codes.len() as f64,
            replaced_atoms: replaced,
        })
    }

    pub fn into_dictionary(self) -> Result<Dictionary> {
        Dictionary::new(
            self.atoms,
            self.patch_shape,
            true,
            Provenance {
                iterations: self.iteration,
                batch_size: self.cfg.batch_size,
                seed: self.cfg.rng_seed,
                selection: Some(self.cfg.path_cfg.selection),
                sources: self.sources,
                resampled_from: None,
            },
        )
    }
}

/// Splits `n` seeded random columns off `omega` as a fixed held-out batch;
/// returns `(training, held_out)`, both in original column order.
pub fn split_holdout(omega: &DMatrix<f64>, n: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n >= omega.ncols() {
        return Err(arg_err!(
            "cannot hold out {n} of {} patches and still train",
            omega.ncols()
        ));
    }
    let mut order: Vec<usize> = (0..omega.ncols()).collect();
    order.shuffle(&mut rng::salted(seed, rng::salt::HOLDOUT, 0));
    let mut held = order[..n].to_vec();
    let mut kept = order[n..].to_vec();
    held.sort_unstable();
    kept.sort_unstable();
    Ok((omega.select_columns(kept.iter()), omega.select_columns(held.iter())))
}

pub fn train(patches: &PatchSet, cfg: &TrainConfig) -> Result<Dictionary> {
    let mut t = Trainer::new(&patches.matrix, patches.patch_shape, *cfg)?;
    while !t.is_done() {
        t.step()?;
    }
    t.into_dictionary()
}
