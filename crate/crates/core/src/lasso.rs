//! Sparse coding by lasso.
//!
//! Each patch x is coded against a fixed dictionary D by minimizing
//! `½‖x − Dα‖² + λ‖α‖₁` along a geometric λ-path that starts at the smallest
//! penalty giving α = 0. The path is warm-started from one λ to the next and
//! the retained λ is chosen per patch by AIC or by k-fold cross-validation.
//!
//! Everything works on the Gram form, keeping `q = Dᵀx − DᵀDα` up to date so
//! the cost per step does not grow with the patch length. Starting from the
//! warm start, an active-set pass solves the restricted system exactly through
//! an incrementally updated Cholesky factor, adding and dropping atoms until
//! the optimality conditions hold to `kkt_tol`. If it stalls, cyclic coordinate
//! descent takes over. Columns need not have unit norm.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::rng;

/// Gram diagonal entries at or below this are treated as empty columns.
const EMPTY_COLUMN: f64 = 1e-14;
/// Active-set sweeps between two full sweeps.
const ACTIVE_SWEEPS: usize = 20;
/// Relative pivot below which a Gram block counts as singular.
const SINGULAR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Aic,
    Cv,
}

impl std::str::FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Selection::Aic),
            "cv" => Ok(Selection::Cv),
            other => Err(format!("unknown selection {other:?} (expected aic or cv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub n_lambdas: usize,
    /// Last λ as a fraction of the first.
    pub eps_ratio: f64,
    /// Sweeps stop once the largest coefficient change, relative to the largest
    /// coefficient, drops below this...
    pub cd_tol: f64,
    /// ...and the optimality conditions hold to this absolute tolerance.
    pub kkt_tol: f64,
    pub cd_max_iter: usize,
    /// Stop walking the path once the objective moves less than this.
    pub early_stop_tol: f64,
    pub selection: Selection,
    pub cv_folds: usize,
    pub rng_seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            n_lambdas: 100,
            eps_ratio: 1e-3,
            cd_tol: 1e-4,
            kkt_tol: 1e-7,
            cd_max_iter: 1000,
            early_stop_tol: 1e-5,
            selection: Selection::Aic,
            cv_folds: 3,
            rng_seed: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambdas < 2 {
            return Err(arg_err!("n_lambdas must be >= 2"));
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio < 1.0) {
            return Err(arg_err!("eps_ratio must lie in (0, 1), got {}", self.eps_ratio));
        }
        if self.cv_folds < 2 {
            return Err(arg_err!("cv_folds must be >= 2"));
        }
        if self.cd_max_iter == 0 {
            return Err(arg_err!("cd_max_iter must be >= 1"));
        }
        Ok(())
    }

    /// Geometric sequence from `lambda0` down to `eps_ratio·lambda0`.
    pub fn lambdas(&self, lambda0: f64) -> Vec<f64> {
        let n = self.n_lambdas;
        let log_eps = self.eps_ratio.ln();
        (0..n)
            .map(|k| {
                if k == 0 {
                    lambda0
                } else {
                    lambda0 * (log_eps * k as f64 / (n - 1) as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub alpha: DVector<f64>,
    pub lambda_selected: f64,
    /// Number of nonzero coefficients.
    pub df: usize,
    /// AIC, or mean held-out MSE for cross-validation.
    pub criterion_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub alpha: DVector<f64>,
}

fn nnz(alpha: &[f64]) -> usize {
    alpha.iter().filter(|&&a| a != 0.0).count()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `‖Dᵀx‖∞`: every λ at or above this has the zero vector as its solution.
pub fn lambda_max(d: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    d.tr_mul(x).amax()
}

/// `½‖x − Dα‖² + λ‖α‖₁`.
pub fn lasso_objective(d: &DMatrix<f64>, x: &DVector<f64>, alpha: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (x - d * alpha).norm_squared() + lambda * alpha.lp_norm(1)
}

fn check_columns(d: &DMatrix<f64>) -> Result<()> {
    if d.ncols() == 0 || d.nrows() == 0 {
        return Err(arg_err!("empty dictionary"));
    }
    if let Some(j) = d.column_iter().position(|c| c.norm_squared() <= EMPTY_COLUMN) {
        return Err(arg_err!("dictionary column {j} has zero norm"));
    }
    Ok(())
}

enum Trade {
    Failed,
    /// `α_j` reached zero.
    Left,
    /// This support coordinate reached zero and left the factor.
    Removed(usize),
}

/// Cholesky factor `L` of the Gram block on an ordered support, updated in
/// O(k²) as coordinates enter and leave.
#[derive(Default)]
struct Factor {
    idx: Vec<usize>,
    /// Rows of the lower triangle; row `i` holds `i + 1` entries.
    rows: Vec<Vec<f64>>,
}

impl Factor {
    fn clear(&mut self) {
        self.idx.clear();
        self.rows.clear();
    }

    /// Appends coordinate `j`; false (and unchanged) if the block would
    /// become singular.
    fn push(&mut self, gram: &GramSystem, j: usize) -> bool {
        let k = self.idx.len();
        let col = gram.column(j);
        let mut row = Vec::with_capacity(k + 1);
        for i in 0..k {
            let r = &self.rows[i];
            let v = col[self.idx[i]] - dot(&r[..i], &row);
            row.push(v / r[i]);
        }
        let gjj = col[j];
        let d2 = gjj - dot(&row, &row);
        if !(d2 > SINGULAR * gjj) {
            return false;
        }
        row.push(d2.sqrt());
        self.idx.push(j);
        self.rows.push(row);
        true
    }

    /// Drops position `r`: delete its row, then Givens rotations on column
    /// pairs restore the triangle.
    fn remove(&mut self, r: usize) {
        self.idx.remove(r);
        self.rows.remove(r);
        let k = self.idx.len();
        for i in r..k {
            let (x, y) = (self.rows[i][i], self.rows[i][i + 1]);
            let h = x.hypot(y);
            let (c, s) = (x / h, y / h);
            for t in i..k {
                let row = &mut self.rows[t];
                let (a, b) = (row[i], row[i + 1]);
                row[i] = c * a + s * b;
                row[i + 1] = c * b - s * a;
            }
            self.rows[i].truncate(i + 1);
        }
    }

    /// Solves `L Lᵀ x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.idx.len();
        let mut y = b.to_vec();
        for i in 0..k {
            let r = &self.rows[i];
            y[i] = (y[i] - dot(&r[..i], &y[..i])) / r[i];
        }
        for i in (0..k).rev() {
            let r = &self.rows[i];
            let xi = y[i] / r[i];
            y[i] = xi;
            for (yt, l) in y[..i].iter_mut().zip(&r[..i]) {
                *yt -= l * xi;
            }
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lasso state for one Gram system `G = DᵀD`, `Dᵀx`. The solvers keep
/// `q = Dᵀx − Gα`, the correlations of the residual.
struct GramSystem<'a> {
    /// Column-major, p×p.
    gram: &'a [f64],
    /// Dᵀx
    corr: &'a [f64],
}

impl<'a> GramSystem<'a> {
    fn new(gram: &'a DMatrix<f64>, corr: &'a [f64]) -> Self {
        debug_assert_eq!(gram.nrows(), corr.len());
        Self {
            gram: gram.as_slice(),
            corr,
        }
    }

    fn p(&self) -> usize {
        self.corr.len()
    }

    fn column(&self, j: usize) -> &[f64] {
        let p = self.p();
        &self.gram[j * p..(j + 1) * p]
    }

    fn diag(&self, j: usize) -> f64 {
        self.gram[j * self.p() + j]
    }

    /// `q −= δ·G[:, j]`
    fn shift(&self, j: usize, delta: f64, q: &mut [f64]) {
        for (qi, g) in q.iter_mut().zip(self.column(j)) {
            *qi -= delta * g;
        }
    }

    fn refresh(&self, alpha: &[f64], q: &mut [f64]) {
        q.copy_from_slice(self.corr);
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.shift(j, a, q);
            }
        }
    }

    fn kkt_violation(&self, lambda: f64, alpha: &[f64], q: &[f64]) -> f64 {
        (0..self.p())
            .filter(|&j| self.diag(j) > EMPTY_COLUMN)
            .map(|j| {
                if alpha[j] == 0.0 {
                    (q[j].abs() - lambda).max(0.0)
                } else {
                    (q[j] - lambda * alpha[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// One cyclic pass over `coords`; returns the relative coefficient change.
    fn pass(&self, lambda: f64, alpha: &mut [f64], q: &mut [f64], coords: &[usize]) -> f64 {
        let mut max_delta = 0.0f64;
        for &j in coords {
            let gjj = self.diag(j);
            if gjj <= EMPTY_COLUMN {
                continue;
            }
            let old = alpha[j];
            let new = soft_threshold(q[j] + gjj * old, lambda) / gjj;
            if new != old {
                let delta = new - old;
                alpha[j] = new;
                self.shift(j, delta, q);
                max_delta = max_delta.max(delta.abs());
            }
        }
        let max_abs = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if max_delta == 0.0 {
            0.0
        } else {
            max_delta / max_abs.max(f64::MIN_POSITIVE)
        }
    }

    /// Brings `f` in line with the support of `alpha`. A support coordinate
    /// whose atom is (numerically) spanned by the factored ones is traded
    /// away along the direction that keeps the fit and does not grow ‖α‖₁,
    /// until it or one of the others reaches zero.
    /// `c` with `d_j = D_I c` on the factored support.
    fn null_weights(&self, f: &Factor, j: usize) -> Vec<f64> {
        let col = self.column(j);
        let rhs: Vec<f64> = f.idx.iter().map(|&i| col[i]).collect();
        f.solve(&rhs)
    }

    /// For `d_j` in the span of the factored support, moves along
    /// `dir·(e_j − Σ c_i e_i)`, which leaves `Dα` unchanged, until `α_j` or a
    /// support coordinate reaches zero. A support coordinate that does leaves
    /// the factor.
    fn trade(&self, f: &mut Factor, alpha: &mut [f64], q: &mut [f64], j: usize, dir: f64) -> Trade {
        let c = self.null_weights(f, j);
        if c.iter().any(|v| !v.is_finite()) {
            return Trade::Failed;
        }
        let mut best = if alpha[j] != 0.0 && alpha[j].signum() != dir {
            (alpha[j].abs(), None)
        } else {
            (f64::INFINITY, None)
        };
        for (u, (&i, &ci)) in f.idx.iter().zip(&c).enumerate() {
            let vi = -ci * dir;
            if vi != 0.0 && vi.signum() != alpha[i].signum() {
                let t = alpha[i].abs() / vi.abs();
                if t < best.0 {
                    best = (t, Some(u));
                }
            }
        }
        let t = best.0 * dir;
        if !t.is_finite() {
            return Trade::Failed;
        }
        let old_j = alpha[j];
        alpha[j] = if best.1.is_none() { 0.0 } else { old_j + t };
        self.shift(j, alpha[j] - old_j, q);
        for (u, (&i, &ci)) in f.idx.iter().zip(&c).enumerate() {
            let old = alpha[i];
            alpha[i] = if best.1 == Some(u) { 0.0 } else { old - t * ci };
            self.shift(i, alpha[i] - old, q);
        }
        match best.1 {
            None => Trade::Left,
            Some(u) => {
                let i = f.idx[u];
                f.remove(u);
                Trade::Removed(i)
            }
        }
    }

    fn sync(&self, f: &mut Factor, alpha: &mut [f64], q: &mut [f64]) -> bool {
        let mut r = 0;
        while r < f.idx.len() {
            if alpha[f.idx[r]] == 0.0 {
                f.remove(r);
            } else {
                r += 1;
            }
        }
        let mut member = vec![false; alpha.len()];
        f.idx.iter().for_each(|&j| member[j] = true);
        for j in 0..alpha.len() {
            if alpha[j] == 0.0 || member[j] {
                continue;
            }
            let mut budget = f.idx.len() + 1;
            while !f.push(self, j) {
                if budget == 0 || f.idx.is_empty() {
                    return false;
                }
                budget -= 1;
                let c = self.null_weights(f, j);
                let slope = alpha[j].signum() - f.idx.iter().zip(&c).map(|(&i, ci)| alpha[i].signum() * ci).sum::<f64>();
                let dir = if slope != 0.0 { -slope.signum() } else { -alpha[j].signum() };
                match self.trade(f, alpha, q, j, dir) {
                    Trade::Failed => return false,
                    Trade::Left => break,
                    Trade::Removed(i) => member[i] = false,
                }
            }
            if alpha[j] != 0.0 {
                member[j] = true;
            }
        }
        true
    }

    /// Active-set refinement in the manner of feature-sign search. On the
    /// current signed support, step towards the minimizer of the restricted
    /// quadratic, stopping at the first zero crossing (that coordinate
    /// leaves); once the support is optimal, admit the most violating
    /// inactive coordinate with an exact coordinate step. Each move lowers
    /// the objective. Returns false, leaving a valid iterate, if a
    /// restricted Gram block is singular or no progress is possible.
    fn refine(&self, lambda: f64, alpha: &mut [f64], q: &mut [f64], f: &mut Factor, tol: f64) -> bool {
        let p = self.p();
        if !self.sync(f, alpha, q) {
            f.clear();
            return false;
        }
        let mut budget = 4 * p + 8;
        loop {
            let support_ok = f.idx.iter().all(|&j| (q[j] - lambda * alpha[j].signum()).abs() <= tol);
            let mut moved = false;
            if support_ok {
                let worst = (0..p)
                    .filter(|&j| alpha[j] == 0.0 && self.diag(j) > EMPTY_COLUMN)
                    .map(|j| (j, q[j].abs() - lambda))
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                match worst {
                    Some((j, v)) if v > tol => {
                        if f.push(self, j) {
                            let new = soft_threshold(q[j], lambda) / self.diag(j);
                            alpha[j] = new;
                            self.shift(j, new, q);
                        } else {
                            // d_j is spanned by the support: trade weight into j
                            // at fixed fit, which lowers ‖α‖₁ since |q_j| > λ
                            if budget == 0 || !matches!(self.trade(f, alpha, q, j, q[j].signum()), Trade::Removed(_)) {
                                self.refresh(alpha, q);
                                return false;
                            }
                            budget -= 1;
                            if !f.push(self, j) {
                                self.refresh(alpha, q);
                                return false;
                            }
                        }
                        moved = true;
                    }
                    _ => {
                        return self.kkt_violation(lambda, alpha, q) <= tol;
                    }
                }
            }
            // Steps on the support until its restricted minimizer is reached;
            // q is brought up to date once, afterwards.
            let touched = f.idx.clone();
            let before: Vec<f64> = touched.iter().map(|&j| alpha[j]).collect();
            loop {
                if budget == 0 {
                    self.refresh(alpha, q);
                    return false;
                }
                budget -= 1;
                let rhs: Vec<f64> = f
                    .idx
                    .iter()
                    .map(|&j| self.corr[j] - lambda * alpha[j].signum())
                    .collect();
                let target = f.solve(&rhs);
                if target.iter().any(|v| !v.is_finite()) {
                    self.refresh(alpha, q);
                    return false;
                }
                let mut t1 = 1.0;
                let mut hit = None;
                for (u, &j) in f.idx.iter().enumerate() {
                    let a = alpha[j];
                    if target[u] == 0.0 || target[u].signum() != a.signum() {
                        let t = a / (a - target[u]);
                        if t < t1 || (hit.is_none() && t <= t1) {
                            t1 = t;
                            hit = Some(u);
                        }
                    }
                }
                for (u, &j) in f.idx.iter().enumerate() {
                    alpha[j] = if hit == Some(u) { 0.0 } else { alpha[j] + t1 * (target[u] - alpha[j]) };
                }
                match hit {
                    Some(u) => f.remove(u),
                    None => break,
                }
            }
            for (&j, &old) in touched.iter().zip(&before) {
                if alpha[j] != old {
                    self.shift(j, alpha[j] - old, q);
                    moved = true;
                }
            }
            if !moved {
                return self.kkt_violation(lambda, alpha, q) <= tol;
            }
        }
    }

    /// Solves in place from the current `alpha`; `q` must match `alpha` on
    /// entry and does again on return.
    ///
    /// The active-set refinement runs first; should it stall (a singular
    /// restricted block), cyclic coordinate descent takes over, alternating
    /// full sweeps with sweeps over the current support.
    fn solve(&self, lambda: f64, alpha: &mut [f64], q: &mut [f64], f: &mut Factor, cfg: &PathConfig) {
        if self.refine(lambda, alpha, q, f, cfg.kkt_tol) {
            return;
        }
        f.clear();
        self.refresh(alpha, q);
        let all: Vec<usize> = (0..self.p()).collect();
        let mut sweeps = 0;
        loop {
            let change = self.pass(lambda, alpha, q, &all);
            sweeps += 1;
            if change < cfg.cd_tol || sweeps >= cfg.cd_max_iter {
                self.refresh(alpha, q);
                if sweeps >= cfg.cd_max_iter || self.kkt_violation(lambda, alpha, q) <= cfg.kkt_tol {
                    return;
                }
            }
            let active: Vec<usize> = (0..self.p()).filter(|&j| alpha[j] != 0.0).collect();
            let mut inner = 0;
            while !active.is_empty() && sweeps < cfg.cd_max_iter && inner < ACTIVE_SWEEPS {
                let change = self.pass(lambda, alpha, q, &active);
                sweeps += 1;
                inner += 1;
                if change < cfg.cd_tol * 0.1 {
                    break;
                }
            }
        }
    }

    /// RSS from the maintained correlations: ‖x‖² − αᵀDᵀx − αᵀq.
    fn rss(&self, x_norm2: f64, alpha: &[f64], q: &[f64]) -> f64 {
        let mut acc = x_norm2;
        for j in 0..alpha.len() {
            if alpha[j] != 0.0 {
                acc -= alpha[j] * (self.corr[j] + q[j]);
            }
        }
        acc.max(0.0)
    }

    /// Warm-started path over `lambdas`. With `early_stop`, the walk ends after
    /// the first λ whose objective differs from the previous one by less than it.
    fn path(&self, x_norm2: f64, lambdas: &[f64], early_stop: Option<f64>, cfg: &PathConfig) -> Vec<PathPoint> {
        let p = self.p();
        let mut alpha = vec![0.0; p];
        let mut q = self.corr.to_vec();
        let mut out = Vec::with_capacity(lambdas.len());
        let mut prev_obj: Option<f64> = None;
        let mut factor = Factor::default();
        for &lambda in lambdas {
            self.solve(lambda, &mut alpha, &mut q, &mut factor, cfg);
            out.push(PathPoint {
                lambda,
                alpha: DVector::from_column_slice(&alpha),
            });
            if let Some(tol) = early_stop {
                let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
                let obj = 0.5 * self.rss(x_norm2, &alpha, &q) + lambda * l1;
                if prev_obj.is_some_and(|prev| (prev - obj).abs() < tol) {
                    break;
                }
                prev_obj = Some(obj);
            }
        }
        out
    }
}

/// `‖x − Dα‖²` exploiting sparsity of α.
fn sparse_rss(d: &DMatrix<f64>, x: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let mut r = x.clone();
    for (j, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            r.axpy(-a, &d.column(j), 1.0);
        }
    }
    r.norm_squared()
}

pub fn aic(m: usize, rss: f64, df: usize) -> f64 {
    m as f64 * (rss.max(1e-300) / m as f64).ln() + 2.0 * df as f64
}

fn aic_select(d: &DMatrix<f64>, path: &[PathPoint], x: &DVector<f64>) -> Result<SparseCode> {
    let m = x.len();
    let mut best: Option<SparseCode> = None;
    for pt in path {
        let df = nnz(pt.alpha.as_slice());
        let value = aic(m, sparse_rss(d, x, &pt.alpha), df);
        // strict: equal scores keep the earlier, larger λ
        if best.as_ref().is_none_or(|b| value < b.criterion_value) {
            best = Some(SparseCode {
                alpha: pt.alpha.clone(),
                lambda_selected: pt.lambda,
                df,
                criterion_value: value,
            });
        }
    }
    best.ok_or_else(|| arg_err!("empty regularization path"))
}

/// Fold label of every row: a seeded shuffle dealt round-robin into `k` folds.
pub fn random_folds(m: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::stream(seed, stream));
    let mut folds = vec![0; m];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

/// A dictionary with its Gram matrix precomputed, shared by many patches.
///
/// Empty columns are tolerated here (their coefficient stays 0); the free
/// functions of this module reject them.
#[derive(Debug, Clone)]
pub struct SparseCoder {
    atoms: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl SparseCoder {
    pub fn new(atoms: DMatrix<f64>) -> Self {
        let gram = atoms.transpose() * &atoms;
        Self { atoms, gram }
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    fn check_signal(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.atoms.nrows() {
            return Err(arg_err!(
                "signal has length {} but dictionary rows are {}",
                x.len(),
                self.atoms.nrows()
            ));
        }
        Ok(())
    }

    pub fn solve(&self, x: &DVector<f64>, lambda: f64, warm: Option<&DVector<f64>>, cfg: &PathConfig) -> Result<DVector<f64>> {
        self.check_signal(x)?;
        if !(lambda >= 0.0) {
            return Err(arg_err!("lambda must be >= 0, got {lambda}"));
        }
        let p = self.atoms.ncols();
        let corr = self.atoms.tr_mul(x);
        let sys = GramSystem::new(&self.gram, corr.as_slice());
        let mut alpha = match warm {
            Some(w) if w.len() == p => w.as_slice().to_vec(),
            Some(w) => return Err(arg_err!("warm start has length {}, expected {p}", w.len())),
            None => vec![0.0; p],
        };
        let mut q = vec![0.0; p];
        sys.refresh(&alpha, &mut q);
        sys.solve(lambda, &mut alpha, &mut q, &mut Factor::default(), cfg);
        Ok(DVector::from_vec(alpha))
    }

    /// Warm-started λ-path with early stopping.
    pub fn path(&self, x: &DVector<f64>, cfg: &PathConfig) -> Result<Vec<PathPoint>> {
        cfg.validate()?;
        self.check_signal(x)?;
        let corr = self.atoms.tr_mul(x);
        let lambda0 = corr.amax();
        if lambda0 == 0.0 {
            return Ok(vec![PathPoint {
                lambda: 0.0,
                alpha: DVector::zeros(self.atoms.ncols()),
            }]);
        }
        let sys = GramSystem::new(&self.gram, corr.as_slice());
        Ok(sys.path(x.norm_squared(), &cfg.lambdas(lambda0), Some(cfg.early_stop_tol), cfg))
    }

    pub fn select_aic(&self, path: &[PathPoint], x: &DVector<f64>) -> Result<SparseCode> {
        aic_select(&self.atoms, path, x)
    }

    /// Cross-validated selection with explicit fold labels (`folds[i] < k`).
    pub fn select_cv_with_folds(&self, x: &DVector<f64>, folds: &[usize], cfg: &PathConfig) -> Result<SparseCode> {
        cfg.validate()?;
        self.check_signal(x)?;
        let m = x.len();
        if folds.len() != m {
            return Err(arg_err!("{} fold labels for {m} rows", folds.len()));
        }
        let k = folds.iter().max().map_or(0, |&f| f + 1);
        if k < 2 {
            return Err(arg_err!("cross-validation needs at least 2 folds"));
        }
        let path = self.path(x, cfg)?;
        let lambdas: Vec<f64> = path.iter().map(|p| p.lambda).collect();
        let mut mse = vec![0.0; lambdas.len()];
        let corr = self.atoms.tr_mul(x);

        for f in 0..k {
            let held: Vec<usize> = (0..m).filter(|&i| folds[i] == f).collect();
            if held.is_empty() || held.len() == m {
                return Err(arg_err!("fold {f} has {} of {m} rows", held.len()));
            }
            let d_held = self.atoms.select_rows(held.iter());
            let x_held = x.select_rows(held.iter());
            let mut gram = self.gram.clone();
            gram.gemm(-1.0, &d_held.transpose(), &d_held, 1.0);
            let mut fold_corr = corr.clone();
            fold_corr.gemm_tr(-1.0, &d_held, &x_held, 1.0);
            let sys = GramSystem::new(&gram, fold_corr.as_slice());
            let train_norm2 = x.norm_squared() - x_held.norm_squared();
            for (i, pt) in sys.path(train_norm2, &lambdas, None, cfg).iter().enumerate() {
                mse[i] += sparse_rss(&d_held, &x_held, &pt.alpha) / held.len() as f64;
            }
        }

        let mut best = 0;
        for i in 1..mse.len() {
            if mse[i] < mse[best] {
                best = i;
            }
        }
        let chosen = &path[best];
        Ok(SparseCode {
            df: nnz(chosen.alpha.as_slice()),
            alpha: chosen.alpha.clone(),
            lambda_selected: chosen.lambda,
            criterion_value: mse[best] / k as f64,
        })
    }

    /// Path plus automatic selection; `stream` keys the random folds.
    pub fn code(&self, x: &DVector<f64>, cfg: &PathConfig, stream: u64) -> Result<SparseCode> {
        match cfg.selection {
            Selection::Aic => {
                let path = self.path(x, cfg)?;
                self.select_aic(&path, x)
            }
            Selection::Cv => {
                if x.len() < cfg.cv_folds {
                    return Err(arg_err!(
                        "{} rows cannot be split into {} folds",
                        x.len(),
                        cfg.cv_folds
                    ));
                }
                let folds = random_folds(x.len(), cfg.cv_folds, cfg.rng_seed, stream);
                self.select_cv_with_folds(x, &folds, cfg)
            }
        }
    }
}

/// Minimizes `½‖x − Dα‖² + λ‖α‖₁` at a single λ.
pub fn solve_lasso(
    d: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
    cfg: &PathConfig,
) -> Result<DVector<f64>> {
    check_columns(d)?;
    SparseCoder::new(d.clone()).solve(x, lambda, warm_start, cfg)
}

pub fn solve_path(d: &DMatrix<f64>, x: &DVector<f64>, cfg: &PathConfig) -> Result<Vec<PathPoint>> {
    check_columns(d)?;
    SparseCoder::new(d.clone()).path(x, cfg)
}

/// Path entry minimizing `m·ln(RSS/m) + 2·df`; ties go to the larger λ.
pub fn select_aic(path: &[PathPoint], d: &DMatrix<f64>, x: &DVector<f64>) -> Result<SparseCode> {
    if x.len() != d.nrows() {
        return Err(arg_err!("signal length {} != dictionary rows {}", x.len(), d.nrows()));
    }
    if let Some(pt) = path.iter().find(|p| p.alpha.len() != d.ncols()) {
        return Err(arg_err!("path coefficient length {} != {}", pt.alpha.len(), d.ncols()));
    }
    aic_select(d, path, x)
}

/// k-fold cross-validated selection with folds drawn from `cfg.rng_seed`.
pub fn select_cv(d: &DMatrix<f64>, x: &DVector<f64>, cfg: &PathConfig) -> Result<SparseCode> {
    check_columns(d)?;
    let cfg = PathConfig {
        selection: Selection::Cv,
        ..*cfg
    };
    SparseCoder::new(d.clone()).code(x, &cfg, 0)
}

pub fn select_cv_with_folds(d: &DMatrix<f64>, x: &DVector<f64>, folds: &[usize], cfg: &PathConfig) -> Result<SparseCode> {
    check_columns(d)?;
    SparseCoder::new(d.clone()).select_cv_with_folds(x, folds, cfg)
}
