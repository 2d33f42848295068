//! Alternating optimization of the self-weighted objective
//!
//! ```text
//! G(alpha, W) = sum_v alpha_v^r tr(W_v^T (M_D^v - M_S^v) W_v)
//!             + sum_{v != w} (alpha_v^r + alpha_w^r) / (2 eta) tr(W_v^T C^{vw} W_w)
//! ```
//!
//! subject to `W_v^T W_v = I_d` and `sum_v alpha_v = 1`.
//!
//! With `alpha` fixed, `G = tr(W^T Z W)` for the block-stacked `W` and a
//! symmetric block matrix `Z`; the W-step takes the top-`d` eigenvectors of
//! `Z`, projects each view's block back onto the orthonormal matrices and
//! refines the result by ascent.
//! With `W` fixed, `alpha` is set in closed form from the per-view gains.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::dataset::{MultiviewDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::metric::SM2LModel;
use crate::scatter::ProblemData;

const EIGEN_MAX_ITERS: usize = 10_000;
/// Singular values of a partitioned eigenvector block at or below this count
/// as missing directions.
const BLOCK_RANK_TOL: f64 = 1e-10;
const REFINE_MAX_ITERS: usize = 500;
const REFINE_TOL: f64 = 1e-13;
const RANDOM_STARTS: usize = 8;
const RANDOM_START_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Shared embedding dimension of every view.
    pub d: usize,
    /// Weight exponent, `r > 1`.
    pub r: f64,
    /// Divisor of the cross-view coupling, `eta > 0`. Infinity decouples the views.
    pub eta: f64,
    pub max_iters: usize,
    /// Threshold on the relative change of the stacked projections.
    pub tol: f64,
    /// Floor applied to view gains before the weight update.
    #[serde(default = "default_gain_floor")]
    pub gain_floor: f64,
    /// Center each view before forming cross-correlations.
    #[serde(default)]
    pub center_cross: bool,
}

fn default_gain_floor() -> f64 {
    1e-8
}

impl Hyperparams {
    /// Defaults: `r = 2`, `eta = 1`, `d = min(10, min_v D_v)`, 50 iterations, `tol = 1e-6`.
    pub fn for_dims(view_dims: &[usize]) -> Self {
        let d = view_dims.iter().copied().min().unwrap_or(1).min(10).max(1);
        Hyperparams {
            d,
            r: 2.0,
            eta: 1.0,
            max_iters: 50,
            tol: 1e-6,
            gain_floor: default_gain_floor(),
            center_cross: false,
        }
    }

    pub fn validate(&self, view_dims: &[usize]) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparams(msg));
        if !(self.r > 1.0) || self.r.is_nan() {
            return bad("r must be > 1".into());
        }
        if !(self.eta > 0.0) {
            return bad("eta must be > 0".into());
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0".into());
        }
        if !(self.gain_floor > 0.0) || !self.gain_floor.is_finite() {
            return bad("gain floor must be a positive finite number".into());
        }
        let min_dim = view_dims.iter().copied().min().unwrap_or(0);
        if self.d < 1 || self.d > min_dim {
            return bad(format!("d must be in [1, {min_dim}], got {}", self.d));
        }
        Ok(())
    }
}

/// Per-view projections `W_v` (`D_v x d`, orthonormal columns) and view weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub w: Vec<DMatrix<f64>>,
    pub alpha: Vec<f64>,
}

impl ProjectionSet {
    pub fn n_views(&self) -> usize {
        self.w.len()
    }

    /// Largest `||W_v^T W_v - I||_F` over views.
    pub fn orthonormality_error(&self) -> f64 {
        self.w
            .iter()
            .map(|w| (w.transpose() * w - DMatrix::identity(w.ncols(), w.ncols())).norm())
            .fold(0.0, f64::max)
    }
}

/// `g_v = tr(W_v^T (M_D^v - M_S^v) W_v) + (1/eta) sum_{w != v} tr(W_v^T C^{vw} W_w)`,
/// the alpha-free factor of `dG/d alpha_v = r alpha_v^(r-1) g_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewGain {
    pub g: Vec<f64>,
}

/// Offsets of each view's rows in the stacked layout.
fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|&d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}

/// Builds the symmetric `D x D` matrix `Z` with
/// `Z_vv = alpha_v^r (M_D^v - M_S^v)` and
/// `Z_vw = (alpha_v^r + alpha_w^r) / (2 eta) C^{vw}`.
pub fn assemble_block_matrix(problem: &ProblemData, alpha: &[f64], hyper: &Hyperparams) -> Result<DMatrix<f64>> {
    let dims = problem.view_dims();
    let m = dims.len();
    if alpha.len() != m {
        return Err(Error::invalid(format!("alpha has {} entries for {m} views", alpha.len())));
    }
    for v in 0..m {
        let s = &problem.scatters[v];
        if s.m_d.shape() != (dims[v], dims[v]) || s.m_s.shape() != (dims[v], dims[v]) {
            return Err(Error::invalid(format!("scatter of view {} is not square", v + 1)));
        }
        for w in 0..m {
            if v != w && problem.cross(v, w).shape() != (dims[v], dims[w]) {
                return Err(Error::invalid(format!("cross block ({}, {}) has wrong shape", v + 1, w + 1)));
            }
        }
    }
    let total: usize = dims.iter().sum();
    let off = offsets(&dims);
    let powered: Vec<f64> = alpha.iter().map(|a| a.powf(hyper.r)).collect();
    let mut z = DMatrix::zeros(total, total);
    for v in 0..m {
        let diag = problem.scatters[v].margin() * powered[v];
        z.view_mut((off[v], off[v]), (dims[v], dims[v])).copy_from(&diag);
        for w in v + 1..m {
            let coef = (powered[v] + powered[w]) / (2.0 * hyper.eta);
            let block = problem.cross(v, w) * coef;
            z.view_mut((off[v], off[w]), (dims[v], dims[w])).copy_from(&block);
        }
    }
    // Mirror the upper triangle so Z == Z^T holds bit for bit.
    for i in 0..total {
        for j in 0..i {
            z[(i, j)] = z[(j, i)];
        }
    }
    Ok(z)
}

/// Stacks per-view blocks into one `D x d` matrix.
pub fn stack(w: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = w.iter().map(|b| b.nrows()).sum();
    let d = w.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(total, d);
    let mut row = 0;
    for b in w {
        out.view_mut((row, 0), (b.nrows(), d)).copy_from(b);
        row += b.nrows();
    }
    out
}

/// `tr(W^T Z W)` for the block-stacked projections, which equals `G` when
/// `Z` came from [`assemble_block_matrix`].
pub fn objective(z: &DMatrix<f64>, w: &[DMatrix<f64>]) -> f64 {
    let s = stack(w);
    (s.transpose() * z * &s).trace()
}

/// Result of a W-step.
#[derive(Debug, Clone)]
pub struct ProjectionUpdate {
    pub w: Vec<DMatrix<f64>>,
    /// Top-`d` eigenvalues of `Z`, descending.
    pub eigenvalues: DVector<f64>,
    /// Matching unit eigenvectors (`D x d`) before per-view projection.
    pub eigenvectors: DMatrix<f64>,
    /// Views whose eigenvector block had rank below `d` and needed padding.
    pub rank_deficient: Vec<usize>,
}

/// W-step: top-`d` eigenvectors of `Z`, split row-wise into view blocks, each
/// replaced by its closest matrix with orthonormal columns (polar factor).
/// That start is then refined by a monotone ascent on the per-view
/// orthonormal set, along with a few fixed alternative starts; the best
/// result is returned, so the objective is never below the projected
/// eigenvectors.
///
/// Eigenvectors are sign-normalized so that their largest-magnitude entry
/// (first one on ties) is positive.
pub fn update_projections(z: &DMatrix<f64>, dims: &[usize], d: usize) -> Result<ProjectionUpdate> {
    let total: usize = dims.iter().sum();
    if z.shape() != (total, total) {
        return Err(Error::invalid(format!("Z is {:?}, expected {total}x{total}", z.shape())));
    }
    let min_dim = dims.iter().copied().min().unwrap_or(0);
    if d < 1 || d > min_dim {
        return Err(Error::InvalidHyperparams(format!("d must be in [1, {min_dim}], got {d}")));
    }
    let asym = (z - z.transpose()).amax();
    if asym > 1e-10 * z.amax().max(1.0) {
        return Err(Error::invalid(format!("Z is not symmetric (max asymmetry {asym:e})")));
    }

    let eig = SymmetricEigen::try_new(z.clone(), f64::EPSILON, EIGEN_MAX_ITERS).ok_or(Error::EigenNoConvergence)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut vecs = DMatrix::zeros(total, d);
    let mut vals = DVector::zeros(d);
    for (k, &src) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut lead = 0;
        for i in 1..total {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(k, &col);
        vals[k] = eig.eigenvalues[src];
    }

    let mut w = Vec::with_capacity(dims.len());
    let mut rank_deficient = Vec::new();
    let mut row = 0;
    for (v, &dim) in dims.iter().enumerate() {
        let block = vecs.rows(row, dim).into_owned();
        let (q, full_rank) = polar_orthonormal(&block);
        if !full_rank {
            rank_deficient.push(v);
        }
        w.push(q);
        row += dim;
    }
    let shift = (-eig.eigenvalues.min()).max(0.0);
    let mut best = refine_blocks(z, w, shift);
    let mut best_value = objective(z, &best);
    for start in extra_starts(z, dims, d) {
        let candidate = refine_blocks(z, start, shift);
        let value = objective(z, &candidate);
        if value > best_value {
            best = candidate;
            best_value = value;
        }
    }
    let w = best;
    Ok(ProjectionUpdate { w, eigenvalues: vals, eigenvectors: vecs, rank_deficient })
}

/// Additional starting points for the refinement: each view's own top-`d`
/// eigenvectors, then a fixed set of pseudo-random orthonormal blocks.
fn extra_starts(z: &DMatrix<f64>, dims: &[usize], d: usize) -> Vec<Vec<DMatrix<f64>>> {
    let off = offsets(dims);
    let mut starts = Vec::with_capacity(RANDOM_STARTS + 1);
    let own: Option<Vec<DMatrix<f64>>> = dims
        .iter()
        .zip(&off)
        .map(|(&dim, &o)| {
            let block = z.view((o, o), (dim, dim)).into_owned();
            let eig = SymmetricEigen::try_new(block, f64::EPSILON, EIGEN_MAX_ITERS)?;
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
            Some(DMatrix::from_fn(dim, d, |i, k| eig.eigenvectors[(i, order[k])]))
        })
        .collect();
    starts.extend(own);
    let mut rng = ChaCha8Rng::seed_from_u64(RANDOM_START_SEED);
    for _ in 0..RANDOM_STARTS {
        starts.push(
            dims.iter()
                .map(|&dim| {
                    let g = DMatrix::from_fn(dim, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    polar_orthonormal(&g).0
                })
                .collect(),
        );
    }
    starts
}

/// Generalized power iteration on the per-view orthonormal set.
///
/// There `tr(W^T W) = m d` is constant, so maximizing `tr(W^T Z W)` equals
/// maximizing the convex `tr(W^T (Z + shift I) W)` once `Z + shift I` is
/// PSD. Replacing each block by the polar factor of its block of
/// `(Z + shift I) W` maximizes the linearization, so the objective never
/// decreases.
fn refine_blocks(z: &DMatrix<f64>, mut w: Vec<DMatrix<f64>>, shift: f64) -> Vec<DMatrix<f64>> {
    let dims: Vec<usize> = w.iter().map(|b| b.nrows()).collect();
    let mut current = objective(z, &w);
    let scale = z.amax().max(f64::MIN_POSITIVE);
    for _ in 0..REFINE_MAX_ITERS {
        let stacked = stack(&w);
        let grad = z * &stacked + &stacked * shift;
        let mut row = 0;
        let next: Vec<DMatrix<f64>> = dims
            .iter()
            .map(|&dim| {
                let (q, _) = polar_orthonormal(&grad.rows(row, dim).into_owned());
                row += dim;
                q
            })
            .collect();
        let value = objective(z, &next);
        if !(value > current) {
            break;
        }
        let gained = value - current;
        w = next;
        current = value;
        if gained <= REFINE_TOL * scale {
            break;
        }
    }
    w
}

/// Closest matrix with orthonormal columns to `b` (`rows >= cols`), i.e.
/// `U V^T` from the thin SVD. Directions with vanishing singular values are
/// filled by Gram-Schmidt over the standard basis in index order. Returns
/// whether `b` had full column rank.
pub(crate) fn polar_orthonormal(b: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (rows, cols) = b.shape();
    let svd = b.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");

    let keep: Vec<bool> = svd.singular_values.iter().map(|&s| s > BLOCK_RANK_TOL).collect();
    let full_rank = keep.iter().all(|&k| k);
    let mut basis = DMatrix::zeros(rows, cols);
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        if keep[k] {
            let c = u.column(k).into_owned();
            basis.set_column(k, &c);
            accepted.push(c);
        }
    }
    if !full_rank {
        let mut candidates = 0..rows;
        for k in (0..cols).filter(|&k| !keep[k]) {
            let c = loop {
                let j = candidates.next().expect("standard basis spans the block space");
                let mut c = DVector::zeros(rows);
                c[j] = 1.0;
                for _ in 0..2 {
                    for a in &accepted {
                        let proj = a.dot(&c);
                        c.axpy(-proj, a, 1.0);
                    }
                }
                let norm = c.norm();
                if norm > 1e-6 {
                    break c / norm;
                }
            };
            basis.set_column(k, &c);
            accepted.push(c);
        }
    }
    (basis * v_t, full_rank)
}

/// Per-view gains for fixed projections.
pub fn compute_view_gains(w: &[DMatrix<f64>], problem: &ProblemData, hyper: &Hyperparams) -> ViewGain {
    let m = w.len();
    let g = (0..m)
        .map(|v| {
            let margin = problem.scatters[v].margin();
            let own = (w[v].transpose() * margin * &w[v]).trace();
            let coupling: f64 = (0..m)
                .filter(|&u| u != v)
                .map(|u| (w[v].transpose() * problem.cross(v, u) * &w[u]).trace())
                .sum();
            own + coupling / hyper.eta
        })
        .collect();
    ViewGain { g }
}

/// Closed-form weight update `alpha_v ∝ (1 / max(g_v, floor))^(1/(r-1))`.
///
/// Evaluated in the log domain; the result lies on the simplex.
pub fn update_alpha(gains: &ViewGain, r: f64, floor: f64) -> Result<Vec<f64>> {
    if !(r > 1.0) {
        return Err(Error::InvalidHyperparams("r must be > 1".into()));
    }
    if gains.g.is_empty() || gains.g.iter().all(|g| !g.is_finite()) {
        return Err(Error::invalid("all view gains are non-finite"));
    }
    let exponent = 1.0 / (r - 1.0);
    // f64::max drops NaN, so NaN and -inf gains clamp to the floor.
    let logs: Vec<f64> = gains.g.iter().map(|&g| -g.max(floor).ln() * exponent).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|x| x / total).collect())
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `G` at the weights used for this W-step and the new projections.
    pub objective: f64,
    pub gains: Vec<f64>,
    /// Weights after this iteration's update.
    pub alpha: Vec<f64>,
    /// Relative Frobenius change of the stacked projections; absent on the first iteration.
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_deficient_views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

/// Runs the alternating solver on the training columns of `dataset`.
///
/// `constraints` index into `split.train_indices`. Weights start uniform;
/// each iteration assembles `Z`, updates the projections, then the weights,
/// and stops once the projections change by less than `tol` (relative) or
/// after `max_iters` iterations.
pub fn train(
    dataset: &MultiviewDataset,
    split: &SplitSpec,
    constraints: &ConstraintSet,
    hyper: &Hyperparams,
) -> Result<SM2LModel> {
    let dims = dataset.view_dims();
    hyper.validate(&dims)?;
    if split.train_indices.iter().any(|&i| i >= dataset.n_samples()) {
        return Err(Error::invalid("split references samples outside the dataset"));
    }
    let train_views = dataset.select_views(&split.train_indices);
    let problem = ProblemData::compute(&train_views, constraints, hyper.center_cross)?;
    train_on(&problem, hyper)
}

/// Solver loop on precomputed scatters and cross blocks.
pub fn train_on(problem: &ProblemData, hyper: &Hyperparams) -> Result<SM2LModel> {
    let dims = problem.view_dims();
    hyper.validate(&dims)?;
    let m = dims.len();
    let mut alpha = vec![1.0 / m as f64; m];
    let mut prev: Option<Vec<DMatrix<f64>>> = None;
    let mut trace = TrainingTrace::default();

    for iteration in 1..=hyper.max_iters {
        let z = assemble_block_matrix(problem, &alpha, hyper)?;
        let update = update_projections(&z, &dims, hyper.d)?;
        let objective_value = objective(&z, &update.w);
        let gains = compute_view_gains(&update.w, problem, hyper);
        if !objective_value.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration,
                detail: serde_json::to_string(&trace.iterations).unwrap_or_default(),
            });
        }
        let next_alpha = update_alpha(&gains, hyper.r, hyper.gain_floor)?;
        let residual = prev.as_ref().map(|p| {
            let change: f64 = p.iter().zip(&update.w).map(|(a, b)| (b - a).norm()).sum();
            let scale: f64 = p.iter().map(|a| a.norm()).sum();
            change / scale
        });
        trace.iterations.push(IterationRecord {
            iteration,
            objective: objective_value,
            gains: gains.g,
            alpha: next_alpha.clone(),
            residual,
            rank_deficient_views: update.rank_deficient,
        });
        alpha = next_alpha;
        prev = Some(update.w);
        if residual.is_some_and(|r| r < hyper.tol) {
            trace.converged = true;
            break;
        }
    }
    let w = prev.expect("max_iters >= 1");
    SM2LModel::new(ProjectionSet { w, alpha }, hyper.clone(), trace)
}
