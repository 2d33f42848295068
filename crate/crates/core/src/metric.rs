//! Learned metrics, distances and metric-axiom checks.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{Hyperparams, ProjectionSet, TrainingTrace};

const ORTHONORMAL_TOL: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-12;
const TRIANGLE_SLACK: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;

pub const MODEL_FORMAT: &str = "mvmetric-model/1";

/// Mahalanobis distance `sqrt((x-y)^T A (x-y))` with `A = W W^T`, evaluated
/// as `||W^T (x - y)||`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mahalanobis {
    factor: DMatrix<f64>,
}

impl Mahalanobis {
    pub fn from_factor(factor: DMatrix<f64>) -> Self {
        Mahalanobis { factor }
    }

    /// Factors a symmetric PSD matrix as `A = W W^T` with `W = V sqrt(Lambda)`.
    /// Meant for diagnostics; learned metrics come with their factor.
    pub fn from_matrix(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::invalid("metric matrix must be square and symmetric"));
        }
        let eig = SymmetricEigen::new(a.clone());
        if eig.eigenvalues.min() < -1e-10 * a.amax().max(1.0) {
            return Err(Error::invalid("metric matrix is not positive semi-definite"));
        }
        let mut factor = eig.eigenvectors;
        for (mut col, &l) in factor.column_iter_mut().zip(eig.eigenvalues.iter()) {
            col *= l.max(0.0).sqrt();
        }
        Ok(Mahalanobis { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `A = W W^T`
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(x)
    }

    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::invalid(format!(
                "vector dimension {} / {} does not match metric dimension {}",
                x.len(),
                y.len(),
                self.dim()
            )));
        }
        Ok(self.factor.tr_mul(&(x - y)).norm())
    }
}

/// How per-view squared distances are combined at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `alpha_v^r`, the weighting the objective applies.
    #[default]
    AlphaR,
    Alpha,
    Uniform,
}

impl Weighting {
    pub fn weights(self, alpha: &[f64], r: f64) -> Vec<f64> {
        match self {
            Weighting::AlphaR => alpha.iter().map(|a| a.powf(r)).collect(),
            Weighting::Alpha => alpha.to_vec(),
            Weighting::Uniform => vec![1.0; alpha.len()],
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha-r" => Ok(Weighting::AlphaR),
            "alpha" => Ok(Weighting::Alpha),
            "uniform" => Ok(Weighting::Uniform),
            other => Err(Error::invalid(format!("unknown weighting {other:?} (alpha-r, alpha, uniform)"))),
        }
    }
}

/// A distance over multiview samples: each view is embedded linearly and the
/// squared per-view Euclidean distances are combined with fixed weights.
pub trait MultiviewMetric: Sync {
    fn view_dims(&self) -> Vec<usize>;

    fn embed(&self, v: usize, x: &DVector<f64>) -> DVector<f64>;

    fn view_weights(&self) -> Vec<f64>;

    /// `sqrt(sum_v weight_v * ||e_v(x_v - y_v)||^2)`
    fn multiview_distance(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<f64> {
        let dims = self.view_dims();
        if xs.len() != dims.len() || ys.len() != dims.len() {
            return Err(Error::invalid(format!("expected {} views", dims.len())));
        }
        let weights = self.view_weights();
        let mut total = 0.0;
        for v in 0..dims.len() {
            if xs[v].len() != dims[v] || ys[v].len() != dims[v] {
                return Err(Error::invalid(format!("view {} expects dimension {}", v + 1, dims[v])));
            }
            total += weights[v] * self.embed(v, &(&xs[v] - &ys[v])).norm_squared();
        }
        Ok(total.sqrt())
    }
}

/// Learned projections, weights, hyperparameters and training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SM2LModel {
    projections: ProjectionSet,
    hyper: Hyperparams,
    view_dims: Vec<usize>,
    trace: TrainingTrace,
}

impl SM2LModel {
    /// Validates orthonormality of every `W_v`, the shared width `d`, and
    /// that `alpha` lies on the simplex.
    pub fn new(projections: ProjectionSet, hyper: Hyperparams, trace: TrainingTrace) -> Result<Self> {
        let m = projections.w.len();
        if m == 0 || projections.alpha.len() != m {
            return Err(Error::invalid("model needs one weight per projection"));
        }
        if projections.w.iter().any(|w| w.ncols() != hyper.d || w.nrows() < hyper.d) {
            return Err(Error::invalid(format!("every projection must be D_v x {} with D_v >= d", hyper.d)));
        }
        if projections.w.iter().flat_map(|w| w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("projection contains non-finite values"));
        }
        let ortho = projections.orthonormality_error();
        if ortho > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!("projections are not orthonormal (error {ortho:e})")));
        }
        let alpha = &projections.alpha;
        if alpha.iter().any(|a| !(*a >= 0.0)) || (alpha.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("view weights must be non-negative and sum to 1"));
        }
        let view_dims = projections.w.iter().map(|w| w.nrows()).collect();
        Ok(SM2LModel { projections, hyper, view_dims, trace })
    }

    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }

    pub fn alpha(&self) -> &[f64] {
        &self.projections.alpha
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub fn n_views(&self) -> usize {
        self.view_dims.len()
    }

    pub fn view_dims(&self) -> &[usize] {
        &self.view_dims
    }

    fn check_view(&self, v: usize) -> Result<()> {
        if v >= self.n_views() {
            return Err(Error::invalid(format!("view index {} out of range (m = {})", v + 1, self.n_views())));
        }
        Ok(())
    }

    pub fn view_metric(&self, v: usize) -> Result<Mahalanobis> {
        self.check_view(v)?;
        Ok(Mahalanobis::from_factor(self.projections.w[v].clone()))
    }

    /// `A_v = W_v W_v^T`
    pub fn metric_matrix(&self, v: usize) -> Result<DMatrix<f64>> {
        self.check_view(v)?;
        let w = &self.projections.w[v];
        Ok(w * w.transpose())
    }

    pub fn view_distance(&self, v: usize, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_view(v)?;
        let w = &self.projections.w[v];
        if x.len() != w.nrows() || y.len() != w.nrows() {
            return Err(Error::invalid(format!("view {} expects dimension {}", v + 1, w.nrows())));
        }
        Ok(w.tr_mul(&(x - y)).norm())
    }

    /// Multiview distance under an explicit weighting.
    pub fn weighted(&self, weighting: Weighting) -> WeightedModel<'_> {
        WeightedModel { model: self, weighting }
    }

    pub fn to_json(&self, config: Option<&serde_json::Value>) -> Result<String> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT.to_string(),
            m: self.n_views(),
            view_dims: self.view_dims.clone(),
            hyper: self.hyper.clone(),
            alpha: self.projections.alpha.clone(),
            projections: self.projections.w.iter().map(MatrixDoc::from_matrix).collect(),
            trace: self.trace.clone(),
            config: config.cloned(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT {
            return Err(Error::invalid(format!("unsupported model format {:?}", doc.format_version)));
        }
        if doc.m != doc.projections.len() || doc.view_dims.len() != doc.m {
            return Err(Error::invalid("model view count is inconsistent"));
        }
        let w = doc.projections.iter().map(MatrixDoc::to_matrix).collect::<Result<Vec<_>>>()?;
        if w.iter().zip(&doc.view_dims).any(|(w, &d)| w.nrows() != d) {
            return Err(Error::invalid("model view dimensions are inconsistent"));
        }
        SM2LModel::new(ProjectionSet { w, alpha: doc.alpha }, doc.hyper, doc.trace)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound { what: "model file", path: path.to_path_buf() },
            _ => Error::Io { path: path.to_path_buf(), source },
        })?;
        SM2LModel::from_json(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
    }
}

impl MultiviewMetric for SM2LModel {
    fn view_dims(&self) -> Vec<usize> {
        self.view_dims.clone()
    }

    fn embed(&self, v: usize, x: &DVector<f64>) -> DVector<f64> {
        self.projections.w[v].tr_mul(x)
    }

    fn view_weights(&self) -> Vec<f64> {
        Weighting::AlphaR.weights(self.alpha(), self.hyper.r)
    }
}

pub struct WeightedModel<'a> {
    model: &'a SM2LModel,
    weighting: Weighting,
}

impl MultiviewMetric for WeightedModel<'_> {
    fn view_dims(&self) -> Vec<usize> {
        self.model.view_dims.clone()
    }

    fn embed(&self, v: usize, x: &DVector<f64>) -> DVector<f64> {
        self.model.embed(v, x)
    }

    fn view_weights(&self) -> Vec<f64> {
        self.weighting.weights(self.model.alpha(), self.model.hyper.r)
    }
}

/// Identity metric on every view with uniform weights `1/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanMetric {
    pub view_dims: Vec<usize>,
}

impl MultiviewMetric for EuclideanMetric {
    fn view_dims(&self) -> Vec<usize> {
        self.view_dims.clone()
    }

    fn embed(&self, _v: usize, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn view_weights(&self) -> Vec<f64> {
        vec![1.0 / self.view_dims.len() as f64; self.view_dims.len()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixDoc {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        MatrixDoc { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::invalid("matrix data length does not match its shape"));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    format_version: String,
    m: usize,
    view_dims: Vec<usize>,
    #[serde(flatten)]
    hyper: Hyperparams,
    alpha: Vec<f64>,
    projections: Vec<MatrixDoc>,
    trace: TrainingTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

/// Outcome of sampling random triples against the metric axioms.
///
/// A rank-deficient `A_v` is a pseudometric: distinct points whose difference
/// lies in the null space of `W_v^T` are at distance 0. That is reported
/// through `distinguishable`, not counted as a violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub view: usize,
    pub dim: usize,
    pub rank: usize,
    pub trials: usize,
    pub triangle_violations: usize,
    pub max_triangle_violation: f64,
    pub negative_distances: usize,
    pub symmetry_violations: usize,
    /// Sampled distinct pairs with zero distance.
    pub zero_distance_pairs: usize,
    /// Whether `d(x, y) = 0` implies `x = y`, i.e. `A_v` has full rank.
    pub distinguishable: bool,
}

impl AxiomReport {
    pub fn has_violations(&self) -> bool {
        self.triangle_violations + self.negative_distances + self.symmetry_violations > 0
    }
}

/// Checks triangle inequality, non-negativity and symmetry of view `v`'s
/// distance on `trials` random triples drawn from `samples`.
pub fn check_metric_axioms(
    model: &SM2LModel,
    v: usize,
    samples: &[DVector<f64>],
    trials: usize,
    seed: u64,
) -> Result<AxiomReport> {
    if samples.len() < 3 {
        return Err(Error::invalid("axiom check needs at least 3 sample vectors"));
    }
    let metric = model.view_metric(v)?;
    let rank = metric
        .factor()
        .singular_values()
        .iter()
        .filter(|&&s| s > RANK_TOL)
        .count();
    let mut report = AxiomReport {
        view: v,
        dim: metric.dim(),
        rank,
        trials,
        triangle_violations: 0,
        max_triangle_violation: 0.0,
        negative_distances: 0,
        symmetry_violations: 0,
        zero_distance_pairs: 0,
        distinguishable: rank == metric.dim(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let idx = index::sample(&mut rng, samples.len(), 3).into_vec();
        let (x, y, z) = (&samples[idx[0]], &samples[idx[1]], &samples[idx[2]]);
        let dxy = metric.distance(x, y)?;
        let dyz = metric.distance(y, z)?;
        let dxz = metric.distance(x, z)?;
        for (a, b, d) in [(x, y, dxy), (y, z, dyz), (x, z, dxz)] {
            if d < 0.0 {
                report.negative_distances += 1;
            }
            if metric.distance(b, a)?.to_bits() != d.to_bits() {
                report.symmetry_violations += 1;
            }
            if d == 0.0 && a != b {
                report.zero_distance_pairs += 1;
            }
        }
        for excess in [dxz - dxy - dyz, dxy - dxz - dyz, dyz - dxy - dxz] {
            if excess > TRIANGLE_SLACK {
                report.triangle_violations += 1;
            }
            report.max_triangle_violation = report.max_triangle_violation.max(excess.max(0.0));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn model_from(w: Vec<DMatrix<f64>>, alpha: Vec<f64>) -> SM2LModel {
        let d = w[0].ncols();
        let dims: Vec<usize> = w.iter().map(|w| w.nrows()).collect();
        let hyper = Hyperparams { d, ..Hyperparams::for_dims(&dims) };
        SM2LModel::new(ProjectionSet { w, alpha }, hyper, TrainingTrace::default()).unwrap()
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    fn axes(rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::identity(rows, cols)
    }

    #[test]
    fn axis_projection_metric_matrix() {
        let m = model_from(vec![axes(4, 2)], vec![1.0]);
        let a = m.metric_matrix(0).unwrap();
        assert_eq!(a, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0])));
        assert!(m.metric_matrix(1).is_err());
    }

    #[test]
    fn metric_matrix_is_a_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = model_from(vec![random_orthonormal(&mut rng, 6, 3)], vec![1.0]);
        let a = m.metric_matrix(0).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (i, e) in ev.iter().enumerate() {
            let want = if i < 3 { 0.0 } else { 1.0 };
            assert!((e - want).abs() < 1e-8);
        }
        for _ in 0..100 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let quad = (x.transpose() * &a * &x)[(0, 0)];
            let proj = m.projections().w[0].tr_mul(&x).norm_squared();
            assert!((quad - proj).abs() < 1e-12);
        }
    }

    #[test]
    fn view_distance_cases() {
        let m = model_from(vec![axes(2, 2)], vec![1.0]);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let o = DVector::zeros(2);
        assert_eq!(m.view_distance(0, &x, &x).unwrap(), 0.0);
        assert_eq!(m.view_distance(0, &x, &o).unwrap(), 1.0);
        assert!(m.view_distance(0, &x, &DVector::zeros(3)).is_err());

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let a = Mahalanobis::from_matrix(&diag).unwrap();
        assert!((a.distance(&x, &o).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((a.matrix() - diag).amax() < 1e-15);
        assert!(Mahalanobis::from_matrix(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).is_err());
    }

    #[test]
    fn multiview_distance_weighting() {
        // Per-view distances 3 and 4 under alpha = (1/2, 1/2), r = 2.
        let m = model_from(vec![axes(1, 1), axes(1, 1)], vec![0.5, 0.5]);
        let xs = vec![DVector::from_vec(vec![3.0]), DVector::from_vec(vec![4.0])];
        let ys = vec![DVector::zeros(1), DVector::zeros(1)];
        assert!((m.multiview_distance(&xs, &ys).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(m.multiview_distance(&xs, &xs).unwrap(), 0.0);
        assert!(m.multiview_distance(&xs[..1], &ys[..1]).is_err());
        assert_eq!(m.weighted(Weighting::Uniform).multiview_distance(&xs, &ys).unwrap(), 5.0);
        let plain = m.weighted(Weighting::Alpha).multiview_distance(&xs, &ys).unwrap();
        assert!((plain - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_views_factor_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_orthonormal(&mut rng, 4, 2);
        let m = model_from(vec![w.clone(), w], vec![0.3, 0.7]);
        let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let single = m.view_distance(0, &x, &y).unwrap();
        let multi = m.multiview_distance(&[x.clone(), x], &[y.clone(), y]).unwrap();
        let scale = (0.3f64.powi(2) + 0.7f64.powi(2)).sqrt();
        assert!((multi - single * scale).abs() < 1e-12);
    }

    #[test]
    fn single_view_multiview_matches_view_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model_from(vec![random_orthonormal(&mut rng, 5, 2)], vec![1.0]);
        let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(
            m.multiview_distance(&[x.clone()], &[y.clone()]).unwrap(),
            m.view_distance(0, &x, &y).unwrap()
        );
    }

    #[test]
    fn rank_deficient_model_is_pseudometric() {
        let m = model_from(vec![axes(3, 2)], vec![1.0]);
        let samples = vec![
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
            DVector::from_vec(vec![1.0, 2.0, 5.0]),
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
        ];
        assert_eq!(m.view_distance(0, &samples[0], &samples[1]).unwrap(), 0.0);
        let r = check_metric_axioms(&m, 0, &samples, 50, 0).unwrap();
        assert_eq!(r.rank, 2);
        assert!(!r.distinguishable);
        assert!(!r.has_violations());
        assert!(r.zero_distance_pairs > 0);
        assert!(check_metric_axioms(&m, 0, &samples[..2], 5, 0).is_err());
    }

    #[test]
    fn random_model_has_no_triangle_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = model_from(vec![random_orthonormal(&mut rng, 6, 6)], vec![1.0]);
        let samples: Vec<DVector<f64>> =
            (0..30).map(|_| DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0))).collect();
        let r = check_metric_axioms(&m, 0, &samples, 1000, 7).unwrap();
        assert!(r.distinguishable && !r.has_violations(), "{r:?}");
        assert_eq!(r.rank, 6);
    }

    #[test]
    fn model_validation() {
        let bad = ProjectionSet { w: vec![DMatrix::from_element(2, 1, 1.0)], alpha: vec![1.0] };
        assert!(SM2LModel::new(bad, Hyperparams::for_dims(&[1]), TrainingTrace::default()).is_err());
        let bad = ProjectionSet { w: vec![axes(2, 1), axes(2, 1)], alpha: vec![0.5, 0.6] };
        assert!(SM2LModel::new(bad, Hyperparams::for_dims(&[1]), TrainingTrace::default()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model_from(
            vec![random_orthonormal(&mut rng, 4, 2), random_orthonormal(&mut rng, 3, 2)],
            vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)],
        );
        let text = m.to_json(None).unwrap();
        assert_eq!(SM2LModel::from_json(&text).unwrap(), m);
        assert!(SM2LModel::from_json(&text.replace("mvmetric-model/1", "other")).is_err());
        assert!(SM2LModel::from_json("{ not json").is_err());
    }
}
