//! Margin scatter matrices and cross-view correlation blocks.

use nalgebra::DMatrix;

use crate::constraints::ConstraintSet;
use crate::dataset::ViewMatrix;
use crate::error::{Error, Result};

/// Averaged pair scatters of one view.
///
/// `m_d = (1/N_D) sum_{(i,j) in D} (x_i - x_j)(x_i - x_j)^T`, and `m_s` the
/// same over similar pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPair {
    pub view_id: usize,
    pub m_d: DMatrix<f64>,
    pub m_s: DMatrix<f64>,
}

impl ScatterPair {
    /// `M_D - M_S`, exactly symmetric.
    pub fn margin(&self) -> DMatrix<f64> {
        &self.m_d - &self.m_s
    }
}

/// `C^{vw} = X^v (X^w)^T` over training columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    pub v: usize,
    pub w: usize,
    pub c: DMatrix<f64>,
}

/// Computes `M_D` and `M_S` for `view`, whose columns are the samples the
/// constraint indices refer to.
///
/// Each pair average is evaluated as `X L X^T` with `L` the (count
/// normalized) Laplacian of the pair graph, which equals the outer-product
/// sum but costs `O(D n^2 + D^2 n)` instead of `O(D^2 |pairs|)`.
pub fn compute_scatter(view: &ViewMatrix, constraints: &ConstraintSet) -> Result<ScatterPair> {
    if let Some(max) = constraints.max_index() {
        if max >= view.n_samples() {
            return Err(Error::invalid(format!(
                "constraint index {max} out of range for {} samples",
                view.n_samples()
            )));
        }
    }
    let m_d = pair_scatter(&view.data, &constraints.dissimilar);
    let m_s = pair_scatter(&view.data, &constraints.similar);
    Ok(ScatterPair { view_id: view.view_id, m_d, m_s })
}

fn pair_scatter(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let n = x.ncols();
    let dim = x.nrows();
    if pairs.is_empty() {
        return DMatrix::zeros(dim, dim);
    }
    // Integer counts first so that duplicated pair lists normalize exactly.
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in pairs {
        counts[(i, i)] += 1.0;
        counts[(j, j)] += 1.0;
        counts[(i, j)] -= 1.0;
        counts[(j, i)] -= 1.0;
    }
    let laplacian = counts / pairs.len() as f64;
    let m = x * laplacian * x.transpose();
    symmetrize(m)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Cross-correlation `X^v_train (X^w_train)^T` (no centering).
///
/// The product is always formed with the lower view id on the left and
/// transposed otherwise, so `C^{vw}` and `C^{wv}` are exact transposes.
pub fn compute_cross(view_v: &ViewMatrix, view_w: &ViewMatrix, train_indices: &[usize]) -> Result<CrossCorrelation> {
    compute_cross_with(view_v, view_w, train_indices, false)
}

/// As [`compute_cross`], optionally centering each view over the training
/// columns first.
pub fn compute_cross_with(
    view_v: &ViewMatrix,
    view_w: &ViewMatrix,
    train_indices: &[usize],
    center: bool,
) -> Result<CrossCorrelation> {
    if view_v.view_id == view_w.view_id {
        return Err(Error::invalid("cross-correlation needs two distinct views"));
    }
    if view_v.n_samples() != view_w.n_samples() {
        return Err(Error::invalid("views do not share the sample axis"));
    }
    if let Some(&bad) = train_indices.iter().find(|&&i| i >= view_v.n_samples()) {
        return Err(Error::invalid(format!("train index {bad} out of range")));
    }
    let prep = |view: &ViewMatrix| {
        let mut x = view.data.select_columns(train_indices);
        if center && x.ncols() > 0 {
            let mean = x.column_mean();
            for mut col in x.column_iter_mut() {
                col -= &mean;
            }
        }
        x
    };
    let (xv, xw) = (prep(view_v), prep(view_w));
    let c = if view_v.view_id < view_w.view_id {
        &xv * xw.transpose()
    } else {
        (&xw * xv.transpose()).transpose()
    };
    Ok(CrossCorrelation { v: view_v.view_id, w: view_w.view_id, c })
}

/// Scatters for every view and cross blocks for every ordered view pair,
/// computed on the training columns of a dataset.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub scatters: Vec<ScatterPair>,
    /// `crosses[v][w]`, `None` on the diagonal.
    pub crosses: Vec<Vec<Option<CrossCorrelation>>>,
}

impl ProblemData {
    /// `train_views` hold only training columns; constraint indices refer to them.
    pub fn compute(train_views: &[ViewMatrix], constraints: &ConstraintSet, center_cross: bool) -> Result<Self> {
        let scatters = train_views
            .iter()
            .map(|v| compute_scatter(v, constraints))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..train_views.first().map_or(0, ViewMatrix::n_samples)).collect();
        let m = train_views.len();
        let mut crosses = vec![vec![None; m]; m];
        for v in 0..m {
            for w in v + 1..m {
                let c = compute_cross_with(&train_views[v], &train_views[w], &all, center_cross)?;
                crosses[w][v] = Some(CrossCorrelation { v: c.w, w: c.v, c: c.c.transpose() });
                crosses[v][w] = Some(c);
            }
        }
        Ok(ProblemData { scatters, crosses })
    }

    pub fn n_views(&self) -> usize {
        self.scatters.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.scatters.iter().map(|s| s.m_d.nrows()).collect()
    }

    pub fn cross(&self, v: usize, w: usize) -> &DMatrix<f64> {
        &self.crosses[v][w].as_ref().expect("no cross block on the diagonal").c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(id: usize, data: DMatrix<f64>) -> ViewMatrix {
        ViewMatrix { view_id: id, data }
    }

    fn random_view(id: usize, dim: usize, n: usize, rng: &mut ChaCha8Rng) -> ViewMatrix {
        view(id, DMatrix::from_fn(dim, n, |_, _| rng.random_range(-2.0..2.0)))
    }

    fn naive(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
        let d = x.nrows();
        let mut m = DMatrix::zeros(d, d);
        for &(i, j) in pairs {
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] += (x[(a, i)] - x[(a, j)]) * (x[(b, i)] - x[(b, j)]);
                }
            }
        }
        m / pairs.len() as f64
    }

    #[test]
    fn single_dissimilar_pair() {
        let v = view(0, DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]));
        let c = ConstraintSet { similar: vec![(1, 2)], dissimilar: vec![(0, 1)] };
        let s = compute_scatter(&v, &c).unwrap();
        assert_eq!(s.m_d, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn identical_similar_pairs_give_zero() {
        let v = view(0, DMatrix::from_column_slice(2, 3, &[1.0, 2.0, 1.0, 2.0, 5.0, 5.0]));
        let c = ConstraintSet { similar: vec![(0, 1)], dissimilar: vec![(0, 2), (1, 2)] };
        let s = compute_scatter(&v, &c).unwrap();
        assert_eq!(s.m_s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn out_of_range_index() {
        let v = view(0, DMatrix::zeros(2, 3));
        let c = ConstraintSet { similar: vec![(0, 1)], dissimilar: vec![(0, 3)] };
        assert!(compute_scatter(&v, &c).is_err());
    }

    #[test]
    fn matches_naive_on_three_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels = [0, 1, 0, 2, 1, 0];
        let c = crate::constraints::build_constraints(&labels, None, 0).unwrap();
        for id in 0..3 {
            let v = random_view(id, 2 + id, 6, &mut rng);
            let s = compute_scatter(&v, &c).unwrap();
            assert!((&s.m_d - naive(&v.data, &c.dissimilar)).amax() < 1e-12);
            assert!((&s.m_s - naive(&v.data, &c.similar)).amax() < 1e-12);
        }
    }

    #[test]
    fn scatters_are_psd_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<i64> = (0..12).map(|i| i % 3).collect();
        let c = crate::constraints::build_constraints(&labels, None, 0).unwrap();
        let v = random_view(0, 6, 12, &mut rng);
        let s = compute_scatter(&v, &c).unwrap();
        for m in [&s.m_d, &s.m_s] {
            assert_eq!(m, &m.transpose());
            let eig = SymmetricEigen::new(m.clone());
            assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn duplicated_pairs_leave_scatter_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels: Vec<i64> = (0..9).map(|i| i % 2).collect();
        let c = crate::constraints::build_constraints(&labels, None, 0).unwrap();
        let doubled = ConstraintSet {
            similar: c.similar.iter().chain(&c.similar).copied().collect(),
            dissimilar: c.dissimilar.iter().chain(&c.dissimilar).copied().collect(),
        };
        let v = random_view(0, 4, 9, &mut rng);
        assert_eq!(compute_scatter(&v, &c).unwrap(), compute_scatter(&v, &doubled).unwrap());
    }

    #[test]
    fn cross_single_sample_outer_product() {
        let a = view(0, DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 9.0, 9.0]));
        let b = view(1, DMatrix::from_column_slice(1, 2, &[3.0, 9.0]));
        let c = compute_cross(&a, &b, &[0]).unwrap();
        assert_eq!(c.c, DMatrix::from_column_slice(2, 1, &[3.0, 6.0]));
        assert!(compute_cross(&a, &a, &[0]).is_err());
    }

    #[test]
    fn cross_of_duplicated_view_is_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_view(0, 4, 7, &mut rng);
        let b = ViewMatrix { view_id: 1, ..a.clone() };
        let idx: Vec<usize> = (0..7).collect();
        let c = compute_cross(&a, &b, &idx).unwrap().c;
        assert_eq!(c, c.transpose());
        assert!(SymmetricEigen::new(c).eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn cross_matches_per_sample_sum_and_transposes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_view(0, 4, 6, &mut rng);
        let b = random_view(1, 3, 6, &mut rng);
        let idx = [0, 2, 3, 5];
        let c = compute_cross(&a, &b, &idx).unwrap();
        let mut oracle = DMatrix::zeros(4, 3);
        for &i in &idx {
            oracle += a.data.column(i) * b.data.column(i).transpose();
        }
        assert!((&c.c - oracle).amax() < 1e-12);
        assert_eq!(compute_cross(&b, &a, &idx).unwrap().c, c.c.transpose());
    }

    #[test]
    fn centered_cross_has_zero_mean_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_view(0, 3, 8, &mut rng);
        let ones = view(1, DMatrix::from_element(1, 8, 1.0));
        let idx: Vec<usize> = (0..8).collect();
        let c = compute_cross_with(&a, &ones, &idx, true).unwrap();
        assert!(c.c.amax() < 1e-12);
    }
}
