//! Nearest-neighbour evaluation over repeated random splits.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::build_constraints;
use crate::dataset::{split, Label, MultiviewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::metric::{EuclideanMetric, MultiviewMetric, Weighting};
use crate::solver::{train, Hyperparams};

/// Training samples embedded once under a metric, ready for neighbour queries.
pub struct NeighborIndex<'a, M: MultiviewMetric + ?Sized> {
    metric: &'a M,
    weights: Vec<f64>,
    /// `embedded[v][i]`
    embedded: Vec<Vec<DVector<f64>>>,
    labels: Vec<Label>,
}

impl<'a, M: MultiviewMetric + ?Sized> NeighborIndex<'a, M> {
    pub fn new(metric: &'a M, train_views: &[ViewMatrix], train_labels: &[Label]) -> Result<Self> {
        let dims = metric.view_dims();
        if train_labels.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        if train_views.len() != dims.len() {
            return Err(Error::invalid(format!("expected {} views", dims.len())));
        }
        for (view, &dim) in train_views.iter().zip(&dims) {
            if view.dim() != dim || view.n_samples() != train_labels.len() {
                return Err(Error::invalid("training views do not match the metric or labels"));
            }
        }
        let embedded = train_views
            .iter()
            .enumerate()
            .map(|(v, view)| (0..view.n_samples()).map(|i| metric.embed(v, &view.sample(i))).collect())
            .collect();
        Ok(NeighborIndex { metric, weights: metric.view_weights(), embedded, labels: train_labels.to_vec() })
    }

    /// Squared multiview distance from `sample` to every training sample.
    fn squared_distances(&self, sample: &[DVector<f64>]) -> Result<Vec<f64>> {
        let dims = self.metric.view_dims();
        if sample.len() != dims.len() || sample.iter().zip(&dims).any(|(x, &d)| x.len() != d) {
            return Err(Error::invalid("query sample does not match the view layout"));
        }
        let query: Vec<DVector<f64>> = sample.iter().enumerate().map(|(v, x)| self.metric.embed(v, x)).collect();
        Ok((0..self.labels.len())
            .map(|i| {
                (0..query.len())
                    .map(|v| self.weights[v] * (&self.embedded[v][i] - &query[v]).norm_squared())
                    .sum()
            })
            .collect())
    }

    /// Majority label among the `k` nearest training samples.
    ///
    /// Equal distances go to the lower training index; a tied vote goes to
    /// the tied label whose member is nearest.
    pub fn classify(&self, sample: &[DVector<f64>], k: usize) -> Result<Label> {
        if k < 1 || k > self.labels.len() {
            return Err(Error::invalid(format!("k must be in [1, {}], got {k}", self.labels.len())));
        }
        let dist = self.squared_distances(sample)?;
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        let nearest = &order[..k];

        let mut votes: BTreeMap<Label, usize> = BTreeMap::new();
        for &i in nearest {
            *votes.entry(self.labels[i]).or_default() += 1;
        }
        let best = votes.values().copied().max().unwrap_or(0);
        let label = nearest
            .iter()
            .map(|&i| self.labels[i])
            .find(|l| votes[l] == best)
            .expect("k >= 1");
        Ok(label)
    }
}

/// Classifies one sample by `k`-nearest neighbours under `metric`.
pub fn knn_classify<M: MultiviewMetric + ?Sized>(
    metric: &M,
    train_views: &[ViewMatrix],
    train_labels: &[Label],
    test_sample: &[DVector<f64>],
    k: usize,
) -> Result<Label> {
    NeighborIndex::new(metric, train_views, train_labels)?.classify(test_sample, k)
}

/// Fraction of test samples classified correctly.
pub fn accuracy<M: MultiviewMetric + ?Sized>(
    metric: &M,
    dataset: &MultiviewDataset,
    train_indices: &[usize],
    test_indices: &[usize],
    k: usize,
) -> Result<f64> {
    let index = NeighborIndex::new(metric, &dataset.select_views(train_indices), &dataset.select_labels(train_indices))?;
    let mut correct = 0usize;
    for &i in test_indices {
        if index.classify(&dataset.sample(i), k)? == dataset.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub train_count: usize,
    pub trials: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub max_pairs: Option<usize>,
    #[serde(default)]
    pub weighting: Weighting,
    /// Also score the Euclidean baseline on the same splits.
    #[serde(default)]
    pub baseline: bool,
    /// Worker threads for trials; 0 uses the rayon default.
    #[serde(skip)]
    pub threads: usize,
}

fn default_k() -> usize {
    1
}

impl EvalConfig {
    pub fn new(train_count: usize, trials: usize, seed: u64, hyper: Hyperparams) -> Self {
        EvalConfig {
            train_count,
            trials,
            seed,
            hyper,
            k: 1,
            max_pairs: None,
            weighting: Weighting::AlphaR,
            baseline: false,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub accuracy: f64,
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub per_trial_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub max_accuracy: f64,
}

impl AccuracySummary {
    pub fn from_accuracies(per_trial_accuracy: Vec<f64>) -> Self {
        let mean_accuracy = per_trial_accuracy.iter().sum::<f64>() / per_trial_accuracy.len() as f64;
        let max_accuracy = per_trial_accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        AccuracySummary { per_trial_accuracy, mean_accuracy, max_accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: String,
    pub config: EvalConfig,
    pub per_trial_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub max_accuracy: f64,
    pub alpha_per_trial: Vec<Vec<f64>>,
    pub trials: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<AccuracySummary>,
}

impl EvalReport {
    /// One row per trial: `trial,seed,accuracy,baseline_accuracy,alpha_1..alpha_m`.
    pub fn summary_csv(&self) -> String {
        let m = self.alpha_per_trial.first().map_or(0, Vec::len);
        let mut out = String::from("trial,seed,accuracy,baseline_accuracy");
        for v in 1..=m {
            out.push_str(&format!(",alpha_{v}"));
        }
        out.push('\n');
        for t in &self.trials {
            let base = t.baseline_accuracy.map(|b| b.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}", t.trial, t.seed, t.accuracy, base));
            for a in &t.alpha {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pretty JSON with a trailing newline.
pub fn report_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Seed of trial `t`: SplitMix64 applied to `master + t`, so any trial can be
/// rerun on its own.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    splitmix64(master.wrapping_add(trial as u64))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one trial: split, constraints, training, then 1NN scoring.
pub fn run_trial(dataset: &MultiviewDataset, config: &EvalConfig, trial: usize) -> Result<TrialRecord> {
    let seed = trial_seed(config.seed, trial);
    let spec = split(dataset, config.train_count, seed)?;
    let train_labels = dataset.select_labels(&spec.train_indices);
    let constraints = build_constraints(&train_labels, config.max_pairs, splitmix64(seed))?;
    let model = train(dataset, &spec, &constraints, &config.hyper)?;
    let acc = accuracy(
        &model.weighted(config.weighting),
        dataset,
        &spec.train_indices,
        &spec.test_indices,
        config.k,
    )?;
    let baseline_accuracy = if config.baseline {
        let euclid = EuclideanMetric { view_dims: dataset.view_dims() };
        Some(accuracy(&euclid, dataset, &spec.train_indices, &spec.test_indices, config.k)?)
    } else {
        None
    };
    Ok(TrialRecord {
        trial,
        seed,
        accuracy: acc,
        alpha: model.alpha().to_vec(),
        iterations: model.trace().iterations.len(),
        converged: model.trace().converged,
        baseline_accuracy,
        train_indices: spec.train_indices,
        test_indices: spec.test_indices,
    })
}

/// Repeated random-split benchmark. Trials run in parallel and are collected
/// in trial order, so the report does not depend on scheduling.
pub fn run_benchmark(dataset: &MultiviewDataset, config: &EvalConfig) -> Result<EvalReport> {
    if config.trials < 1 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    config.hyper.validate(&dataset.view_dims())?;
    let run = || -> Result<Vec<TrialRecord>> {
        (0..config.trials).into_par_iter().map(|t| run_trial(dataset, config, t)).collect()
    };
    let trials = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };

    let summary = AccuracySummary::from_accuracies(trials.iter().map(|t| t.accuracy).collect());
    let baseline = config
        .baseline
        .then(|| AccuracySummary::from_accuracies(trials.iter().filter_map(|t| t.baseline_accuracy).collect()));
    Ok(EvalReport {
        format_version: crate::FORMAT_VERSION.to_string(),
        config: config.clone(),
        per_trial_accuracy: summary.per_trial_accuracy,
        mean_accuracy: summary.mean_accuracy,
        max_accuracy: summary.max_accuracy,
        alpha_per_trial: trials.iter().map(|t| t.alpha.clone()).collect(),
        trials,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use nalgebra::DMatrix;

    fn euclid(dims: Vec<usize>) -> EuclideanMetric {
        EuclideanMetric { view_dims: dims }
    }

    fn line_views(points: &[f64]) -> Vec<ViewMatrix> {
        vec![
            ViewMatrix { view_id: 0, data: DMatrix::from_row_slice(1, points.len(), points) },
            ViewMatrix { view_id: 1, data: DMatrix::zeros(1, points.len()) },
        ]
    }

    fn query(x: f64) -> Vec<DVector<f64>> {
        vec![DVector::from_vec(vec![x]), DVector::zeros(1)]
    }

    #[test]
    fn nearest_of_two() {
        let views = line_views(&[1.0, 2.0]);
        let m = euclid(vec![1, 1]);
        assert_eq!(knn_classify(&m, &views, &[5, 6], &query(0.0), 1).unwrap(), 5);
        assert_eq!(knn_classify(&m, &views, &[5, 6], &query(1.6), 1).unwrap(), 6);
    }

    #[test]
    fn exact_copy_wins_and_distance_ties_go_to_lower_index() {
        let views = line_views(&[3.0, -1.0, 1.0]);
        let m = euclid(vec![1, 1]);
        assert_eq!(knn_classify(&m, &views, &[0, 1, 2], &query(3.0), 1).unwrap(), 0);
        // -1 and 1 are equidistant from 0.
        assert_eq!(knn_classify(&m, &views, &[0, 1, 2], &query(0.0), 1).unwrap(), 1);
    }

    #[test]
    fn vote_ties_go_to_nearest_tied_label() {
        let views = line_views(&[0.5, 1.0, 2.0, 3.0, 9.0]);
        let m = euclid(vec![1, 1]);
        // k = 4: labels 7, 8, 8, 7 -> tie, nearest member is label 7.
        assert_eq!(knn_classify(&m, &views, &[7, 8, 8, 7, 8], &query(0.0), 4).unwrap(), 7);
        assert_eq!(knn_classify(&m, &views, &[7, 8, 8, 7, 8], &query(0.0), 3).unwrap(), 8);
    }

    #[test]
    fn invalid_queries() {
        let views = line_views(&[1.0, 2.0]);
        let m = euclid(vec![1, 1]);
        assert!(knn_classify(&m, &views, &[0, 1], &query(0.0), 0).is_err());
        assert!(knn_classify(&m, &views, &[0, 1], &query(0.0), 3).is_err());
        assert!(knn_classify(&m, &views, &[0, 1], &query(0.0)[..1], 1).is_err());
        let empty: Vec<ViewMatrix> = vec![];
        assert!(knn_classify(&euclid(vec![]), &empty, &[], &[], 1).is_err());
    }

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(7, 4));
        assert_ne!(trial_seed(7, 0), trial_seed(8, 0));
    }

    #[test]
    fn memorized_classes_score_perfectly() {
        // Every member of a class is the same point, so each test sample has
        // a zero-distance copy in the training set.
        let n = 12;
        let labels: Vec<Label> = (0..n).map(|i| (i % 3) as Label).collect();
        let v1 = DMatrix::from_fn(3, n, |r, c| if r == c % 3 { 4.0 } else { 0.0 });
        let v2 = DMatrix::from_fn(2, n, |r, c| (r + c % 3) as f64);
        let ds = MultiviewDataset::new(vec![v1, v2], labels).unwrap();
        let hyper = Hyperparams { d: 2, ..Hyperparams::for_dims(&[3, 2]) };
        let report = run_benchmark(&ds, &EvalConfig::new(9, 1, 4, hyper)).unwrap();
        assert_eq!(report.per_trial_accuracy, vec![1.0]);
    }

    #[test]
    fn benchmark_is_deterministic_and_consistent() {
        let ds = generate_synthetic(&SyntheticSpec {
            classes: 2,
            per_class: 15,
            view_dims: vec![4, 3],
            noise_views: Default::default(),
            seed: 12,
        })
        .unwrap();
        let mut config = EvalConfig::new(20, 3, 99, Hyperparams::for_dims(&[4, 3]));
        config.baseline = true;
        let a = run_benchmark(&ds, &config).unwrap();
        config.threads = 1;
        let mut b = run_benchmark(&ds, &config).unwrap();
        b.config.threads = 0;
        assert_eq!(a, b);
        assert_eq!(a.per_trial_accuracy.len(), 3);
        let mean = a.per_trial_accuracy.iter().sum::<f64>() / 3.0;
        assert_eq!(a.mean_accuracy, mean);
        assert_eq!(a.max_accuracy, a.per_trial_accuracy.iter().copied().fold(0.0, f64::max));
        for t in &a.trials {
            assert_eq!(t.test_indices.len(), 10);
            let correct = (t.accuracy * 10.0).round();
            assert_eq!(correct / 10.0, t.accuracy);
        }
        assert!(a.baseline.is_some());
        assert_eq!(a.summary_csv().lines().count(), 4);

        let mut zero = config.clone();
        zero.trials = 0;
        assert!(run_benchmark(&ds, &zero).is_err());
    }
}
