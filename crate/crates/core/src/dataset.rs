//! Multiview datasets: loading, writing, splitting and synthesis.
//!
//! On disk every view is a comma-separated file with one sample per row and no
//! header; labels are one integer per line. In memory a view is stored as a
//! `D_v x n` matrix (features by samples), so column `i` of every view
//! describes sample `i`.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label of a sample.
pub type Label = i64;

const SPLIT_RETRIES: usize = 100;
const CLASS_SEPARATION: f64 = 4.0;

/// One view of the data, `D_v x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub view_id: usize,
    pub data: DMatrix<f64>,
}

impl ViewMatrix {
    pub fn new(view_id: usize, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 1 {
            return Err(Error::invalid(format!("view {} has no features", view_id + 1)));
        }
        if data.ncols() < 2 {
            return Err(Error::invalid(format!("view {} needs at least 2 samples", view_id + 1)));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("view {} contains non-finite values", view_id + 1)));
        }
        Ok(ViewMatrix { view_id, data })
    }

    /// Feature dimensionality `D_v`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Copy of the listed sample columns, in the given order.
    pub fn select(&self, indices: &[usize]) -> ViewMatrix {
        ViewMatrix {
            view_id: self.view_id,
            data: self.data.select_columns(indices),
        }
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }
}

/// Aligned views over the same samples plus one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewDataset {
    views: Vec<ViewMatrix>,
    labels: Vec<Label>,
    names: Option<Vec<String>>,
}

impl MultiviewDataset {
    /// Builds a dataset from `D_v x n` view matrices.
    ///
    /// A single view is accepted so that the degenerate single-view problem
    /// stays expressible; files and the synthetic generator always carry at
    /// least two views.
    pub fn new(views: Vec<DMatrix<f64>>, labels: Vec<Label>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("dataset has no views"));
        }
        let n = views[0].ncols();
        let views = views
            .into_iter()
            .enumerate()
            .map(|(v, data)| ViewMatrix::new(v, data))
            .collect::<Result<Vec<_>>>()?;
        if views.iter().any(|v| v.n_samples() != n) {
            return Err(Error::invalid("sample count mismatch across views"));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "label count {} does not match sample count {}",
                labels.len(),
                n
            )));
        }
        if distinct(&labels) < 2 {
            return Err(Error::invalid("fewer than 2 classes"));
        }
        Ok(MultiviewDataset { views, labels, names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.views.len() {
            return Err(Error::invalid("view name count does not match view count"));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &ViewMatrix {
        &self.views[v]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Number of views `m`.
    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(ViewMatrix::dim).collect()
    }

    /// Per-view feature vectors of sample `i`.
    pub fn sample(&self, i: usize) -> Vec<DVector<f64>> {
        self.views.iter().map(|v| v.sample(i)).collect()
    }

    /// Per-view column subsets for the given sample indices.
    pub fn select_views(&self, indices: &[usize]) -> Vec<ViewMatrix> {
        self.views.iter().map(|v| v.select(indices)).collect()
    }

    pub fn select_labels(&self, indices: &[usize]) -> Vec<Label> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Per-feature standardization to zero mean and unit variance.
    /// Constant features are only centered.
    pub fn standardized(&self) -> MultiviewDataset {
        let n = self.n_samples() as f64;
        let views = self
            .views
            .iter()
            .map(|view| {
                let mut data = view.data.clone();
                for mut row in data.row_iter_mut() {
                    let mean = row.sum() / n;
                    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    for x in row.iter_mut() {
                        *x -= mean;
                        if sd > 0.0 {
                            *x /= sd;
                        }
                    }
                }
                ViewMatrix { view_id: view.view_id, data }
            })
            .collect();
        MultiviewDataset { views, labels: self.labels.clone(), names: self.names.clone() }
    }
}

fn distinct(labels: &[Label]) -> usize {
    labels.iter().collect::<HashSet<_>>().len()
}

/// Train/test partition of sample indices. Both lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Draws `train_count` training samples uniformly without replacement.
///
/// Draws covering fewer than two classes are rejected and redrawn from the
/// same random stream, up to a fixed number of attempts.
pub fn split(dataset: &MultiviewDataset, train_count: usize, seed: u64) -> Result<SplitSpec> {
    let n = dataset.n_samples();
    if train_count < 2 || train_count + 1 > n {
        return Err(Error::invalid(format!(
            "train count must be in [2, {}], got {}",
            n.saturating_sub(1),
            train_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SPLIT_RETRIES {
        let mut train = index::sample(&mut rng, n, train_count).into_vec();
        train.sort_unstable();
        if distinct(&dataset.select_labels(&train)) < 2 {
            continue;
        }
        let in_train: HashSet<usize> = train.iter().copied().collect();
        let test = (0..n).filter(|i| !in_train.contains(i)).collect();
        return Ok(SplitSpec { train_indices: train, test_indices: test, seed });
    }
    Err(Error::invalid(format!(
        "could not draw a training set with at least 2 classes after {SPLIT_RETRIES} attempts"
    )))
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub view_dims: Vec<usize>,
    /// Zero-based indices of views that carry pure noise.
    pub noise_views: BTreeSet<usize>,
    pub seed: u64,
}

/// Generates a labelled multiview dataset.
///
/// Samples are ordered class by class, with label `c` for class `c`. In an
/// informative view each class is a unit-variance Gaussian whose mean is a
/// random direction; the set of means is rescaled so the closest pair sits
/// exactly 4 units apart. Noise views are i.i.d. standard normal.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiviewDataset> {
    if spec.classes < 2 {
        return Err(Error::invalid("classes must be at least 2"));
    }
    if spec.per_class < 2 {
        return Err(Error::invalid("per-class count must be at least 2"));
    }
    if spec.view_dims.len() < 2 {
        return Err(Error::invalid("at least 2 views are required"));
    }
    if spec.view_dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid("every view dimension must be at least 2"));
    }
    if let Some(&v) = spec.noise_views.iter().find(|&&v| v >= spec.view_dims.len()) {
        return Err(Error::invalid(format!("noise view {} out of range", v + 1)));
    }

    let n = spec.classes * spec.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut views = Vec::with_capacity(spec.view_dims.len());
    for (v, &dim) in spec.view_dims.iter().enumerate() {
        let view = if spec.noise_views.contains(&v) {
            DMatrix::from_fn(dim, n, |_, _| normal())
        } else {
            let means = class_means(dim, spec.classes, &mut normal);
            let mut data = DMatrix::zeros(dim, n);
            for i in 0..n {
                let c = i / spec.per_class;
                for f in 0..dim {
                    data[(f, i)] = means[(f, c)] + normal();
                }
            }
            data
        };
        views.push(view);
    }
    let labels = (0..n).map(|i| (i / spec.per_class) as Label).collect();
    MultiviewDataset::new(views, labels)
}

fn class_means(dim: usize, classes: usize, normal: &mut impl FnMut() -> f64) -> DMatrix<f64> {
    loop {
        let means = DMatrix::from_fn(dim, classes, |_, _| normal());
        let mut closest = f64::INFINITY;
        for a in 0..classes {
            for b in a + 1..classes {
                closest = closest.min((means.column(a) - means.column(b)).norm());
            }
        }
        if closest > 1e-9 {
            return means * (CLASS_SEPARATION / closest);
        }
    }
}

/// JSON manifest naming the files of a dataset. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<String>,
    pub views: Vec<PathBuf>,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    /// Settings that produced the files, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Loads view files (samples as rows) and a labels file.
pub fn load_dataset<P: AsRef<Path>>(view_paths: &[P], labels_path: impl AsRef<Path>) -> Result<MultiviewDataset> {
    if view_paths.len() < 2 {
        return Err(Error::invalid("at least 2 view files are required"));
    }
    let labels = read_labels(labels_path.as_ref())?;
    let mut views = Vec::with_capacity(view_paths.len());
    for p in view_paths {
        views.push(read_view(p.as_ref())?);
    }
    let n = views[0].ncols();
    if views.iter().any(|v| v.ncols() != n) {
        return Err(Error::invalid("sample count mismatch across views"));
    }
    MultiviewDataset::new(views, labels)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<MultiviewDataset> {
    let path = path.as_ref();
    let text = read_to_string(path, "manifest file")?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let views: Vec<PathBuf> = manifest.views.iter().map(|p| base.join(p)).collect();
    let dataset = load_dataset(&views, base.join(&manifest.labels))?;
    match manifest.names {
        Some(names) => dataset.with_names(names),
        None => Ok(dataset),
    }
}

/// Writes `view_<v>.csv`, `labels.csv` and `manifest.json` into `dir` and
/// returns the manifest path. Values are written in shortest round-trip form.
pub fn write_dataset(dataset: &MultiviewDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    write_dataset_with_config(dataset, dir, None)
}

/// As [`write_dataset`], recording `config` in the manifest.
pub fn write_dataset_with_config(
    dataset: &MultiviewDataset,
    dir: impl AsRef<Path>,
    config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut view_files = Vec::new();
    for view in dataset.views() {
        let name = PathBuf::from(format!("view_{}.csv", view.view_id + 1));
        write_view(&dir.join(&name), &view.data)?;
        view_files.push(name);
    }
    let labels_name = PathBuf::from("labels.csv");
    let labels: String = dataset.labels().iter().map(|l| format!("{l}\n")).collect();
    write_file(&dir.join(&labels_name), labels.as_bytes())?;

    let manifest = Manifest {
        format_version: Some(crate::FORMAT_VERSION.to_string()),
        views: view_files,
        labels: labels_name,
        names: dataset.names().map(<[String]>::to_vec),
        config,
    };
    let manifest_path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&manifest_path, json.as_bytes())?;
    Ok(manifest_path)
}

fn read_to_string(path: &Path, what: &'static str) -> Result<String> {
    fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound { what, path: path.to_path_buf() },
        _ => Error::Io { path: path.to_path_buf(), source },
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn read_view(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_to_string(path, "view file")?;
    let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .map_err(|_| parse_err(format!("non-numeric cell {cell:?} at row {}, column {}", r + 1, c + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let Some(width) = rows.first().map(Vec::len) else {
        return Err(parse_err("empty view file".into()));
    };
    // Samples are rows on disk; transpose to features x samples.
    Ok(DMatrix::from_fn(width, rows.len(), |f, i| rows[i][f]))
}

fn write_view(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..data.ncols() {
        let row: Vec<String> = data.column(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let text = read_to_string(path, "labels file")?;
    text.lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.parse::<Label>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("non-integer label {l:?} on line {}", i + 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: &[usize], seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            per_class: 20,
            view_dims: vec![5, 5],
            noise_views: noise.iter().copied().collect(),
            seed,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_two_views() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "1,2,3\n4,5,6\n7,8,9\n1,1,1\n0,0,0\n");
        let b = write(dir.path(), "b.csv", "1,2,3,4\n4,5,6,7\n7,8,9,1\n1,1,1,1\n0,0,0,0\n");
        let l = write(dir.path(), "l.csv", "0\n0\n1\n1\n1\n");
        let ds = load_dataset(&[a, b], l).unwrap();
        assert_eq!(ds.n_views(), 2);
        assert_eq!(ds.n_samples(), 5);
        assert_eq!(ds.view_dims(), vec![3, 4]);
        assert_eq!(ds.view(0).data[(2, 1)], 6.0);
    }

    #[test]
    fn load_rejects_mismatched_rows() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "1\n2\n3\n4\n5\n");
        let b = write(dir.path(), "b.csv", "1\n2\n3\n4\n5\n6\n");
        let l = write(dir.path(), "l.csv", "0\n0\n1\n1\n1\n");
        let err = load_dataset(&[a, b], l).unwrap_err();
        assert!(err.to_string().contains("sample count mismatch"), "{err}");
    }

    #[test]
    fn load_rejects_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "1\n2\n3\n");
        let b = write(dir.path(), "b.csv", "1\n2\n3\n");
        let l = write(dir.path(), "l.csv", "4\n4\n4\n");
        let err = load_dataset(&[a, b], l).unwrap_err();
        assert!(err.to_string().contains("fewer than 2 classes"), "{err}");
    }

    #[test]
    fn load_rejects_bad_cells_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "1,x\n2,3\n");
        let b = write(dir.path(), "b.csv", "1\n2\n");
        let l = write(dir.path(), "l.csv", "0\n1\n");
        assert!(matches!(load_dataset(&[&a, &b], &l), Err(Error::Parse { .. })));

        let a = write(dir.path(), "a2.csv", "1\n2\n");
        let l3 = write(dir.path(), "l3.csv", "0\n1\n1\n");
        let err = load_dataset(&[&a, &b], &l3).unwrap_err();
        assert!(err.to_string().contains("label count"), "{err}");

        let err = load_dataset(&[&a, &b], dir.path().join("missing.csv")).unwrap_err();
        assert!(err.to_string().starts_with("labels file not found"), "{err}");
    }

    #[test]
    fn write_then_load_is_exact() {
        let ds = generate_synthetic(&spec(&[1], 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_manifest(manifest).unwrap(), ds);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let views = vec![DMatrix::from_fn(2, 169, |r, c| (r * c) as f64)];
        let labels = (0..169).map(|i| (i % 3) as Label).collect();
        let ds = MultiviewDataset::new(views, labels).unwrap();
        let s = split(&ds, 120, 11).unwrap();
        assert_eq!(s.train_indices.len(), 120);
        assert_eq!(s.test_indices.len(), 49);
        assert_eq!(s, split(&ds, 120, 11).unwrap());
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..169).collect::<Vec<_>>());

        assert!(split(&ds, 169, 0).is_err());
        assert!(split(&ds, 1, 0).is_err());
    }

    #[test]
    fn split_retries_for_two_classes() {
        // Only one sample of class 1: most 2-sample draws are single-class.
        let views = vec![DMatrix::from_fn(1, 10, |_, c| c as f64)];
        let mut labels = vec![0; 10];
        labels[7] = 1;
        let ds = MultiviewDataset::new(views, labels).unwrap();
        let s = split(&ds, 2, 5).unwrap();
        assert!(s.train_indices.contains(&7));
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let ds = generate_synthetic(&spec(&[], 1)).unwrap();
        assert_eq!(ds.n_samples(), 40);
        assert_eq!(ds.n_views(), 2);
        assert_eq!(ds, generate_synthetic(&spec(&[], 1)).unwrap());
        assert_ne!(ds, generate_synthetic(&spec(&[], 2)).unwrap());
    }

    fn class_mean_gap(view: &ViewMatrix, per_class: usize) -> f64 {
        let n = view.n_samples();
        let a = view.data.columns(0, per_class).column_mean();
        let b = view.data.columns(per_class, n - per_class).column_mean();
        (a - b).norm()
    }

    #[test]
    fn noise_view_has_no_class_structure() {
        // With 20 samples per class in 5 dims, the expected squared gap of two
        // independent empirical means is 5 * (1/20 + 1/20) = 0.5.
        let (mut noise, mut informative) = (0.0, 0.0);
        for seed in 0..10 {
            let ds = generate_synthetic(&spec(&[1], seed)).unwrap();
            informative += class_mean_gap(ds.view(0), 20) / 10.0;
            noise += class_mean_gap(ds.view(1), 20) / 10.0;
        }
        assert!(noise < 1.2, "noise view class gap {noise}");
        assert!(informative > 3.0, "informative view class gap {informative}");
    }

    #[test]
    fn synthetic_means_are_four_apart() {
        let mut normal = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            move || -> f64 { StandardNormal.sample(&mut rng) }
        };
        let means = class_means(3, 4, &mut normal);
        let mut closest = f64::INFINITY;
        for a in 0..4 {
            for b in a + 1..4 {
                closest = closest.min((means.column(a) - means.column(b)).norm());
            }
        }
        assert!((closest - 4.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_zero_mean_unit_variance() {
        let ds = generate_synthetic(&spec(&[], 4)).unwrap().standardized();
        for row in ds.view(0).data.row_iter() {
            let mean = row.sum() / 40.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
