//! Dataset ingestion and federated partitioning.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::bnn::{Batch, Targets};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, Purpose};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    /// One row of real targets per sample.
    Real(Array2<f64>),
}

/// Inputs (one row per sample) with matching labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub inputs: Array2<f64>,
    pub labels: Labels,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, inputs: Array2<f64>, labels: Labels) -> Result<Self> {
        let rows = match &labels {
            Labels::Classes(c) => c.len(),
            Labels::Real(y) => y.nrows(),
        };
        check_len("labels", inputs.nrows(), rows)?;
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match &self.labels {
            Labels::Classes(c) => Some(c),
            Labels::Real(_) => None,
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(indices.iter().map(|&i| c[i]).collect()),
            Labels::Real(y) => Labels::Real(y.select(Axis(0), indices)),
        };
        LabeledDataset {
            name: self.name.clone(),
            inputs: self.inputs.select(Axis(0), indices),
            labels,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let sub = self.select(indices);
        sub.into_batch()
    }

    pub fn into_batch(self) -> Batch {
        let targets = match self.labels {
            Labels::Classes(c) => Targets::Classes(c),
            Labels::Real(y) => Targets::Real(y),
        };
        Batch {
            inputs: self.inputs,
            targets,
        }
    }

    /// Concatenates two datasets of the same kind.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        check_len("input columns", self.inputs.ncols(), other.inputs.ncols())?;
        let inputs = concatenate(Axis(0), &[self.inputs.view(), other.inputs.view()])
            .map_err(|e| Error::Structural(e.to_string()))?;
        let labels = match (&self.labels, &other.labels) {
            (Labels::Classes(a), Labels::Classes(b)) => {
                Labels::Classes(a.iter().chain(b).copied().collect())
            }
            (Labels::Real(a), Labels::Real(b)) => Labels::Real(
                concatenate(Axis(0), &[a.view(), b.view()])
                    .map_err(|e| Error::Structural(e.to_string()))?,
            ),
            _ => return Err(Error::Structural("cannot mix label kinds".into())),
        };
        LabeledDataset::new(self.name.clone(), inputs, labels)
    }

    /// Histogram of class labels over `num_classes` bins.
    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &c in self.classes().unwrap_or(&[]) {
            if c < num_classes {
                h[c] += 1;
            }
        }
        h
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path, field: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            field,
            msg: "file truncated inside the header".into(),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses a big-endian IDX image/label file pair; pixels are scaled to `[0,1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;

    let magic = read_u32(&images, 0, ip, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            field: "magic",
            msg: format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = read_u32(&images, 4, ip, "image count")? as usize;
    let rows = read_u32(&images, 8, ip, "rows")? as usize;
    let cols = read_u32(&images, 12, ip, "cols")? as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            field: "pixel data",
            msg: format!("expected {} bytes, found {}", count * pixels, body.len()),
        });
    }

    let magic = read_u32(&labels, 0, lp, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            field: "magic",
            msg: format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let label_count = read_u32(&labels, 4, lp, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            field: "label count",
            msg: format!("{label_count} labels for {count} images"),
        });
    }
    let label_body = &labels[8..];
    if label_body.len() != count {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            field: "label data",
            msg: format!("expected {count} bytes, found {}", label_body.len()),
        });
    }

    let inputs = Array2::from_shape_vec(
        (count, pixels),
        body.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("length checked above");
    let name = ip
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(
        name,
        inputs,
        Labels::Classes(label_body.iter().map(|&l| usize::from(l)).collect()),
    )
}

/// Standard file names of an MNIST-layout directory.
pub fn idx_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Loads the training and test files of an MNIST-layout directory as one pool.
pub fn load_idx_dir(dir: &Path) -> Result<LabeledDataset> {
    let (ti, tl) = idx_paths(dir, true);
    let (ei, el) = idx_paths(dir, false);
    let mut pool = load_idx(ti, tl)?.concat(&load_idx(ei, el)?)?;
    pool.name = dir.display().to_string();
    Ok(pool)
}

/// Per-class sample counts of the small/medium/large regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Small,
    Medium,
    Large,
}

impl Preset {
    /// `(train_per_class, test_per_class)`.
    pub fn per_class(self) -> (usize, usize) {
        match self {
            Preset::Small => (50, 950),
            Preset::Medium => (200, 800),
            Preset::Large => (900, 300),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub labels_per_client: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn preset(preset: Preset, num_clients: usize, labels_per_client: usize, seed: u64) -> Self {
        let (train_per_class, test_per_class) = preset.per_class();
        Self {
            num_clients,
            labels_per_client,
            train_per_class,
            test_per_class,
            seed,
        }
    }
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSplit {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Labels held by the client (empty for regression data).
    pub labels: Vec<usize>,
}

/// Label sets per client: a seeded shuffle of the classes dealt round-robin,
/// so consecutive windows are distinct and coverage is as even as possible.
pub fn assign_labels(num_classes: usize, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    if spec.labels_per_client == 0 || spec.labels_per_client > num_classes {
        return Err(Error::Config(format!(
            "labels_per_client must lie in 1..={num_classes}, got {}",
            spec.labels_per_client
        )));
    }
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.shuffle(&mut rng::stream(spec.seed, Purpose::Partition, 0, 0));
    Ok((0..spec.num_clients)
        .map(|i| {
            let mut labels: Vec<usize> = (0..spec.labels_per_client)
                .map(|j| order[(i * spec.labels_per_client + j) % num_classes])
                .collect();
            labels.sort_unstable();
            labels
        })
        .collect())
}

/// Non-i.i.d. split: each client holds `labels_per_client` classes with
/// exactly `train_per_class` / `test_per_class` samples of each. Samples are
/// never shared, neither within nor across clients.
pub fn partition_noniid(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientSplit>> {
    let classes = ds
        .classes()
        .ok_or_else(|| Error::Config("non-i.i.d. partition needs class labels".into()))?;
    if spec.num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    let num_classes = classes.iter().max().map_or(0, |m| m + 1);
    let assignment = assign_labels(num_classes, spec)?;

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        pools[c].push(i);
    }
    let per_client = spec.train_per_class + spec.test_per_class;
    for (c, pool) in pools.iter_mut().enumerate() {
        let demand = assignment.iter().filter(|l| l.contains(&c)).count() * per_client;
        if demand > pool.len() {
            return Err(Error::Config(format!(
                "class {c} has {} samples but the partition needs {demand}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng::stream(spec.seed, Purpose::Partition, 1, c as u64));
    }

    let mut cursor = vec![0usize; num_classes];
    Ok(assignment
        .into_iter()
        .map(|labels| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for &c in &labels {
                let start = cursor[c];
                train.extend_from_slice(&pools[c][start..start + spec.train_per_class]);
                test.extend_from_slice(
                    &pools[c][start + spec.train_per_class..start + per_client],
                );
                cursor[c] += per_client;
            }
            ClientSplit {
                train: ds.select(&train),
                test: ds.select(&test),
                labels,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterVariant {
    Identity,
    /// Pixel negation `p -> 1 - p`.
    Inverted,
}

pub fn make_cluster_dataset(base: &LabeledDataset, variant: ClusterVariant) -> LabeledDataset {
    match variant {
        ClusterVariant::Identity => base.clone(),
        ClusterVariant::Inverted => LabeledDataset {
            name: format!("{}-inverted", base.name),
            inputs: base.inputs.mapv(|p| 1.0 - p),
            labels: base.labels.clone(),
        },
    }
}

/// Random smooth target `f(x) = sum_h a_h tanh(w_h . x + b_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTarget {
    w: Array2<f64>,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl RandomTarget {
    pub const HIDDEN: usize = 16;

    fn sample<R: Rng>(rng: &mut R, input_dim: usize) -> Self {
        let wd = Uniform::new(-2.0, 2.0).expect("valid range");
        let ud = Uniform::new(-1.0, 1.0).expect("valid range");
        Self {
            w: Array2::from_shape_fn((Self::HIDDEN, input_dim), |_| rng.sample(wd)),
            b: (0..Self::HIDDEN).map(|_| rng.sample(ud)).collect(),
            a: (0..Self::HIDDEN).map(|_| rng.sample(ud)).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.w
            .rows()
            .into_iter()
            .zip(&self.b)
            .zip(&self.a)
            .map(|((w, b), a)| a * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b).tanh())
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRegression {
    pub clients: Vec<ClientSplit>,
    /// Ground-truth cluster of each client.
    pub cluster_ids: Vec<usize>,
    pub targets: Vec<RandomTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub clients_per_cluster: usize,
    /// Training samples per client (the test split has the same size).
    pub samples_per_client: usize,
    pub noise_sigma: f64,
    pub input_dim: usize,
    pub seed: u64,
}

fn draw_inputs<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Array2<f64> {
    let ud = Uniform::new(-1.0, 1.0).expect("valid range");
    Array2::from_shape_fn((n, dim), |_| rng.sample(ud))
}

/// Clustered regression clients: cluster `k` draws a target `f_k`; each of its
/// clients observes `y = f_k(x) + eps` with `x ~ U[-1,1]^d`, `eps ~ N(0, noise_sigma^2)`.
pub fn synthetic_regression(spec: &SyntheticSpec) -> Result<SyntheticRegression> {
    if spec.clusters == 0 || spec.clients_per_cluster == 0 || spec.samples_per_client == 0 {
        return Err(Error::Config("synthetic benchmark needs clusters, clients and samples".into()));
    }
    if !(spec.noise_sigma >= 0.0) || spec.input_dim == 0 {
        return Err(Error::Config("noise sigma must be non-negative and input_dim positive".into()));
    }
    let targets: Vec<RandomTarget> = (0..spec.clusters)
        .map(|k| RandomTarget::sample(&mut rng::stream(spec.seed, Purpose::Synthetic, 0, k as u64), spec.input_dim))
        .collect();
    let mut clients = Vec::new();
    let mut cluster_ids = Vec::new();
    for (k, f) in targets.iter().enumerate() {
        for c in 0..spec.clients_per_cluster {
            let id = (k * spec.clients_per_cluster + c) as u64;
            let mut r = rng::stream(spec.seed, Purpose::Synthetic, 1, id);
            let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut make = |name: String| {
                let x = draw_inputs(&mut r, spec.samples_per_client, spec.input_dim);
                let y = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| {
                    f.eval(x.row(i).as_slice().expect("row-major")) + r.sample(noise)
                });
                LabeledDataset::new(name, x, Labels::Real(y))
            };
            let train = make(format!("synthetic-k{k}-c{c}-train"))?;
            let test = make(format!("synthetic-k{k}-c{c}-test"))?;
            clients.push(ClientSplit {
                train,
                test,
                labels: Vec::new(),
            });
            cluster_ids.push(k);
        }
    }
    Ok(SyntheticRegression {
        clients,
        cluster_ids,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn write_idx(dir: &Path, images: &[u8], n: u32, rows: u32, cols: u32, labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("img");
        let lp = dir.join("lbl");
        let mut f = fs::File::create(&ip).unwrap();
        for v in [IMAGES_MAGIC, n, rows, cols] {
            f.write_all(&v.to_be_bytes()).unwrap();
        }
        f.write_all(images).unwrap();
        let mut f = fs::File::create(&lp).unwrap();
        for v in [LABELS_MAGIC, labels.len() as u32] {
            f.write_all(&v.to_be_bytes()).unwrap();
        }
        f.write_all(labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_fixture_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[0, 255, 255, 0, 0, 0, 0, 255], 2, 2, 2, &[3, 7]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.inputs.ncols(), 4);
        assert_eq!(ds.inputs.row(0).to_vec(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ds.inputs.row(1).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.classes().unwrap(), &[3, 7]);
    }

    #[test]
    fn idx_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), &[0; 8], 2, 2, 2, &[1]);
        match load_idx(&ip, &lp) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "label count"),
            other => panic!("{other:?}"),
        }
        let (ip, lp) = write_idx(dir.path(), &[0; 7], 2, 2, 2, &[1, 2]);
        match load_idx(&ip, &lp) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "pixel data"),
            other => panic!("{other:?}"),
        }
        fs::write(&ip, [0u8, 0, 8, 1, 0, 0]).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("{other:?}"),
        }
        fs::write(&ip, [0u8, 0]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
        assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io { .. })));
    }

    fn toy_pool(per_class: usize, classes: usize) -> LabeledDataset {
        let n = per_class * classes;
        let inputs = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j) % 11) as f64 / 10.0);
        LabeledDataset::new("toy", inputs, Labels::Classes((0..n).map(|i| i % classes).collect())).unwrap()
    }

    #[test]
    fn labels_are_distinct_and_evenly_covered() {
        let spec = PartitionSpec { num_clients: 10, labels_per_client: 5, train_per_class: 1, test_per_class: 1, seed: 3 };
        let a = assign_labels(10, &spec).unwrap();
        let mut cover = [0; 10];
        for l in &a {
            assert_eq!(l.iter().collect::<HashSet<_>>().len(), 5);
            for &c in l {
                cover[c] += 1;
            }
        }
        assert!(cover.iter().all(|&c| c == 5));
    }

    #[test]
    fn partition_is_disjoint_and_deterministic() {
        let ds = toy_pool(60, 10);
        let spec = PartitionSpec { num_clients: 10, labels_per_client: 5, train_per_class: 4, test_per_class: 8, seed: 11 };
        let parts = partition_noniid(&ds, &spec).unwrap();
        assert_eq!(parts, partition_noniid(&ds, &spec).unwrap());
        for p in &parts {
            assert_eq!(p.train.len(), 20);
            assert_eq!(p.test.len(), 40);
            let h = p.train.label_histogram(10);
            assert_eq!(h.iter().filter(|&&c| c > 0).count(), 5);
            assert!(h.iter().all(|&c| c == 0 || c == 4));
        }
        assert!(partition_noniid(&ds, &PartitionSpec { train_per_class: 40, ..spec.clone() }).is_err());
        assert!(partition_noniid(&ds, &PartitionSpec { labels_per_client: 11, ..spec }).is_err());
    }

    #[test]
    fn inversion_is_an_involution() {
        let ds = toy_pool(3, 4);
        let inv = make_cluster_dataset(&ds, ClusterVariant::Inverted);
        let back = make_cluster_dataset(&inv, ClusterVariant::Inverted);
        assert!(back.inputs.iter().zip(&ds.inputs).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(inv.inputs.iter().all(|p| (0.0..=1.0).contains(p)));
        let zeros = LabeledDataset::new("z", Array2::zeros((1, 3)), Labels::Classes(vec![0])).unwrap();
        assert!(make_cluster_dataset(&zeros, ClusterVariant::Inverted).inputs.iter().all(|&p| p == 1.0));
        assert_eq!(make_cluster_dataset(&ds, ClusterVariant::Identity), ds);
    }

    #[test]
    fn synthetic_targets_are_shared_within_clusters() {
        let spec = SyntheticSpec { clusters: 2, clients_per_cluster: 3, samples_per_client: 50, noise_sigma: 0.0, input_dim: 2, seed: 4 };
        let s = synthetic_regression(&spec).unwrap();
        assert_eq!(s.cluster_ids, vec![0, 0, 0, 1, 1, 1]);
        for (c, k) in s.clients.iter().zip(&s.cluster_ids) {
            let Labels::Real(y) = &c.train.labels else { panic!() };
            for i in 0..c.train.len() {
                let x = c.train.inputs.row(i).to_vec();
                assert_eq!(y[[i, 0]], s.targets[*k].eval(&x));
            }
        }
        let x = [0.3, -0.4];
        assert_ne!(s.targets[0].eval(&x), s.targets[1].eval(&x));
    }
}
