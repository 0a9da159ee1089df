//! Datasets: synthetic generators, the XOR table, and MNIST / CIFAR-10 loaders.
//!
//! Labels are always `1..=k`. The dataset CSV has a header row
//! `x1,…,xp,label`, one sample per line; floats are written in Rust's
//! shortest round-trip form so a write/read cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::categorical::{encode_observations, ObservationMatrix, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::net::{Head, Layer, Network};
use crate::rng::{RngStream, Substream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub test: Option<Box<Dataset>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l < 1 || l > k) {
            return Err(Error::Encoding { index, label, k });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite feature".into()));
        }
        Ok(Self {
            x,
            labels,
            k,
            test: None,
        })
    }

    pub fn with_test(mut self, test: Dataset) -> Self {
        self.test = Some(Box::new(test));
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn observations(&self) -> ObservationMatrix {
        encode_observations(&self.labels, self.k).expect("labels validated on construction")
    }

    /// First `p` feature columns only.
    pub fn leading_features(&self, p: usize) -> ArrayView2<'_, f64> {
        self.x.slice(ndarray::s![.., ..p.min(self.p())])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
            test: None,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Mlr,
    Deepnet,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub hidden: Vec<usize>,
    /// Standard deviation of generator weights.
    pub weight_scale: f64,
    pub seed: u64,
    pub xor_replicas: usize,
    pub xor_target_soft: f64,
}

impl GeneratorSpec {
    pub fn mlr(n: usize, p: usize, k: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Mlr,
            n,
            p,
            k,
            hidden: vec![],
            weight_scale: 1.0,
            seed,
            xor_replicas: 0,
            xor_target_soft: 0.0,
        }
    }

    /// 30 inputs, two hidden layers of 30, 4 classes, weights `N(0, 5)`.
    pub fn deepnet(n: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::Deepnet,
            n,
            p: 30,
            k: 4,
            hidden: vec![30, 30],
            weight_scale: 5f64.sqrt(),
            seed,
            xor_replicas: 0,
            xor_target_soft: 0.0,
        }
    }

    pub fn xor(replicas: usize, target_soft: f64) -> Self {
        Self {
            kind: GeneratorKind::Xor,
            n: 4 * replicas,
            p: 2,
            k: 2,
            hidden: vec![2],
            weight_scale: 1.0,
            seed: 0,
            xor_replicas: replicas,
            xor_target_soft: target_soft,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k < 2 || self.hidden.contains(&0) {
            return Err(Error::Config("generator dimensions must be positive (k >= 2)".into()));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return Err(Error::Config("weight scale must be positive".into()));
        }
        Ok(())
    }
}

/// Labels `y_i = argmax_j (x_i W)_j`, 1-based. Ties go to the lower class.
pub fn argmax_labels(x: ArrayView2<'_, f64>, weights: &Array2<f64>) -> Vec<usize> {
    x.dot(weights)
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best + 1
        })
        .collect()
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// The linear-argmax design: fixed `W ∈ R^{p×k}` with `N(0,1)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrGenerator {
    pub weights: Array2<f64>,
    seed: u64,
}

impl MlrGenerator {
    pub fn new(p: usize, k: usize, seed: u64) -> Result<Self> {
        GeneratorSpec::mlr(1, p, k, seed).validate()?;
        let mut rng = RngStream::new(seed).substream(Substream::Data, 0);
        Ok(Self {
            weights: standard_normal_matrix(p, k, &mut rng),
            seed,
        })
    }

    pub fn with_weights(weights: Array2<f64>) -> Self {
        Self { weights, seed: 0 }
    }

    /// `n` fresh samples from draw stream `split` (0 = train, 1 = test, ...).
    pub fn sample(&self, n: usize, split: u32) -> Result<Dataset> {
        let mut rng = RngStream::new(self.seed).substream(Substream::Data, 1 + split);
        let x = standard_normal_matrix(n, self.weights.nrows(), &mut rng);
        let labels = argmax_labels(x.view(), &self.weights);
        Dataset::new(x, labels, self.weights.ncols())
    }
}

pub fn gen_mlr(n: usize, p: usize, k: usize, seed: u64) -> Result<Dataset> {
    GeneratorSpec::mlr(n, p, k, seed).validate()?;
    MlrGenerator::new(p, k, seed)?.sample(n, 0)
}

/// Random sigmoid network used as a ground-truth generator.
pub fn generator_network(spec: &GeneratorSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed).substream(Substream::Data, 0);
    let normal = Normal::new(0.0, spec.weight_scale).map_err(|e| Error::Config(e.to_string()))?;
    let mut fan_in = spec.p;
    let mut layers = Vec::new();
    for &w in spec.hidden.iter().chain(std::iter::once(&spec.k)) {
        layers.push(Layer {
            weights: Array2::from_shape_fn((w, fan_in), |_| normal.sample(&mut rng)),
            bias: Array1::zeros(w),
        });
        fan_in = w;
    }
    Network::from_layers(layers, Head::Full, spec.k)
}

fn sample_categorical(probs: &ProbabilityMatrix, rng: &mut impl Rng) -> Vec<usize> {
    probs
        .data()
        .rows()
        .into_iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c + 1;
                }
            }
            row.len()
        })
        .collect()
}

fn sample_from_network(net: &Network, n: usize, p: usize, seed: u64, split: u32) -> Result<Dataset> {
    let mut rng = RngStream::new(seed).substream(Substream::Data, 1 + split);
    let x = standard_normal_matrix(n, p, &mut rng);
    let probs = net.forward(x.view())?;
    let labels = sample_categorical(&probs, &mut rng);
    Dataset::new(x, labels, net.k())
}

/// Inputs `N(0, I)`, labels drawn from the generator's softmax rows. The
/// returned dataset carries a test split of the same size drawn from an
/// independent stream of the same seed.
pub fn gen_deepnet(spec: &GeneratorSpec) -> Result<Dataset> {
    let net = generator_network(spec)?;
    let train = sample_from_network(&net, spec.n, spec.p, spec.seed, 0)?;
    let test = sample_from_network(&net, spec.n, spec.p, spec.seed, 1)?;
    Ok(train.with_test(test))
}

/// XOR table with soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct XorData {
    pub dataset: Dataset,
    /// Class-1 observation `target_soft` for XOR-true rows, `1 − target_soft` otherwise.
    pub soft_targets: ObservationMatrix,
}

/// Patterns (0,0), (1,0), (0,1), (1,1), the block repeated `replicas` times.
/// Class 1 is "XOR true".
pub fn gen_xor(replicas: usize, target_soft: f64) -> Result<XorData> {
    if replicas == 0 {
        return Err(Error::Config("xor needs at least one replica".into()));
    }
    if !(0.5..=1.0).contains(&target_soft) {
        return Err(Error::Config(format!("target softness must lie in [0.5, 1], got {target_soft}")));
    }
    const PATTERNS: [([f64; 2], usize); 4] = [([0.0, 0.0], 2), ([1.0, 0.0], 1), ([0.0, 1.0], 1), ([1.0, 1.0], 2)];
    let n = 4 * replicas;
    let mut x = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let mut soft = Array2::zeros((n, 1));
    for r in 0..replicas {
        for (j, (input, label)) in PATTERNS.iter().enumerate() {
            let i = 4 * r + j;
            x[[i, 0]] = input[0];
            x[[i, 1]] = input[1];
            labels.push(*label);
            soft[[i, 0]] = if *label == 1 { target_soft } else { 1.0 - target_soft };
        }
    }
    Ok(XorData {
        dataset: Dataset::new(x, labels, 2)?,
        soft_targets: ObservationMatrix::new(soft, 2)?,
    })
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Format {
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parses an IDX image file + label file pair (bytes already in memory).
pub fn parse_mnist_idx(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let magic = read_be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(images, 4)? as usize;
    let rows = read_be_u32(images, 8)? as usize;
    let cols = read_be_u32(images, 12)? as usize;
    let lmagic = read_be_u32(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("label file magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lcount = read_be_u32(labels, 4)? as usize;
    if lcount != count {
        return Err(Error::Format {
            offset: 4,
            reason: format!("label file has {lcount} items, image file {count}"),
        });
    }
    let dim = rows * cols;
    let n = limit.map_or(count, |l| l.min(count));
    let pixels_end = 16 + n * dim;
    if images.len() < pixels_end {
        return Err(Error::Format {
            offset: images.len() as u64,
            reason: format!("image data truncated, need {pixels_end} bytes"),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::Format {
            offset: labels.len() as u64,
            reason: format!("label data truncated, need {} bytes", 8 + n),
        });
    }
    let x = Array2::from_shape_fn((n, dim), |(i, j)| f64::from(images[16 + i * dim + j]) / 255.0);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let raw = labels[8 + i];
        if raw > 9 {
            return Err(Error::Format {
                offset: (8 + i) as u64,
                reason: format!("digit label {raw} out of range"),
            });
        }
        y.push(usize::from(raw) + 1);
    }
    Dataset::new(x, y, 10)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    parse_mnist_idx(&fs::read(images_path)?, &fs::read(labels_path)?, limit)
}

pub const CIFAR_FEATURES: usize = 3072;
const CIFAR_RECORD: usize = 1 + CIFAR_FEATURES;

pub fn parse_cifar10(batches: &[Vec<u8>], limit: Option<usize>) -> Result<Dataset> {
    let mut rows: Vec<&[u8]> = Vec::new();
    for batch in batches {
        if batch.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format {
                offset: batch.len() as u64,
                reason: format!("batch length {} is not a multiple of {CIFAR_RECORD}", batch.len()),
            });
        }
        rows.extend(batch.chunks_exact(CIFAR_RECORD));
    }
    let n = limit.map_or(rows.len(), |l| l.min(rows.len()));
    let mut x = Array2::zeros((n, CIFAR_FEATURES));
    let mut y = Vec::with_capacity(n);
    for (i, rec) in rows.iter().take(n).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (i * CIFAR_RECORD) as u64,
                reason: format!("class label {} out of range", rec[0]),
            });
        }
        y.push(usize::from(rec[0]) + 1);
        for (j, &b) in rec[1..].iter().enumerate() {
            x[[i, j]] = f64::from(b) / 255.0;
        }
    }
    Dataset::new(x, y, 10)
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P], limit: Option<usize>) -> Result<Dataset> {
    let batches = batch_paths
        .iter()
        .map(|p| fs::read(p.as_ref()))
        .collect::<std::io::Result<Vec<_>>>()?;
    parse_cifar10(&batches, limit)
}

pub fn dataset_to_csv(data: &Dataset) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(data.p() + 1);
    for (row, label) in data.x.rows().into_iter().zip(&data.labels) {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(label.to_string());
        wtr.write_record(&record)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parses the dataset CSV. `k` defaults to the largest label seen.
pub fn dataset_from_csv(bytes: &[u8], k: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().last() != Some("label") {
        return Err(Error::Format {
            offset: 0,
            reason: "last CSV column must be `label`".into(),
        });
    }
    let p = header.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |what: &str| Error::Format {
            offset,
            reason: what.to_string(),
        };
        if rec.len() != p + 1 {
            return Err(bad("wrong number of fields"));
        }
        for f in rec.iter().take(p) {
            values.push(f.parse::<f64>().map_err(|_| bad("unparsable feature"))?);
        }
        labels.push(rec[p].parse::<usize>().map_err(|_| bad("unparsable label"))?);
    }
    let n = labels.len();
    let k = k.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(2).max(2));
    let x = Array2::from_shape_vec((n, p), values).expect("row lengths validated");
    Dataset::new(x, labels, k)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub n_test: Option<usize>,
    pub spec: Option<GeneratorSpec>,
    /// SHA-256 of the training CSV bytes.
    pub generator_hash: String,
    pub class_encoding: String,
}

/// Writes `<stem>.csv`, `<stem>_test.csv` (if any) and `<stem>.manifest.json`.
pub fn write_dataset(dir: &Path, stem: &str, data: &Dataset, kind: &str, seed: u64, spec: Option<GeneratorSpec>) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let csv = dataset_to_csv(data)?;
    fs::write(dir.join(format!("{stem}.csv")), &csv)?;
    if let Some(test) = &data.test {
        fs::write(dir.join(format!("{stem}_test.csv")), dataset_to_csv(test)?)?;
    }
    let manifest = DatasetManifest {
        kind: kind.into(),
        seed,
        n: data.n(),
        p: data.p(),
        k: data.k,
        n_test: data.test.as_ref().map(|t| t.n()),
        spec,
        generator_hash: sha256_hex(&csv),
        class_encoding: if kind == "xor" {
            "class 1 = XOR true, class 2 = XOR false".into()
        } else {
            "labels 1..=k".into()
        },
    };
    let mut f = fs::File::create(dir.join(format!("{stem}.manifest.json")))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn gen_mlr_is_deterministic_and_in_range() {
        let a = gen_mlr(100, 20, 4, 7).unwrap();
        assert_eq!(a, gen_mlr(100, 20, 4, 7).unwrap());
        assert_ne!(a, gen_mlr(100, 20, 4, 8).unwrap());
        assert!(a.labels.iter().all(|&l| (1..=4).contains(&l)));
        assert_eq!(a.x.dim(), (100, 20));
    }

    #[test]
    fn injected_weights_give_sign_test_labels() {
        // k = 2, columns w and -w: class 1 iff x·w > 0.
        let w = array![[1.0, -1.0], [-2.0, 2.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0], [3.0, 1.0], [1.0, 1.0], [-1.0, -2.0]];
        let labels = argmax_labels(x.view(), &w);
        assert_eq!(labels, vec![1, 2, 1, 2, 1]);
    }

    #[test]
    fn mlr_generator_test_split_differs() {
        let g = MlrGenerator::new(5, 3, 1).unwrap();
        let train = g.sample(50, 0).unwrap();
        let test = g.sample(50, 1).unwrap();
        assert_ne!(train.x, test.x);
    }

    #[test]
    fn gen_deepnet_is_deterministic_with_test_split() {
        let spec = GeneratorSpec::deepnet(200, 3);
        let a = gen_deepnet(&spec).unwrap();
        assert_eq!(a, gen_deepnet(&spec).unwrap());
        let test = a.test.as_ref().unwrap();
        assert_eq!(test.n(), 200);
        assert_ne!(test.x, a.x);
        assert_eq!(a.p(), 30);
    }

    #[test]
    fn gen_deepnet_class_frequencies_match_generator() {
        let spec = GeneratorSpec::deepnet(5000, 11);
        let data = gen_deepnet(&spec).unwrap();
        let net = generator_network(&spec).unwrap();
        let probs = net.forward(data.x.view()).unwrap();
        let mean = probs.data().mean_axis(Axis(0)).unwrap();
        let counts = data.class_counts();
        let n = data.n() as f64;
        for c in 0..4 {
            // Conditional on X each label is an independent categorical draw.
            let var: f64 = probs.data().column(c).iter().map(|p| p * (1.0 - p)).sum();
            let sigma = var.sqrt();
            assert!(
                (counts[c] as f64 - mean[c] * n).abs() <= 4.0 * sigma.max(1.0),
                "class {c}: {} vs {}",
                counts[c],
                mean[c] * n
            );
        }
    }

    #[test]
    fn zero_weight_generator_is_uniform() {
        let spec = GeneratorSpec {
            weight_scale: 1e-300,
            ..GeneratorSpec::deepnet(4000, 2)
        };
        let data = gen_deepnet(&spec).unwrap();
        let counts = data.class_counts();
        let expected = data.n() as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 3 dof, p = 0.001 critical value.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn xor_table() {
        let one = gen_xor(1, 0.9).unwrap();
        assert_eq!(one.dataset.x, array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(one.dataset.labels, vec![2, 1, 1, 2]);
        let truth: Vec<u8> = one.dataset.labels.iter().map(|&l| u8::from(l == 1)).collect();
        assert_eq!(truth, vec![0, 1, 1, 0]);
        assert_eq!(one.soft_targets.data().column(0).to_vec(), vec![1.0 - 0.9, 0.9, 0.9, 1.0 - 0.9]);

        let many = gen_xor(100, 0.9).unwrap();
        assert_eq!(many.dataset.n(), 400);
        assert_eq!(many.dataset.class_counts(), vec![200, 200]);
        assert!(gen_xor(0, 0.9).is_err());
    }

    fn idx_images(magic: u32, count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [magic, count, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(count: u32, labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&count.to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn mnist_fixture_parses() {
        let images = idx_images(IDX_IMAGES_MAGIC, 2, 2, 2, &[0, 0, 0, 0, 255, 255, 255, 255]);
        let labels = idx_labels(2, &[3, 9]);
        let d = parse_mnist_idx(&images, &labels, None).unwrap();
        assert_eq!(d.x, array![[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(d.labels, vec![4, 10]);
        let first = parse_mnist_idx(&images, &labels, Some(1)).unwrap();
        assert_eq!(first.n(), 1);
    }

    #[test]
    fn mnist_rejects_bad_files() {
        let labels = idx_labels(2, &[3, 9]);
        let bad_magic = idx_images(0x0000_0801, 2, 2, 2, &[0; 8]);
        assert!(matches!(parse_mnist_idx(&bad_magic, &labels, None), Err(Error::Format { offset: 0, .. })));
        let truncated = idx_images(IDX_IMAGES_MAGIC, 2, 2, 2, &[0; 5]);
        assert!(matches!(parse_mnist_idx(&truncated, &labels, None), Err(Error::Format { offset: 21, .. })));
        let images = idx_images(IDX_IMAGES_MAGIC, 2, 2, 2, &[0; 8]);
        assert!(matches!(parse_mnist_idx(&images, &idx_labels(3, &[1, 2, 3]), None), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(parse_mnist_idx(&images[..10], &labels, None), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn cifar_fixture_parses() {
        let mut batch = Vec::new();
        for (label, fill) in [(0u8, 0u8), (7u8, 255u8)] {
            batch.push(label);
            batch.extend(std::iter::repeat_n(fill, CIFAR_FEATURES));
        }
        assert_eq!(batch.len() / CIFAR_RECORD, 2);
        let d = parse_cifar10(&[batch.clone()], None).unwrap();
        assert_eq!(d.labels, vec![1, 8]);
        assert_eq!(d.p(), 3072);
        assert!(d.x.row(0).iter().all(|&v| v == 0.0));
        assert!(d.x.row(1).iter().all(|&v| v == 1.0));
        batch.push(1);
        assert!(matches!(parse_cifar10(&[batch], None), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(dataset_from_csv(b"x1,x2\n1,2\n", None).is_err());
        assert!(dataset_from_csv(b"x1,label\nfoo,1\n", None).is_err());
        assert!(matches!(dataset_from_csv(b"x1,label\n1,5\n", Some(3)), Err(Error::Encoding { .. })));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..20, p in 1usize..5) {
            let d = gen_mlr(n, p, 3, seed).unwrap();
            let back = dataset_from_csv(&dataset_to_csv(&d).unwrap(), Some(3)).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn argmax_labels_invariant_to_positive_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let g = MlrGenerator::new(6, 4, seed).unwrap();
            let d = g.sample(30, 0).unwrap();
            let scaled = &g.weights * scale;
            prop_assert_eq!(argmax_labels(d.x.view(), &scaled), d.labels);
        }
    }
}
