//! In-memory datasets and their loaders.

use std::borrow::Cow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Error, Result};

/// How targets are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `[n_samples x n_outputs]`.
    Dense(Vec<f64>),
    /// The target of each sample is its own input times `scale`.
    Inputs { scale: f64 },
}

/// Samples with inputs, targets, optional integer labels and the value range
/// of every input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n_features: usize,
    n_outputs: usize,
    inputs: Vec<f64>,
    targets: Targets,
    labels: Option<Vec<u8>>,
    feature_ranges: Vec<(f64, f64)>,
}

impl SampleSet {
    pub fn new(
        n_features: usize,
        inputs: Vec<f64>,
        n_outputs: usize,
        targets: Vec<f64>,
        labels: Option<Vec<u8>>,
        feature_ranges: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if n_features == 0 || inputs.len() % n_features != 0 {
            return Err(Error::config("input matrix does not divide into feature rows"));
        }
        let n = inputs.len() / n_features;
        if targets.len() != n * n_outputs {
            return Err(Error::Shape {
                expected: n * n_outputs,
                got: targets.len(),
            });
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::config("label count does not match sample count"));
        }
        if feature_ranges.len() != n_features {
            return Err(Error::Shape {
                expected: n_features,
                got: feature_ranges.len(),
            });
        }
        Ok(SampleSet {
            n_features,
            n_outputs,
            inputs,
            targets: Targets::Dense(targets),
            labels,
            feature_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn target(&self, i: usize) -> Cow<'_, [f64]> {
        match &self.targets {
            Targets::Dense(t) => Cow::Borrowed(&t[i * self.n_outputs..(i + 1) * self.n_outputs]),
            Targets::Inputs { scale } => Cow::Owned(self.input(i).iter().map(|x| x * scale).collect()),
        }
    }

    /// Writes the target of sample `i` into `buf`.
    pub fn target_into(&self, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        match &self.targets {
            Targets::Dense(t) => buf.extend_from_slice(&t[i * self.n_outputs..(i + 1) * self.n_outputs]),
            Targets::Inputs { scale } => buf.extend(self.input(i).iter().map(|x| x * scale)),
        }
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    /// Samples at `indices`, in order. Feature ranges are kept.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let mut inputs = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        let targets = match &self.targets {
            Targets::Dense(t) => {
                let mut out = Vec::with_capacity(indices.len() * self.n_outputs);
                for &i in indices {
                    out.extend_from_slice(&t[i * self.n_outputs..(i + 1) * self.n_outputs]);
                }
                Targets::Dense(out)
            }
            Targets::Inputs { scale } => Targets::Inputs { scale: *scale },
        };
        SampleSet {
            n_features: self.n_features,
            n_outputs: self.n_outputs,
            inputs,
            targets,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            feature_ranges: self.feature_ranges.clone(),
        }
    }

    /// Reconstruction targets: each sample's target becomes its input times
    /// `scale`.
    pub fn into_autoencoder(mut self, scale: f64) -> SampleSet {
        self.targets = Targets::Inputs { scale };
        self.n_outputs = self.n_features;
        self
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header_len: usize) -> Result<()> {
    if bytes.len() >= 4 {
        let found = be_u32(bytes, 0);
        if found != magic {
            return Err(DataError::BadMagic {
                path: path.into(),
                expected: magic,
                found,
            }
            .into());
        }
    }
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            path: path.into(),
            expected: header_len,
            found: bytes.len(),
        }
        .into());
    }
    Ok(())
}

/// Reads an IDX image file and its label file. Pixels stay on their raw
/// 0..=255 scale.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<SampleSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_file(ip)?;
    check_header(ip, &img, IMAGES_MAGIC, 16)?;
    let n_images = be_u32(&img, 4) as usize;
    let (rows, cols) = (be_u32(&img, 8) as usize, be_u32(&img, 12) as usize);
    let n_pixels = rows * cols;
    let expected = 16 + n_images * n_pixels;
    if img.len() != expected {
        return Err(DataError::Truncated {
            path: ip.into(),
            expected,
            found: img.len(),
        }
        .into());
    }

    let lab = read_file(lp)?;
    check_header(lp, &lab, LABELS_MAGIC, 8)?;
    let n_labels = be_u32(&lab, 4) as usize;
    if lab.len() != 8 + n_labels {
        return Err(DataError::Truncated {
            path: lp.into(),
            expected: 8 + n_labels,
            found: lab.len(),
        }
        .into());
    }
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        }
        .into());
    }
    let labels = lab[8..].to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(DataError::Parse {
            path: lp.into(),
            line: pos + 1,
            msg: format!("label {} outside 0..=9", labels[pos]),
        }
        .into());
    }

    let inputs: Vec<f64> = img[16..].iter().map(|&p| p as f64).collect();
    let mut targets = vec![0.0; n_images * 10];
    for (i, &l) in labels.iter().enumerate() {
        targets[i * 10 + l as usize] = 1.0;
    }
    SampleSet::new(n_pixels, inputs, 10, targets, Some(labels), vec![(0.0, 255.0); n_pixels])
}

/// Reads the diabetes table: 8 numeric features and a 0/1 class per row. A
/// non-numeric first line is treated as a header.
pub fn load_pima_csv(path: impl AsRef<Path>) -> Result<SampleSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pima(&text, path)
}

pub fn parse_pima(text: &str, path: &Path) -> Result<SampleSet> {
    const COLS: usize = 9;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    let parse_err = |line: usize, msg: String| -> Error {
        DataError::Parse {
            path: path.into(),
            line,
            msg,
        }
        .into()
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let numeric: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match numeric {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_err(i + 1, format!("non-numeric field ({e})"))),
        };
        if values.len() != COLS {
            return Err(parse_err(i + 1, format!("expected {COLS} columns, found {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(i + 1, format!("non-finite value {v}")));
        }
        let label = match values[8] {
            l if l == 0.0 => 0u8,
            l if l == 1.0 => 1u8,
            l => return Err(parse_err(i + 1, format!("class must be 0 or 1, found {l}"))),
        };
        inputs.extend_from_slice(&values[..8]);
        targets.extend_from_slice(if label == 1 { &[0.0, 1.0] } else { &[1.0, 0.0] });
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(0, "no data rows".into()));
    }
    let ranges = column_ranges(&inputs, 8);
    SampleSet::new(8, inputs, 2, targets, Some(labels), ranges)
}

/// Per-column `(min, max)`, widened where a column is constant.
fn column_ranges(inputs: &[f64], n_features: usize) -> Vec<(f64, f64)> {
    (0..n_features)
        .map(|c| {
            let col = inputs.iter().skip(c).step_by(n_features);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        })
        .collect()
}

/// `n` points with `x ~ U[-pi, pi]` and target `sin x`.
pub fn gen_sine<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SampleSet> {
    use std::f64::consts::PI;
    if n < 2 {
        return Err(Error::config("sine set needs at least 2 samples"));
    }
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..=PI)).collect();
    let ys = xs.iter().map(|x| x.sin()).collect();
    SampleSet::new(1, xs, 1, ys, None, vec![(-PI, PI)])
}

/// Seeded shuffle, then `ceil(test_fraction * n)` samples go to the test
/// set. Returns `(train, test)`.
pub fn split(set: &SampleSet, test_fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((set.len() as f64 * test_fraction).ceil() as usize).min(set.len());
    let (test, train) = idx.split_at(n_test);
    Ok((set.subset(train), set.subset(test)))
}

/// Samples whose label is `digit`.
pub fn filter_by_label(set: &SampleSet, digit: usize) -> Result<SampleSet> {
    let labels = set.labels().ok_or(DataError::MissingLabels)?;
    let idx: Vec<usize> = (0..set.len()).filter(|&i| labels[i] as usize == digit).collect();
    Ok(set.subset(&idx))
}
