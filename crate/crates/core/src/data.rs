//! Dataset plumbing: the synthetic two-pattern generator, the UCR-style
//! tab/comma text loader, the MNIST IDX loader, and label binarization.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub values: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "{}: both splits must be non-empty",
                self.name
            )));
        }
        let len = self.train[0].values.len();
        for s in self.train.iter().chain(&self.test) {
            if s.values.len() != len {
                return Err(Error::InvalidDataset(format!(
                    "{}: sequences have differing lengths",
                    self.name
                )));
            }
            if s.label >= self.num_classes {
                return Err(Error::InvalidDataset(format!(
                    "{}: label {} outside 0..{}",
                    self.name, s.label, self.num_classes
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "{}: non-finite value in sequence",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.train.first().map(|s| s.values.len()).unwrap_or(0)
    }

    /// Per-class sequence counts over the training split.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for s in &self.train {
            counts[s.label] += 1;
        }
        counts
    }

    /// Most frequent training class; ties go to the lowest id.
    pub fn majority_class(&self) -> usize {
        let counts = self.class_counts();
        counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Per-sequence standardization to mean 0, variance 1.
    pub fn znormalized(mut self) -> Self {
        for s in self.train.iter_mut().chain(self.test.iter_mut()) {
            znormalize_series(&mut s.values);
        }
        self
    }
}

pub fn znormalize_series(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { *v - mean };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Triangular,
    Trigonometric,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Triangular => "triangular",
            SyntheticKind::Trigonometric => "trigonometric",
        }
    }
}

/// Length of each key pattern segment in the synthetic signals.
pub const SYNTHETIC_SEGMENT: usize = 5;

/// Positive-class template: three length-5 segments.
fn synthetic_template(kind: SyntheticKind) -> Vec<f64> {
    let seg = SYNTHETIC_SEGMENT;
    let mut up = Vec::with_capacity(seg);
    let mut down = Vec::with_capacity(seg);
    match kind {
        SyntheticKind::Triangular => {
            for i in 0..seg {
                up.push(i as f64 / (seg - 1) as f64);
                down.push((seg - 1 - i) as f64 / (seg - 1) as f64);
            }
        }
        SyntheticKind::Trigonometric => {
            for i in 0..seg {
                let t = i as f64 / (seg - 1) as f64;
                up.push((std::f64::consts::FRAC_PI_2 * t).sin());
                down.push((std::f64::consts::FRAC_PI_2 * (1.0 - t)).sin());
            }
        }
    }
    let flat = vec![0.0; seg];
    match kind {
        // increase then decrease, flat tail: the decreasing pattern sits in
        // the middle region for the positive class
        SyntheticKind::Triangular => [up, down, flat].concat(),
        // flat head, then increase and decrease: the decreasing pattern sits
        // in the last region for the positive class
        SyntheticKind::Trigonometric => [flat, up, down].concat(),
    }
}

/// Two-class synthetic task: the negative class is the time-reversed positive
/// template, so pattern placement is what separates the classes. Train and
/// test are drawn independently with per-point Gaussian noise.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n_per_class: usize,
    noise_std: f64,
    rng: &mut RngState,
) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::invalid_argument("gen_synthetic: n_per_class >= 1"));
    }
    let positive = synthetic_template(kind);
    let negative: Vec<f64> = positive.iter().rev().cloned().collect();
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| Error::invalid_argument(format!("gen_synthetic: bad noise std: {e}")))?;
    let split = |rng: &mut RngState| -> Vec<LabeledSequence> {
        let mut seqs = Vec::with_capacity(2 * n_per_class);
        for (template, label) in [(&positive, 1usize), (&negative, 0usize)] {
            for _ in 0..n_per_class {
                let values = template.iter().map(|v| v + noise.sample(rng)).collect();
                seqs.push(LabeledSequence { values, label });
            }
        }
        seqs
    };
    let ds = Dataset {
        name: format!("synthetic-{}", kind.name()),
        train: split(rng),
        test: split(rng),
        num_classes: 2,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_ucr_file(path: &Path) -> Result<Vec<(i64, Vec<f64>)>> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    let mut rows = Vec::new();
    let mut expected_len: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c| c == '\t' || c == ',' || c == ' ')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "row needs a label and at least one value".into(),
            });
        }
        let label_f: f64 = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad label {:?}", fields[0]),
        })?;
        let label = label_f.round() as i64;
        let mut values = Vec::with_capacity(fields.len() - 1);
        for f in &fields[1..] {
            values.push(f.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad value {f:?}"),
            })?);
        }
        match expected_len {
            None => expected_len = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("row has {} values, expected {l}", values.len()),
                })
            }
            _ => {}
        }
        rows.push((label, values));
    }
    if rows.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Loads a UCR-style dataset given a prefix: `<prefix>_TRAIN` and
/// `<prefix>_TEST` (with optional .tsv/.txt extension). Original labels are
/// remapped to 0..u-1 preserving their sorted order.
pub fn load_ucr(prefix: &Path) -> Result<Dataset> {
    let find = |suffix: &str| -> Result<std::path::PathBuf> {
        let base = format!("{}{suffix}", prefix.display());
        for ext in ["", ".tsv", ".txt", ".csv"] {
            let candidate = std::path::PathBuf::from(format!("{base}{ext}"));
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        Err(Error::InvalidDataset(format!("no file found for {base}")))
    };
    let train_rows = parse_ucr_file(&find("_TRAIN")?)?;
    let test_rows = parse_ucr_file(&find("_TEST")?)?;
    let mut labels: Vec<i64> = train_rows
        .iter()
        .chain(&test_rows)
        .map(|(l, _)| *l)
        .collect();
    labels.sort_unstable();
    labels.dedup();
    let remap = |rows: Vec<(i64, Vec<f64>)>| -> Vec<LabeledSequence> {
        rows.into_iter()
            .map(|(l, values)| LabeledSequence {
                values,
                label: labels.binary_search(&l).unwrap(),
            })
            .collect()
    };
    let name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| prefix.display().to_string());
    let ds = Dataset {
        name,
        num_classes: labels.len(),
        train: remap(train_rows),
        test: remap(test_rows),
    };
    ds.validate()?;
    Ok(ds)
}

const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Format(format!("truncated {what} header")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

fn read_idx_images(path: &Path) -> Result<Vec<Vec<u8>>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, "image")?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, "image")? as usize;
    let rows = read_be_u32(&bytes, 8, "image")? as usize;
    let cols = read_be_u32(&bytes, 12, "image")? as usize;
    let pixels = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * pixels {
        return Err(Error::Format(format!(
            "{}: payload has {} bytes, expected {}",
            path.display(),
            payload.len(),
            n * pixels
        )));
    }
    Ok(payload.chunks(pixels).map(|c| c.to_vec()).collect())
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0, "label")?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, "label")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "{}: payload has {} labels, expected {n}",
            path.display(),
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

/// One IDX image/label pair, flattened row-major and scaled to [0,1], keeping
/// only the two requested digits; `pos_digit` maps to class 1.
pub fn load_mnist_split(
    image_path: &Path,
    label_path: &Path,
    pos_digit: u8,
    neg_digit: u8,
) -> Result<Vec<LabeledSequence>> {
    let images = read_idx_images(image_path)?;
    let labels = read_idx_labels(label_path)?;
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .filter(|(_, l)| *l == pos_digit || *l == neg_digit)
        .map(|(img, l)| LabeledSequence {
            values: img.iter().map(|&b| b as f64 / 255.0).collect(),
            label: usize::from(l == pos_digit),
        })
        .collect())
}

/// Binary MNIST task from the two IDX file pairs.
pub fn load_mnist(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
    pos_digit: u8,
    neg_digit: u8,
) -> Result<Dataset> {
    if pos_digit == neg_digit {
        return Err(Error::invalid_argument(
            "load_mnist: positive and negative digits must differ",
        ));
    }
    let ds = Dataset {
        name: format!("mnist-{pos_digit}v{neg_digit}"),
        train: load_mnist_split(train_images, train_labels, pos_digit, neg_digit)?,
        test: load_mnist_split(test_images, test_labels, pos_digit, neg_digit)?,
        num_classes: 2,
    };
    ds.validate()?;
    Ok(ds)
}

/// Collapses labels to {0,1}: `target` becomes 1, everything else 0. Sequence
/// values and split membership are untouched.
pub fn binarize(ds: &Dataset, target: usize) -> Result<Dataset> {
    if target >= ds.num_classes {
        return Err(Error::invalid_argument(format!(
            "binarize: target {} outside 0..{}",
            target, ds.num_classes
        )));
    }
    let map = |seqs: &[LabeledSequence]| {
        seqs.iter()
            .map(|s| LabeledSequence {
                values: s.values.clone(),
                label: usize::from(s.label == target),
            })
            .collect()
    };
    Ok(Dataset {
        name: format!("{}-target{}", ds.name, target),
        train: map(&ds.train),
        test: map(&ds.test),
        num_classes: 2,
    })
}
