//! Dataset construction: synthetic blobs, IDX and CSV ingestion,
//! deterministic stratified splitting, and flip/shift augmentation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use crate::tensor::Tensor;

/// Which split a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// An immutable labeled dataset. All samples share one shape and every label
/// is below `n_classes`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<(Tensor, usize)>,
    pub n_classes: usize,
    pub split: SplitTag,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shape shared by every sample; `None` for an empty dataset.
    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|(t, _)| t.shape())
    }

    fn validate(&self) -> Result<()> {
        let shape = self.sample_shape().map(<[usize]>::to_vec);
        for (i, (tensor, label)) in self.samples.iter().enumerate() {
            if *label >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: *label,
                    n_classes: self.n_classes,
                });
            }
            if Some(tensor.shape()) != shape.as_deref() {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian blobs around class centers placed on a sphere.
///
/// Centers are random directions scaled to `class_separation`; samples add
/// isotropic noise with standard deviation `noise_sigma`. The same seed
/// always yields the same dataset.
pub fn make_blobs(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    class_separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Dataset {
    assert!(n_classes > 0 && n_per_class > 0 && dim > 0, "counts must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| x / norm * class_separation).collect();
            }
        })
        .collect();

    let mut samples = Vec::with_capacity(n_classes * n_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let point: Vec<f64> = center
                .iter()
                .map(|&c| c + noise_sigma * unit.sample(&mut rng))
                .collect();
            samples.push((Tensor::new(vec![dim], point).expect("sample shape"), label));
        }
    }

    Dataset {
        samples,
        n_classes,
        split: SplitTag::Train,
        provenance: format!(
            "blobs(n_classes={n_classes}, n_per_class={n_per_class}, dim={dim}, \
             separation={class_separation}, sigma={noise_sigma}, seed={seed})"
        ),
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an MNIST-style IDX image/label file pair. Pixels are mapped to
/// `[0, 1]` and each image becomes a `1×H×W` tensor.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;

    let mut pos = 0usize;
    let magic = read_be_u32(&images, &mut pos, images_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected images magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}",
            images_path.display()
        )));
    }
    let n = read_be_u32(&images, &mut pos, images_path, "image count")? as usize;
    let rows = read_be_u32(&images, &mut pos, images_path, "row count")? as usize;
    let cols = read_be_u32(&images, &mut pos, images_path, "column count")? as usize;
    let pixel_bytes = &images[pos..];
    if pixel_bytes.len() < n * rows * cols {
        return Err(Error::Format(format!(
            "{}: truncated pixel data ({} bytes for {} expected)",
            images_path.display(),
            pixel_bytes.len(),
            n * rows * cols
        )));
    }
    if pixel_bytes.len() > n * rows * cols {
        return Err(Error::Format(format!(
            "{}: trailing data after pixels",
            images_path.display()
        )));
    }

    let mut lpos = 0usize;
    let lmagic = read_be_u32(&labels, &mut lpos, labels_path, "magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: expected labels magic {IDX_LABELS_MAGIC:#010x}, found {lmagic:#010x}",
            labels_path.display()
        )));
    }
    let ln = read_be_u32(&labels, &mut lpos, labels_path, "label count")? as usize;
    if ln != n {
        return Err(Error::Format(format!(
            "count mismatch: {n} images vs {ln} labels"
        )));
    }
    let label_bytes = &labels[lpos..];
    if label_bytes.len() != n {
        return Err(Error::Format(format!(
            "{}: expected {n} label bytes, found {}",
            labels_path.display(),
            label_bytes.len()
        )));
    }

    let mut samples = Vec::with_capacity(n);
    let mut n_classes = 0usize;
    for (pixels, &label_byte) in pixel_bytes.chunks_exact(rows * cols).zip(label_bytes) {
        let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
        let label = label_byte as usize;
        n_classes = n_classes.max(label + 1);
        samples.push((Tensor::new(vec![1, rows, cols], data)?, label));
    }

    let dataset = Dataset {
        samples,
        n_classes,
        split: SplitTag::Train,
        provenance: format!(
            "idx({}, {})",
            file_name(images_path),
            file_name(labels_path)
        ),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Loads header-free CSV rows of `label, feature...` decimal text. Every row
/// must carry the same number of features.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    let mut n_classes = 0usize;
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Format(format!(
                "{}:{}: expected `label, feature...`, got {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        let label: usize = fields[0].parse().map_err(|_| {
            Error::Format(format!(
                "{}:{}: bad label {:?}",
                path.display(),
                lineno + 1,
                fields[0]
            ))
        })?;
        let features: Vec<f64> = fields[1..]
            .iter()
            .enumerate()
            .map(|(ci, f)| {
                f.parse().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: bad feature {:?} in column {}",
                        path.display(),
                        lineno + 1,
                        f,
                        ci + 2
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Format(format!(
                    "{}:{}: row has {} features, expected {w}",
                    path.display(),
                    lineno + 1,
                    features.len()
                )));
            }
            _ => {}
        }
        n_classes = n_classes.max(label + 1);
        let dim = features.len();
        samples.push((Tensor::new(vec![dim], features)?, label));
    }
    let dataset = Dataset {
        samples,
        n_classes,
        split: SplitTag::Train,
        provenance: format!("csv({})", file_name(path)),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Outcome of a stratified train/validation split.
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub train: Dataset,
    pub val: Dataset,
    /// One entry per class that could not contribute to validation.
    pub warnings: Vec<String>,
}

/// Deterministic per-class split: each class sends `round(count·fraction)`
/// samples to validation, clamped so at least one training sample remains. A
/// single-sample class stays entirely in train and records a warning. The
/// two outputs are disjoint and together contain every input sample.
pub fn split_train_val(data: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes];
    for (i, (_, label)) in data.samples.iter().enumerate() {
        by_class[*label].push(i);
    }

    let mut warnings = Vec::new();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (class, mut indices) in by_class.into_iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut rng);
        let count = indices.len();
        let mut n_val = ((count as f64) * val_fraction).round() as usize;
        n_val = n_val.min(count - 1);
        if count == 1 {
            warnings.push(format!(
                "class {class} has a single sample; keeping it in train"
            ));
        }
        val_idx.extend_from_slice(&indices[..n_val]);
        train_idx.extend_from_slice(&indices[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let subset = |idx: &[usize], tag: SplitTag, name: &str| Dataset {
        samples: idx.iter().map(|&i| data.samples[i].clone()).collect(),
        n_classes: data.n_classes,
        split: tag,
        provenance: format!("{} [{name} split, seed={seed}]", data.provenance),
    };
    Ok(SplitResult {
        train: subset(&train_idx, SplitTag::Train, "train"),
        val: subset(&val_idx, SplitTag::Val, "val"),
        warnings,
    })
}

/// Random horizontal flip and integer shift for `C×H×W` tensors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default)]
    pub flip_horizontal: bool,
    #[serde(default)]
    pub max_shift_pixels: usize,
}

impl AugmentPolicy {
    pub fn is_identity(&self) -> bool {
        !self.flip_horizontal && self.max_shift_pixels == 0
    }

    /// Checks the policy against a concrete sample shape.
    pub fn validate_for(&self, shape: &[usize]) -> Result<()> {
        if self.is_identity() {
            return Ok(());
        }
        let [_, h, w] = match *shape {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::Config(format!(
                    "augmentation needs C×H×W samples, got shape {shape:?}"
                )))
            }
        };
        if self.max_shift_pixels >= h.min(w) {
            return Err(Error::Config(format!(
                "max_shift_pixels {} must be smaller than the image side {}",
                self.max_shift_pixels,
                h.min(w)
            )));
        }
        Ok(())
    }
}

/// Applies the policy to one `C×H×W` sample: horizontal flip with
/// probability ½ (when enabled), then an integer shift drawn uniformly from
/// `[-max_shift, +max_shift]` per axis with zero padding. Draw order is
/// fixed, so a given generator state always produces the same augmentation.
pub fn augment(sample: &Tensor, policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Tensor {
    assert_eq!(sample.shape().len(), 3, "augmentation expects C×H×W tensors");
    let [c, h, w] = [sample.shape()[0], sample.shape()[1], sample.shape()[2]];
    let mut out = sample.clone();

    if policy.flip_horizontal && rng.random::<f64>() < 0.5 {
        let data = out.data_mut();
        for ci in 0..c {
            for y in 0..h {
                data[(ci * h + y) * w..(ci * h + y + 1) * w].reverse();
            }
        }
    }

    if policy.max_shift_pixels > 0 {
        let s = policy.max_shift_pixels as i64;
        let dy = rng.random_range(-s..=s);
        let dx = rng.random_range(-s..=s);
        if dy != 0 || dx != 0 {
            let src = out.data().to_vec();
            let data = out.data_mut();
            data.fill(0.0);
            for ci in 0..c {
                for y in 0..h {
                    let sy = y as i64 - dy;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 - dx;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        data[(ci * h + y) * w + x] = src[(ci * h + sy as usize) * w + sx as usize];
                    }
                }
            }
        }
    }
    out
}

/// Stacks the selected samples into a `[batch, ...sample]` tensor plus the
/// label vector, optionally augmenting each sample on the way in.
pub fn stack_batch(
    data: &Dataset,
    indices: &[usize],
    augment_with: Option<(&AugmentPolicy, &mut ChaCha8Rng)>,
) -> (Tensor, Vec<usize>) {
    assert!(!indices.is_empty(), "a batch needs at least one sample");
    let sample_shape = data.sample_shape().expect("non-empty dataset").to_vec();
    let sample_len: usize = sample_shape.iter().product();
    let mut flat = Vec::with_capacity(indices.len() * sample_len);
    let mut labels = Vec::with_capacity(indices.len());
    match augment_with {
        Some((policy, rng)) => {
            for &i in indices {
                let (tensor, label) = &data.samples[i];
                flat.extend_from_slice(augment(tensor, policy, rng).data());
                labels.push(*label);
            }
        }
        None => {
            for &i in indices {
                let (tensor, label) = &data.samples[i];
                flat.extend_from_slice(tensor.data());
                labels.push(*label);
            }
        }
    }
    let mut shape = vec![indices.len()];
    shape.extend_from_slice(&sample_shape);
    (Tensor::new(shape, flat).expect("batch shape"), labels)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_be_u32(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<u32> {
    let end = *pos + 4;
    let slice = bytes.get(*pos..end).ok_or_else(|| {
        Error::Format(format!("{}: truncated while reading {what}", path.display()))
    })?;
    *pos = end;
    Ok(u32::from_be_bytes(slice.try_into().expect("4-byte slice")))
}
