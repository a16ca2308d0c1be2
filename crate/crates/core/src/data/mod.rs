//! Domain datasets, the synthetic shifted benchmark and seeded batching.

mod batch;
mod benchmark;

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use batch::{BatchIterator, BatchState, StepBatches};
pub use benchmark::{generate_benchmark, render, BenchmarkSpec, ClassLatent, ShiftSpec};

/// One image, `[height, width, channels]`, every pixel finite and in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape {
                expected: alloc::vec![height, width, channels],
                actual: alloc::vec![pixels.len()],
            });
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || p.abs() > 1.0) {
            return Err(Error::Config(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// Why held-out labels are being read. Only scoring, oracle training,
/// split stratification and writing the benchmark to disk may look at
/// target labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPurpose {
    Scoring,
    Oracle,
    Stratification,
    Export,
}

/// Ground-truth target labels hidden from the training path. Every read is
/// counted per purpose so tests can prove no leakage.
#[derive(Clone, Debug)]
pub struct HeldOutLabels {
    labels: Vec<usize>,
    reads: Arc<[AtomicUsize; 4]>,
}

impl PartialEq for HeldOutLabels {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
    }
}

impl HeldOutLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self {
            labels,
            reads: Arc::new(core::array::from_fn(|_| AtomicUsize::new(0))),
        }
    }

    pub fn reveal(&self, purpose: LabelPurpose) -> &[usize] {
        self.reads[purpose as usize].fetch_add(1, Ordering::Relaxed);
        &self.labels
    }

    pub fn read_count(&self, purpose: LabelPurpose) -> usize {
        self.reads[purpose as usize].load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Images of one domain. Sources carry labels; the target does not, but a
/// benchmark target may carry [`HeldOutLabels`] for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    images: Vec<ImageTensor>,
    labels: Option<Vec<usize>>,
    is_target: bool,
    held_out: Option<HeldOutLabels>,
}

impl DomainDataset {
    /// Labelled source domain; every class in `0..num_classes` needs at
    /// least two images.
    pub fn labeled(domain_id: impl Into<String>, images: Vec<ImageTensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let domain_id = domain_id.into();
        check_images(&domain_id, &images)?;
        if labels.len() != images.len() {
            return Err(Error::Config(format!(
                "domain `{domain_id}`: {} labels for {} images",
                labels.len(),
                images.len()
            )));
        }
        let mut counts = alloc::vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Label {
                    label: y,
                    classes: num_classes,
                });
            }
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n < 2) {
            return Err(Error::Config(format!(
                "domain `{domain_id}`: class {c} has {} images, at least 2 required",
                counts[c]
            )));
        }
        Ok(Self {
            domain_id,
            images,
            labels: Some(labels),
            is_target: false,
            held_out: None,
        })
    }

    /// Unlabelled target domain.
    pub fn target(domain_id: impl Into<String>, images: Vec<ImageTensor>) -> Result<Self> {
        let domain_id = domain_id.into();
        check_images(&domain_id, &images)?;
        Ok(Self {
            domain_id,
            images,
            labels: None,
            is_target: true,
            held_out: None,
        })
    }

    /// Attaches evaluation-only ground truth to a target domain.
    pub fn with_held_out(mut self, labels: Vec<usize>) -> Result<Self> {
        if !self.is_target || labels.len() != self.images.len() {
            return Err(Error::Config(format!(
                "held-out labels need a target domain with {} labels",
                self.images.len()
            )));
        }
        self.held_out = Some(HeldOutLabels::new(labels));
        Ok(self)
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_target(&self) -> bool {
        self.is_target
    }

    pub fn held_out(&self) -> Option<&HeldOutLabels> {
        self.held_out.as_ref()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_dims(&self) -> [usize; 3] {
        self.images[0].dims()
    }

    /// Stacks the selected images into an NHWC batch.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor {
        let [h, w, c] = self.image_dims();
        let mut data = Vec::with_capacity(indices.len() * h * w * c);
        for &i in indices {
            data.extend_from_slice(self.images[i].pixels());
        }
        Tensor::from_vec(&[indices.len(), h, w, c], data).expect("consistent image dims")
    }

    pub fn all_tensor(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch_tensor(&idx)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect())
    }

    /// Subset by index; labels and held-out labels follow the images.
    pub fn subset(&self, domain_id: impl Into<String>, indices: &[usize]) -> Self {
        Self {
            domain_id: domain_id.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            is_target: self.is_target,
            held_out: self
                .held_out
                .as_ref()
                .map(|h| HeldOutLabels::new(indices.iter().map(|&i| h.labels[i]).collect())),
        }
    }

    /// Concatenation of labelled domains into one pseudo-source.
    pub fn concat(domain_id: impl Into<String>, parts: &[&DomainDataset], num_classes: usize) -> Result<Self> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            let l = p
                .labels()
                .ok_or_else(|| Error::Config(format!("domain `{}` is unlabelled", p.domain_id)))?;
            images.extend(p.images.iter().cloned());
            labels.extend_from_slice(l);
        }
        Self::labeled(domain_id, images, labels, num_classes)
    }

    /// Re-labels a target with its held-out ground truth as a labelled
    /// domain. Only used to train the oracle.
    pub fn oracle_view(&self, num_classes: usize) -> Result<Self> {
        let held = self
            .held_out
            .as_ref()
            .ok_or_else(|| Error::Config(format!("domain `{}` has no held-out labels", self.domain_id)))?;
        let labels = held.reveal(LabelPurpose::Oracle).to_vec();
        Self::labeled(format!("{}-oracle", self.domain_id), self.images.clone(), labels, num_classes)
    }
}

fn check_images(domain_id: &str, images: &[ImageTensor]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty(format!("domain `{domain_id}` has no images")))?;
    if let Some(bad) = images.iter().find(|i| i.dims() != first.dims()) {
        return Err(Error::Shape {
            expected: first.dims().to_vec(),
            actual: bad.dims().to_vec(),
        });
    }
    Ok(())
}
