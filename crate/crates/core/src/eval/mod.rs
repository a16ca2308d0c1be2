//! Target accuracy, latent alignment probes and the experiment harnesses
//! built on them.

mod figures;
mod harness;
mod probe;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{DomainDataset, LabelPurpose};
use crate::error::{Error, Result};
use crate::networks::{Domain, ParameterGroups};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

pub use figures::{heatmap, translation_grid, RgbImage};
pub use harness::{
    ablation_flags, run_ablation, run_standard, run_variant, sensitivity_sweep, AblationRow, AblationTable,
    AblationVariant, Experiment, OrderingFlag, RunResult, Standard, StandardResult, SweepMatrix,
};
pub use probe::{probe_auc, roc_auc, LinearProbe};

/// Rows scored per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Disjoint target halves: unlabelled images for adaptation and labelled
/// images for scoring.
#[derive(Clone, Debug)]
pub struct EvalSplit {
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

impl EvalSplit {
    /// Stratified split of a benchmark target. Ground truth is read only
    /// to keep class proportions equal across the halves.
    pub fn stratified(target: &DomainDataset, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in (0, 1), got {test_fraction}")));
        }
        let held = target
            .held_out()
            .ok_or_else(|| Error::Config(format!("domain `{}` has no held-out labels", target.domain_id)))?;
        let labels = held.reveal(LabelPurpose::Stratification);
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng::stream(seed, &[tags::SPLIT, c as u64]));
            let n_test = libm::round(idx.len() as f64 * test_fraction) as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty(format!("split of `{}` left an empty half", target.domain_id)));
        }
        Ok(Self {
            target_train: target.subset(format!("{}-train", target.domain_id), &train),
            target_test: target.subset(format!("{}-test", target.domain_id), &test),
        })
    }
}

/// Runs `f` over `EVAL_CHUNK`-sized slices of a dataset and stacks the rows.
fn chunked(data: &DomainDataset, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut width = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let out = f(&data.batch_tensor(chunk))?;
        width = out.item_len();
        rows.extend_from_slice(out.data());
    }
    Tensor::from_vec(&[data.len(), width], rows)
}

/// Class probabilities of the target path for every image of `data`.
pub fn predict(params: &ParameterGroups, data: &DomainDataset) -> Result<Tensor> {
    chunked(data, |x| params.predict_target(x))
}

/// Posterior means of every image of `data` under `domain`'s encoder.
pub fn encode_all(params: &ParameterGroups, domain: Domain, data: &DomainDataset) -> Result<Tensor> {
    chunked(data, |x| params.encode_batch(domain, x))
}

/// Fraction of rows whose arg-max matches the label (first maximum wins).
pub fn prediction_accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("no labels to score".into()));
    }
    if probs.batch() != labels.len() {
        return Err(Error::Shape {
            expected: alloc::vec![labels.len()],
            actual: alloc::vec![probs.batch()],
        });
    }
    let hits = (0..labels.len())
        .filter(|&i| {
            let row = probs.item(i);
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Target-test accuracy of the target encoder followed by the classifier.
pub fn accuracy(params: &ParameterGroups, split: &EvalSplit) -> Result<f64> {
    let test = &split.target_test;
    if test.is_empty() {
        return Err(Error::Empty("target test set".into()));
    }
    let labels = test
        .held_out()
        .ok_or_else(|| Error::Config(format!("domain `{}` has no held-out labels", test.domain_id)))?
        .reveal(LabelPurpose::Scoring);
    prediction_accuracy(&predict(params, test)?, labels)
}

/// Domain-probe AUCs on learned codes and on raw pixels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Alignment {
    pub probe_auc: f64,
    pub pre_adaptation_auc: f64,
}

/// Trains a fresh linear probe to tell source codes (every source through
/// its own encoder) from target codes, and the same probe on raw pixels.
pub fn latent_alignment(
    params: &ParameterGroups,
    sources: &[DomainDataset],
    target: &DomainDataset,
    seed: u64,
) -> Result<Alignment> {
    if sources.is_empty() {
        return Err(Error::Config("alignment needs at least one source domain".into()));
    }
    let mut src_codes = Vec::new();
    let mut src_pixels = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        src_codes.push(encode_all(params, Domain::Source(i), s)?);
        src_pixels.push(flatten(&s.all_tensor()));
    }
    let tgt_codes = encode_all(params, Domain::Target, target)?;
    let tgt_pixels = flatten(&target.all_tensor());
    let src_codes = concat_rows(&src_codes)?;
    let src_pixels = concat_rows(&src_pixels)?;
    Ok(Alignment {
        probe_auc: probe_auc(&src_codes, &tgt_codes, seed)?,
        pre_adaptation_auc: probe_auc(&src_pixels, &tgt_pixels, seed)?,
    })
}

fn flatten(x: &Tensor) -> Tensor {
    let (b, n) = (x.batch(), x.item_len());
    x.clone().reshape(&[b, n]).expect("same element count")
}

/// Stacks `[n_i, d]` matrices into `[sum n_i, d]`.
fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let d = parts.first().map_or(0, Tensor::item_len);
    let mut data = Vec::new();
    for p in parts {
        if p.item_len() != d {
            return Err(Error::Shape {
                expected: alloc::vec![d],
                actual: alloc::vec![p.item_len()],
            });
        }
        data.extend_from_slice(p.data());
    }
    let rows = if d == 0 { 0 } else { data.len() / d };
    Tensor::from_vec(&[rows, d], data)
}
