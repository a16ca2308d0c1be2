use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{accuracy, EvalSplit};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{build_models, NetSpec, ParameterGroups};
use crate::trainer::{train, train_supervised, Observer, TrainConfig, TrainData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standard {
    SourceOnly,
    SingleBest,
    SourceCombined,
    MultiSource,
    Oracle,
}

impl Standard {
    pub const ALL: [Standard; 5] = [
        Standard::SourceOnly,
        Standard::SingleBest,
        Standard::SourceCombined,
        Standard::MultiSource,
        Standard::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Standard::SourceOnly => "source-only",
            Standard::SingleBest => "single-best",
            Standard::SourceCombined => "source-combined",
            Standard::MultiSource => "multi-source",
            Standard::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Datasets, architecture and optimisation settings shared by every run of
/// an experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub net: NetSpec,
    pub sources: Vec<DomainDataset>,
    pub split: EvalSplit,
    pub train: TrainConfig,
}

impl Experiment {
    fn multi_source(
        &self,
        label: &str,
        config: &TrainConfig,
        sources: &[DomainDataset],
        observer: &mut dyn Observer,
    ) -> Result<ParameterGroups> {
        observer.begin_run(label)?;
        let params = build_models(&self.net, sources.len(), config.seed)?;
        let data = TrainData {
            sources,
            target: &self.split.target_train,
        };
        train(params, &data, config, observer)
    }

    fn supervised(&self, label: &str, config: &TrainConfig, data: &DomainDataset, observer: &mut dyn Observer) -> Result<ParameterGroups> {
        observer.begin_run(label)?;
        let mut params = build_models(&self.net, self.sources.len().max(1), config.seed)?;
        train_supervised(&mut params, data, config, observer)?;
        Ok(params)
    }

    fn pooled_sources(&self) -> Result<DomainDataset> {
        let parts: Vec<&DomainDataset> = self.sources.iter().collect();
        DomainDataset::concat("combined-sources", &parts, self.net.num_classes)
    }
}

/// One trained model and its target accuracy.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: String,
    pub accuracy: f64,
    pub params: ParameterGroups,
}

#[derive(Clone, Debug)]
pub struct StandardResult {
    pub standard: Standard,
    /// The reported accuracy: the best run for single-best, the only run
    /// otherwise.
    pub accuracy: f64,
    pub runs: Vec<RunResult>,
}

impl StandardResult {
    /// The run whose accuracy is reported.
    pub fn best(&self) -> &RunResult {
        self.runs
            .iter()
            .find(|r| r.accuracy == self.accuracy)
            .expect("reported accuracy comes from a run")
    }
}

/// Trains and scores one evaluation standard with `exp.train.seed`.
pub fn run_standard(standard: Standard, exp: &Experiment, observer: &mut dyn Observer) -> Result<StandardResult> {
    let cfg = &exp.train;
    let runs = match standard {
        Standard::SourceOnly => {
            let pooled = exp.pooled_sources()?;
            let params = exp.supervised("source-only", cfg, &pooled, observer)?;
            vec_run("source-only", params, &exp.split)?
        }
        Standard::Oracle => {
            let labelled = exp.split.target_train.oracle_view(exp.net.num_classes)?;
            let params = exp.supervised("oracle", cfg, &labelled, observer)?;
            vec_run("oracle", params, &exp.split)?
        }
        Standard::MultiSource => {
            let params = exp.multi_source("multi-source", cfg, &exp.sources, observer)?;
            vec_run("multi-source", params, &exp.split)?
        }
        Standard::SourceCombined => {
            let pooled = [exp.pooled_sources()?];
            let params = exp.multi_source("source-combined", cfg, &pooled, observer)?;
            vec_run("source-combined", params, &exp.split)?
        }
        Standard::SingleBest => {
            let mut runs = Vec::new();
            for s in &exp.sources {
                let params = exp.multi_source(&s.domain_id, cfg, core::slice::from_ref(s), observer)?;
                runs.extend(vec_run(&s.domain_id, params, &exp.split)?);
            }
            runs
        }
    };
    let accuracy = runs.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    Ok(StandardResult {
        standard,
        accuracy,
        runs,
    })
}

fn vec_run(label: &str, params: ParameterGroups, split: &EvalSplit) -> Result<Vec<RunResult>> {
    Ok(alloc::vec![RunResult {
        label: label.to_string(),
        accuracy: accuracy(&params, split)?,
        params,
    }])
}

/// A component configuration of the ablation ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub weights: LossWeights,
    pub esc: bool,
}

impl AblationVariant {
    pub const NAMES: [&'static str; 5] = ["baseline", "MVAE+GAN", "MVAE+GAN+CC", "MVAE+GAN+ESC", "MVAE+GAN+ESC+CC"];

    /// The named variant derived from `base`: `MVAE` keeps the
    /// reconstruction weights, `CC` the cycle weights, `ESC` the
    /// consistency term; the adversarial and classification terms are
    /// always on.
    pub fn named(name: &str, base: &LossWeights) -> Result<Self> {
        let parts: Vec<&str> = name.split('+').collect();
        let (mvae, esc, cc) = match name {
            "baseline" => (false, false, false),
            _ if parts.first() == Some(&"MVAE") && parts.get(1) == Some(&"GAN") => {
                let rest = &parts[2..];
                if rest.iter().any(|p| !matches!(*p, "ESC" | "CC")) {
                    return Err(Error::Config(format!("unknown ablation variant `{name}`")));
                }
                (true, rest.contains(&"ESC"), rest.contains(&"CC"))
            }
            _ => return Err(Error::Config(format!("unknown ablation variant `{name}`"))),
        };
        let mut weights = *base;
        if !mvae {
            weights.lambda0 = 0.0;
            weights.lambda1 = 0.0;
        }
        if !cc {
            weights.lambda2 = 0.0;
            weights.lambda3 = 0.0;
        }
        Ok(Self {
            name: name.into(),
            weights,
            esc,
        })
    }

    /// The full ladder in table order.
    pub fn ladder(base: &LossWeights) -> Vec<Self> {
        Self::NAMES
            .iter()
            .map(|n| Self::named(n, base).expect("ladder names are valid"))
            .collect()
    }

    pub fn cycle_enabled(&self) -> bool {
        self.weights.lambda2 != 0.0 || self.weights.lambda3 != 0.0
    }

    pub fn config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.weights = self.weights;
        cfg.switches.esc = self.esc;
        cfg.seed = seed;
        cfg
    }
}

/// One multi-source run of `variant` with `seed`.
pub fn run_variant(variant: &AblationVariant, exp: &Experiment, seed: u64, observer: &mut dyn Observer) -> Result<RunResult> {
    let cfg = variant.config(&exp.train, seed);
    let label = format!("{}/{seed}", variant.name);
    let params = exp.multi_source(&label, &cfg, &exp.sources, observer)?;
    Ok(RunResult {
        label,
        accuracy: accuracy(&params, &exp.split)?,
        params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AblationRow {
    /// Mean and sample standard deviation over seeds.
    pub fn new(variant: impl Into<String>, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            libm::sqrt(accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0))
        } else {
            0.0
        };
        Self {
            variant: variant.into(),
            accuracies,
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Outcome of one expected ordering `higher >= lower` between row means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingFlag {
    pub higher: String,
    pub lower: String,
    pub holds: bool,
    /// An inversion smaller than the larger of the two standard deviations.
    pub within_noise: bool,
}

/// Checks `MVAE+GAN+ESC+CC >= MVAE+GAN >= baseline` on the rows present.
pub fn ablation_flags(table: &AblationTable) -> Vec<OrderingFlag> {
    [("MVAE+GAN+ESC+CC", "MVAE+GAN"), ("MVAE+GAN", "baseline")]
        .iter()
        .filter_map(|(hi, lo)| {
            let (h, l) = (table.row(hi)?, table.row(lo)?);
            let holds = h.mean >= l.mean;
            Some(OrderingFlag {
                higher: hi.to_string(),
                lower: lo.to_string(),
                holds,
                within_noise: !holds && l.mean - h.mean <= h.std.max(l.std),
            })
        })
        .collect()
}

/// One trained run per `(variant, seed)`.
pub fn run_ablation(
    variants: &[AblationVariant],
    exp: &Experiment,
    seeds: &[u64],
    observer: &mut dyn Observer,
) -> Result<AblationTable> {
    if seeds.len() < 2 {
        return Err(Error::Config("an ablation needs at least two seeds".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            accs.push(run_variant(v, exp, seed, observer)?.accuracy);
        }
        rows.push(AblationRow::new(v.name.clone(), accs));
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// Accuracy for every `(kl, nll)` weight pair; rows follow `kl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMatrix {
    pub kl_weights: Vec<f64>,
    pub nll_weights: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
}

impl SweepMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.accuracy.len(), self.accuracy.first().map_or(0, Vec::len))
    }

    pub fn is_well_formed(&self) -> bool {
        self.shape() == (self.kl_weights.len(), self.nll_weights.len())
            && self.accuracy.iter().all(|r| r.len() == self.nll_weights.len())
            && self.accuracy.iter().flatten().all(|a| (0.0..=1.0).contains(a))
    }
}

/// Multi-source runs with `lambda0 = lambda2 = kl` and
/// `lambda1 = lambda3 = nll` over the grid.
pub fn sensitivity_sweep(
    kl_weights: &[f64],
    nll_weights: &[f64],
    exp: &Experiment,
    observer: &mut dyn Observer,
) -> Result<SweepMatrix> {
    if kl_weights.is_empty() || nll_weights.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mut accuracy = Vec::with_capacity(kl_weights.len());
    for &kl in kl_weights {
        let mut row = Vec::with_capacity(nll_weights.len());
        for &nll in nll_weights {
            let mut cfg = exp.train.clone();
            cfg.weights = cfg.weights.with_kl_nll(kl, nll);
            cfg.weights.validate()?;
            let params = exp.multi_source(&format!("kl{kl}-nll{nll}"), &cfg, &exp.sources, observer)?;
            row.push(accuracy_of(&params, &exp.split)?);
        }
        accuracy.push(row);
    }
    Ok(SweepMatrix {
        kl_weights: kl_weights.to_vec(),
        nll_weights: nll_weights.to_vec(),
        accuracy,
    })
}

fn accuracy_of(params: &ParameterGroups, split: &EvalSplit) -> Result<f64> {
    accuracy(params, split)
}
