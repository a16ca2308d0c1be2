//! The alternating training loop: per step and per source, one update of
//! the discriminators, one of the encoders and generators, and one of the
//! encoders and classifier.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{BatchIterator, BatchState, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{gan_losses, source_objective, task_loss, LossWeights, ObjectiveSwitches};
use crate::networks::{Domain, GroupId, ParameterGroups, Pipelines};
use crate::optim::{optimizer_step, AdamConfig, AdamState, PhaseMask};
use crate::rng::{self, tags, GaussianNoise, LatentNoise};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Discriminators,
    Translators,
    Classifier,
    /// Plain supervised training of the target encoder and classifier.
    Supervised,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Discriminators => "discriminators",
            Phase::Translators => "translators",
            Phase::Classifier => "classifier",
            Phase::Supervised => "supervised",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Phase::Discriminators => 1,
            Phase::Translators => 2,
            Phase::Classifier => 3,
            Phase::Supervised => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Steps between intermediate evaluations; 0 disables them.
    pub eval_every: u64,
    pub switches: ObjectiveSwitches,
    /// Visit sources in a seeded random order each step instead of 1..M.
    pub shuffle_sources: bool,
    /// Hash frozen groups around every phase and re-check weight sharing.
    pub verify_invariants: bool,
    /// Validate everything but perform no update.
    pub dry_run: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            batch_size: 16,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            switches: ObjectiveSwitches::default(),
            shuffle_sources: false,
            verify_invariants: false,
            dry_run: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_steps < 1 {
            return fail("max_steps must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return fail(format!("adam_epsilon must be > 0, got {}", self.adam_epsilon));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Loss values of one phase update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub step: u64,
    pub source_index: Option<usize>,
    pub phase: Phase,
    pub losses: BTreeMap<String, f64>,
}

/// Everything besides the parameters needed to resume a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub batches: BatchState,
    pub discriminators: AdamState,
    pub translators: AdamState,
    pub classifier: AdamState,
}

/// Labelled sources and the unlabelled target used for adaptation.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub sources: &'a [DomainDataset],
    pub target: &'a DomainDataset,
}

impl TrainData<'_> {
    fn sizes(&self) -> Vec<usize> {
        self.sources.iter().chain([self.target]).map(DomainDataset::len).collect()
    }

    fn check(&self, params: &ParameterGroups) -> Result<()> {
        if self.sources.len() != params.num_sources() {
            return Err(Error::Config(format!(
                "model has {} source encoders but {} source datasets were given",
                params.num_sources(),
                self.sources.len()
            )));
        }
        let shape = params.spec().image_shape();
        for d in self.sources.iter().chain([self.target]) {
            check_dataset(d, shape)?;
        }
        if self.sources.iter().any(|s| s.labels().is_none()) {
            return Err(Error::Config("every source domain must be labelled".into()));
        }
        if !self.target.is_target() {
            return Err(Error::Config(format!("`{}` is not a target domain", self.target.domain_id)));
        }
        Ok(())
    }
}

fn check_dataset(d: &DomainDataset, shape: [usize; 3]) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty(format!("domain `{}`", d.domain_id)));
    }
    if d.image_dims() != shape {
        return Err(Error::Shape {
            expected: shape.to_vec(),
            actual: d.image_dims().to_vec(),
        });
    }
    Ok(())
}

/// Hooks called by the training loop.
pub trait Observer {
    /// Called by the evaluation harnesses before each model they train.
    fn begin_run(&mut self, _label: &str) -> Result<()> {
        Ok(())
    }

    /// Called after every phase update with the updated parameters.
    fn phase(&mut self, _report: &PhaseReport, _params: &ParameterGroups) -> Result<()> {
        Ok(())
    }

    /// Called after every completed step, with `trainer.step()` already
    /// advanced.
    fn step_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

impl Observer for Vec<PhaseReport> {
    fn phase(&mut self, report: &PhaseReport, _params: &ParameterGroups) -> Result<()> {
        self.push(report.clone());
        Ok(())
    }
}

/// FNV-1a over the bit patterns of the given storages.
pub fn fingerprint(params: &ParameterGroups, storages: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &s in storages {
        for v in params.tensor(s).data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

fn check_finite(
    step: u64,
    source_index: Option<usize>,
    phase: Phase,
    losses: &BTreeMap<String, f64>,
    params: &ParameterGroups,
) -> Result<()> {
    if losses.values().all(|v| v.is_finite()) {
        return Ok(());
    }
    let mut diagnostics = String::from("losses:");
    for (k, v) in losses {
        diagnostics.push_str(&format!(" {k}={v}"));
    }
    diagnostics.push_str("; parameter norms:");
    for (g, n) in params.group_norms() {
        diagnostics.push_str(&format!(" {g}={n}"));
    }
    Err(Error::NonFinite {
        step,
        source_index,
        phase: phase.name().to_string(),
        diagnostics,
    })
}

/// Records one phase on a fresh tape, differentiates it and applies the
/// masked Adam step.
#[allow(clippy::too_many_arguments)]
fn apply_phase(
    params: &mut ParameterGroups,
    adam: &mut AdamState,
    config: &TrainConfig,
    step: u64,
    source_index: Option<usize>,
    phase: Phase,
    mask: &PhaseMask,
    build: impl FnOnce(&mut Tape, &ParameterGroups, &mut dyn LatentNoise) -> Result<(Var, BTreeMap<String, f64>)>,
) -> Result<PhaseReport> {
    let trainable = mask.storage_mask(params);
    let source_coord = source_index.map_or(u64::MAX, |i| i as u64);
    let mut noise = GaussianNoise::from_rng(rng::stream(
        config.seed,
        &[tags::NOISE, step, source_coord, phase.tag()],
    ));
    let (grads, losses) = {
        let mut tape = Tape::new(params.tensors(), &trainable);
        let (loss, mut losses) = build(&mut tape, params, &mut noise)?;
        losses.insert("total".into(), tape.scalar(loss));
        check_finite(step, source_index, phase, &losses, params)?;
        (tape.backward(loss), losses)
    };
    if grads.iter().any(|(_, g)| !g.all_finite()) {
        let mut l = losses.clone();
        l.insert("gradient".into(), f64::NAN);
        check_finite(step, source_index, phase, &l, params)?;
    }
    let frozen = if config.verify_invariants {
        let f = mask.frozen_storages(params);
        let h = fingerprint(params, &f);
        Some((f, h))
    } else {
        None
    };
    optimizer_step(params, &grads, adam, mask, &config.adam())?;
    if let Some((f, h)) = frozen {
        if fingerprint(params, &f) != h {
            return Err(Error::Invariant(format!(
                "{} phase changed a frozen group at step {step}",
                phase.name()
            )));
        }
        params.check_sharing()?;
    }
    Ok(PhaseReport {
        step,
        source_index,
        phase,
        losses,
    })
}

/// Multi-source adversarial adaptation run.
#[derive(Clone, Debug)]
pub struct Trainer {
    params: ParameterGroups,
    config: TrainConfig,
    state: TrainState,
    batches: BatchIterator,
}

impl Trainer {
    pub fn new(params: ParameterGroups, config: TrainConfig, data: &TrainData) -> Result<Self> {
        config.validate()?;
        data.check(&params)?;
        let batches = BatchIterator::new(&data.sizes(), config.batch_size, config.seed)?;
        let state = TrainState {
            step: 0,
            batches: batches.state().clone(),
            discriminators: AdamState::default(),
            translators: AdamState::default(),
            classifier: AdamState::default(),
        };
        Ok(Self {
            params,
            config,
            state,
            batches,
        })
    }

    /// Continues a run from a saved state.
    pub fn resume(params: ParameterGroups, config: TrainConfig, data: &TrainData, state: TrainState) -> Result<Self> {
        config.validate()?;
        data.check(&params)?;
        let batches = BatchIterator::restore(&data.sizes(), config.batch_size, config.seed, state.batches.clone())?;
        Ok(Self {
            params,
            config,
            state,
            batches,
        })
    }

    pub fn params(&self) -> &ParameterGroups {
        &self.params
    }

    pub fn into_params(self) -> ParameterGroups {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn is_finished(&self) -> bool {
        self.config.dry_run || self.state.step >= self.config.max_steps
    }

    fn source_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.params.num_sources()).collect();
        if self.config.shuffle_sources {
            order.shuffle(&mut rng::stream(self.config.seed, &[tags::SOURCE_ORDER, self.state.step]));
        }
        order
    }

    /// One outer step: a target batch, then the three phases for every
    /// source in turn.
    pub fn train_step(&mut self, data: &TrainData, observer: &mut dyn Observer) -> Result<()> {
        let step = self.state.step;
        let m = self.params.num_sources();
        let batch = self.batches.next_step();
        let x_target = data.target.batch_tensor(&batch[m]);
        let cfg = self.config.clone();
        for i in self.source_order() {
            let source = Some(i);
            let x_source = data.sources[i].batch_tensor(&batch[i]);
            let labels = data.sources[i].batch_labels(&batch[i]).expect("labelled source");

            if cfg.switches.gan {
                let report = apply_phase(
                    &mut self.params,
                    &mut self.state.discriminators,
                    &cfg,
                    step,
                    source,
                    Phase::Discriminators,
                    &PhaseMask::discriminators(m),
                    |tape, model, _| {
                        let xs = tape.input(x_source.clone());
                        let xt = tape.input(x_target.clone());
                        let g = gan_losses(tape, model, i, xs, xt)?;
                        let mut losses = BTreeMap::new();
                        losses.insert("disc_target".into(), tape.scalar(g.d_loss_target));
                        losses.insert("disc_source".into(), tape.scalar(g.d_loss_source));
                        Ok((tape.weighted_sum(&[(g.d_loss_target, 1.0), (g.d_loss_source, 1.0)]), losses))
                    },
                )?;
                observer.phase(&report, &self.params)?;
            }

            let report = apply_phase(
                &mut self.params,
                &mut self.state.translators,
                &cfg,
                step,
                source,
                Phase::Translators,
                &PhaseMask::translators(i, m),
                |tape, model, noise| {
                    let xs = tape.input(x_source.clone());
                    let xt = tape.input(x_target.clone());
                    let (loss, r) = source_objective(tape, model, i, xs, xt, &cfg.weights, &cfg.switches, noise)?;
                    let mut losses = BTreeMap::new();
                    for (k, v) in [
                        ("mvae_source", r.mvae_source[0]),
                        ("mvae_target", r.mvae_target),
                        ("gan_source", r.gan_source[0]),
                        ("gan_target", r.gan_target),
                        ("cyc_source", r.cyc_source[0]),
                        ("cyc_target", r.cyc_target[0]),
                        ("esc", r.esc[0]),
                    ] {
                        losses.insert(k.into(), v);
                    }
                    Ok((loss, losses))
                },
            )?;
            observer.phase(&report, &self.params)?;

            let report = apply_phase(
                &mut self.params,
                &mut self.state.classifier,
                &cfg,
                step,
                source,
                Phase::Classifier,
                &PhaseMask::classifier(i, m),
                |tape, model, _| {
                    let xs = tape.input(x_source.clone());
                    let (loss, [direct, adapted]) = task_loss(tape, model, i, xs, &labels, &cfg.weights)?;
                    let mut losses = BTreeMap::new();
                    losses.insert("task_source".into(), tape.scalar(direct));
                    losses.insert("task_adapted".into(), tape.scalar(adapted));
                    Ok((loss, losses))
                },
            )?;
            observer.phase(&report, &self.params)?;
        }
        self.state.step += 1;
        self.state.batches = self.batches.state().clone();
        observer.step_end(self)
    }

    /// Trains until `max_steps` (nothing at all on a dry run).
    pub fn run(&mut self, data: &TrainData, observer: &mut dyn Observer) -> Result<()> {
        while !self.is_finished() {
            self.train_step(data, observer)?;
        }
        Ok(())
    }
}

/// Builds a trainer, runs it to completion and returns the final
/// parameters.
pub fn train(
    params: ParameterGroups,
    data: &TrainData,
    config: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<ParameterGroups> {
    let mut trainer = Trainer::new(params, config.clone(), data)?;
    trainer.run(data, observer)?;
    Ok(trainer.into_params())
}

/// Cross-entropy training of the target encoder and classifier on one
/// labelled dataset, without any adaptation term. Serves both the
/// source-only baseline (pooled sources) and the oracle (labelled target).
pub fn train_supervised(
    params: &mut ParameterGroups,
    data: &DomainDataset,
    config: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<()> {
    config.validate()?;
    check_dataset(data, params.spec().image_shape())?;
    let labels_all = data
        .labels()
        .ok_or_else(|| Error::Config(format!("domain `{}` is unlabelled", data.domain_id)))?;
    if let Some(&y) = labels_all.iter().find(|&&y| y >= params.spec().num_classes) {
        return Err(Error::Label {
            label: y,
            classes: params.spec().num_classes,
        });
    }
    if config.dry_run {
        return Ok(());
    }
    let mut batches = BatchIterator::new(&[data.len()], config.batch_size, config.seed)?;
    let mask = PhaseMask::new(&[GroupId::TargetEncoder, GroupId::Classifier], params.num_sources());
    let mut adam = AdamState::default();
    for step in 0..config.max_steps {
        let idx = batches.next_step().remove(0);
        let x = data.batch_tensor(&idx);
        let labels = data.batch_labels(&idx).expect("labelled");
        let report = apply_phase(params, &mut adam, config, step, None, Phase::Supervised, &mask, |tape, model, _| {
            let xv = tape.input(x);
            let z = model.encode(tape, Domain::Target, xv)?;
            let logits = model.classify(tape, z)?;
            let ce = tape.cross_entropy(logits, &labels)?;
            let mut losses = BTreeMap::new();
            losses.insert("task_target".into(), tape.scalar(ce));
            Ok((ce, losses))
        })?;
        observer.phase(&report, params)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_benchmark, BenchmarkSpec};
    use crate::networks::{build_models, NetSpec};

    struct Fixture {
        sources: Vec<DomainDataset>,
        target: DomainDataset,
        params: ParameterGroups,
        config: TrainConfig,
    }

    fn fixture(m: usize, seed: u64) -> Fixture {
        let mut bench = BenchmarkSpec::calibrated(m, 16, seed);
        bench.image_size = 8;
        let mut sources = generate_benchmark(&bench).unwrap();
        let target = sources.pop().unwrap();
        let mut spec = NetSpec::new(8, 3, alloc::vec![2, 3], 2);
        spec.classifier_hidden = 4;
        let config = TrainConfig {
            max_steps: 4,
            batch_size: 4,
            learning_rate: 1e-3,
            seed,
            verify_invariants: true,
            ..TrainConfig::default()
        };
        Fixture {
            sources,
            target,
            params: build_models(&spec, m, seed).unwrap(),
            config,
        }
    }

    impl Fixture {
        fn data(&self) -> TrainData<'_> {
            TrainData {
                sources: &self.sources,
                target: &self.target,
            }
        }
    }

    #[test]
    fn dry_run_returns_input_parameters() {
        let f = fixture(2, 0);
        let cfg = TrainConfig {
            dry_run: true,
            ..f.config.clone()
        };
        let mut reports = Vec::new();
        let out = train(f.params.clone(), &f.data(), &cfg, &mut reports).unwrap();
        assert_eq!(out, f.params);
        assert!(reports.is_empty());
    }

    /// Per-group fingerprints after every phase.
    struct Snapshots(Vec<(PhaseReport, Vec<(GroupId, u64)>)>);

    impl Observer for Snapshots {
        fn phase(&mut self, report: &PhaseReport, params: &ParameterGroups) -> Result<()> {
            let groups = GroupId::all(params.num_sources())
                .into_iter()
                .map(|g| {
                    let storages: Vec<usize> = params.group_slots(g).into_iter().map(|(_, s)| s).collect();
                    (g, fingerprint(params, &storages))
                })
                .collect();
            self.0.push((report.clone(), groups));
            Ok(())
        }
    }

    #[test]
    fn each_phase_touches_only_its_groups() {
        let m = 2;
        let f = fixture(m, 1);
        let mut trainer = Trainer::new(f.params.clone(), f.config.clone(), &f.data()).unwrap();
        let mut snaps = Snapshots(Vec::new());
        let initial: Vec<u64> = GroupId::all(m)
            .into_iter()
            .map(|g| {
                let s: Vec<usize> = f.params.group_slots(g).into_iter().map(|(_, s)| s).collect();
                fingerprint(&f.params, &s)
            })
            .collect();
        trainer.run(&f.data(), &mut snaps).unwrap();
        assert_eq!(snaps.0.len(), 4 * m * 3);
        let mut prev = initial;
        for (report, groups) in &snaps.0 {
            let i = report.source_index.unwrap();
            let mask = match report.phase {
                Phase::Discriminators => PhaseMask::discriminators(m),
                Phase::Translators => PhaseMask::translators(i, m),
                Phase::Classifier => PhaseMask::classifier(i, m),
                Phase::Supervised => unreachable!(),
            };
            for (k, (g, h)) in groups.iter().enumerate() {
                // a frozen group may still move through a tied block it
                // shares with an updated one
                let tied = f.params.group_slots(*g).iter().any(|(_, s)| {
                    f.params.storage_owners(*s).len() > 1 && mask.storage_mask(&f.params)[*s]
                });
                if mask.frozen.contains(g) && !tied {
                    assert_eq!(*h, prev[k], "{:?} changed {}", report.phase, g.name());
                }
                if mask.updatable.contains(g) {
                    assert_ne!(*h, prev[k], "{:?} left {} unchanged", report.phase, g.name());
                }
            }
            prev = groups.iter().map(|(_, h)| *h).collect();
        }
        trainer.params().check_sharing().unwrap();
    }

    #[test]
    fn phase_order_follows_the_source_loop() {
        let f = fixture(3, 2);
        let mut reports = Vec::new();
        train(f.params.clone(), &f.data(), &TrainConfig { max_steps: 1, ..f.config.clone() }, &mut reports).unwrap();
        let order: Vec<(Option<usize>, Phase)> = reports.iter().map(|r| (r.source_index, r.phase)).collect();
        let mut expected = Vec::new();
        for i in 0..3 {
            for p in [Phase::Discriminators, Phase::Translators, Phase::Classifier] {
                expected.push((Some(i), p));
            }
        }
        assert_eq!(order, expected);
        assert!(reports.iter().all(|r| r.losses.values().all(|v| v.is_finite())));
    }

    #[test]
    fn shuffled_source_order_is_seeded_permutation() {
        let f = fixture(3, 2);
        let cfg = TrainConfig {
            shuffle_sources: true,
            max_steps: 3,
            ..f.config.clone()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        train(f.params.clone(), &f.data(), &cfg, &mut a).unwrap();
        train(f.params.clone(), &f.data(), &cfg, &mut b).unwrap();
        assert_eq!(a, b);
        for step in 0..3 {
            let mut seen: Vec<usize> = a
                .iter()
                .filter(|r| r.step == step && r.phase == Phase::Classifier)
                .map(|r| r.source_index.unwrap())
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, alloc::vec![0, 1, 2]);
        }
    }

    #[test]
    fn identical_configs_give_identical_runs() {
        let f = fixture(2, 3);
        let mut ra = Vec::new();
        let mut rb = Vec::new();
        let a = train(f.params.clone(), &f.data(), &f.config, &mut ra).unwrap();
        let b = train(f.params.clone(), &f.data(), &f.config, &mut rb).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let f = fixture(2, 4);
        let cfg = TrainConfig {
            max_steps: 6,
            ..f.config.clone()
        };
        let full = train(f.params.clone(), &f.data(), &cfg, &mut ()).unwrap();
        let mut first = Trainer::new(f.params.clone(), TrainConfig { max_steps: 3, ..cfg.clone() }, &f.data()).unwrap();
        first.run(&f.data(), &mut ()).unwrap();
        let state = first.state().clone();
        let params = first.into_params();
        let mut second = Trainer::resume(params, cfg, &f.data(), state).unwrap();
        second.run(&f.data(), &mut ()).unwrap();
        assert_eq!(second.step(), 6);
        assert_eq!(second.into_params(), full);
    }

    #[test]
    fn non_finite_parameters_abort_with_diagnostics() {
        let mut f = fixture(1, 5);
        let s = f.params.slot(GroupId::DiscTarget, "head/b").unwrap();
        f.params.tensor_mut(s).data_mut()[0] = f64::NAN;
        let err = train(f.params.clone(), &f.data(), &f.config, &mut ()).unwrap_err();
        match err {
            Error::NonFinite {
                step,
                source_index,
                phase,
                diagnostics,
            } => {
                assert_eq!((step, source_index, phase.as_str()), (0, Some(0), "discriminators"));
                assert!(diagnostics.contains("disc_target=NaN"), "{diagnostics}");
                assert!(diagnostics.contains("phi_T=NaN"), "{diagnostics}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let f = fixture(1, 0);
        for cfg in [
            TrainConfig { max_steps: 0, ..f.config.clone() },
            TrainConfig { learning_rate: 0.0, ..f.config.clone() },
            TrainConfig { adam_beta1: 1.0, ..f.config.clone() },
            TrainConfig { batch_size: 100, ..f.config.clone() },
        ] {
            assert!(Trainer::new(f.params.clone(), cfg, &f.data()).is_err());
        }
        let wrong_m = build_models(f.params.spec(), 2, 0).unwrap();
        assert!(Trainer::new(wrong_m, f.config.clone(), &f.data()).is_err());
    }

    #[test]
    fn supervised_training_fits_the_labels() {
        let f = fixture(1, 6);
        let mut params = f.params.clone();
        let cfg = TrainConfig {
            max_steps: 150,
            learning_rate: 1e-2,
            ..f.config.clone()
        };
        let mut reports = Vec::new();
        train_supervised(&mut params, &f.sources[0], &cfg, &mut reports).unwrap();
        let first = reports[..10].iter().map(|r| r.losses["task_target"]).sum::<f64>();
        let last = reports[reports.len() - 10..].iter().map(|r| r.losses["task_target"]).sum::<f64>();
        assert!(last < 0.5 * first, "{first} -> {last}");
        // only the target encoder and classifier moved
        for g in [GroupId::DiscSource, GroupId::GenToTarget, GroupId::SourceEncoder(0)] {
            for s in params.private_storages(g) {
                assert_eq!(params.tensor(s), f.params.tensor(s));
            }
        }
    }
}
