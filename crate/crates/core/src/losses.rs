//! Training objectives: variational reconstruction, adversarial,
//! semantic-consistency, cycle and classification losses.
//!
//! Every function records its computation on the caller's [`Tape`] and
//! returns the scalar node, so a caller can differentiate any combination.
//! Network evaluations are memoised per tape: asking twice for the same
//! encoding or translation reuses the first result.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Domain, Pipelines, Side};
use crate::rng::LatentNoise;
use crate::tape::{Tape, Var};

/// Objective weights. `lambda0`/`lambda2` weight the KL terms of the
/// reconstruction and cycle objectives, `lambda1`/`lambda3` their Laplacian
/// likelihood terms, `lambda4`/`lambda5` the two classification terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            lambda1: 0.1,
            lambda2: 10.0,
            lambda3: 0.1,
            lambda4: 1.0,
            lambda5: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.lambda0, self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.as_array().iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Config(alloc::format!("lambda{i} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Sets the KL weights (`lambda0`, `lambda2`) and likelihood weights
    /// (`lambda1`, `lambda3`) together.
    pub fn with_kl_nll(mut self, kl: f64, nll: f64) -> Self {
        self.lambda0 = kl;
        self.lambda2 = kl;
        self.lambda1 = nll;
        self.lambda3 = nll;
        self
    }
}

/// Per-term loss values of one evaluation. Vectors are indexed in parallel
/// with `sources`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sources: Vec<usize>,
    pub mvae_source: Vec<f64>,
    pub mvae_target: f64,
    /// Generator loss of the source-to-target GAN judged by the target
    /// discriminator.
    pub gan_source: Vec<f64>,
    /// Generator loss of the target-to-source GAN judged by the source
    /// discriminator.
    pub gan_target: f64,
    pub esc: Vec<f64>,
    pub cyc_source: Vec<f64>,
    pub cyc_target: Vec<f64>,
    pub task_source: f64,
    pub task_adapted: f64,
    pub disc_source: f64,
    pub disc_target: f64,
    pub total_mvae_gan: f64,
    /// Multiplier applied to the target-side terms inside the per-source
    /// sum (1 as printed, `1/M` when deduplicated).
    pub target_term_scale: f64,
}

impl LossReport {
    /// Recomputes the MVAE-GAN sum from the stored constituents.
    pub fn recomputed_total(&self) -> f64 {
        let c = self.target_term_scale;
        (0..self.sources.len())
            .map(|k| {
                self.mvae_source[k]
                    + c * self.mvae_target
                    + self.gan_source[k]
                    + self.cyc_source[k]
                    + c * self.gan_target
                    + c * self.cyc_target[k]
            })
            .sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.mvae_source
            .iter()
            .chain(&self.gan_source)
            .chain(&self.esc)
            .chain(&self.cyc_source)
            .chain(&self.cyc_target)
            .copied()
            .chain([
                self.mvae_target,
                self.gan_target,
                self.task_source,
                self.task_adapted,
                self.disc_source,
                self.disc_target,
                self.total_mvae_gan,
            ])
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Batch mean of `KL(N(mu, I) || N(0, I)) = 0.5 |mu|^2`.
pub fn kl_unit_gaussian(tape: &mut Tape, mean: Var) -> Var {
    tape.kl_unit(mean)
}

/// Laplacian negative log-likelihood with unit scale, constants dropped:
/// the mean absolute error.
pub fn laplacian_nll(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
    tape.mean_abs_diff(x, x_hat)
}

fn zero(tape: &mut Tape) -> Var {
    tape.input(crate::Tensor::scalar(0.0))
}

/// `x -> z -> z + eta -> x'` through the domain's own encoder and its
/// reconstruction generator, weighted as `kl_weight * KL + nll_weight * NLL`.
fn variational_term<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    encode_as: Domain,
    decode_as: Side,
    x: Var,
    reference: Var,
    kl_weight: f64,
    nll_weight: f64,
    noise: &mut dyn LatentNoise,
) -> Result<Var> {
    if kl_weight == 0.0 && nll_weight == 0.0 {
        return Ok(zero(tape));
    }
    let z = model.encode(tape, encode_as, x)?;
    let mut terms = Vec::with_capacity(2);
    if kl_weight != 0.0 {
        terms.push((kl_unit_gaussian(tape, z), kl_weight));
    }
    if nll_weight != 0.0 {
        let eta = noise.sample(tape.value(z).shape());
        let eta = tape.input(eta);
        let zs = tape.add(z, eta)?;
        let recon = model.decode(tape, decode_as, zs)?;
        terms.push((laplacian_nll(tape, reference, recon)?, nll_weight));
    }
    Ok(tape.weighted_sum(&terms))
}

/// Reconstruction objective of one domain:
/// `lambda0 * KL(E(x)) + lambda1 * NLL(x, G(E(x) + eta))`.
pub fn mvae_loss<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    domain: Domain,
    x: Var,
    weights: &LossWeights,
    noise: &mut dyn LatentNoise,
) -> Result<Var> {
    model.check_domain(domain)?;
    variational_term(tape, model, domain, domain.recon_side(), x, x, weights.lambda0, weights.lambda1, noise)
}

/// Translation of a batch into the other domain's style: sources through
/// the source-to-target generator, target images through the reverse one.
pub fn translate<P: Pipelines + ?Sized>(tape: &mut Tape, model: &P, domain: Domain, x: Var) -> Result<Var> {
    let z = model.encode(tape, domain, x)?;
    let side = match domain {
        Domain::Source(_) => Side::Target,
        Domain::Target => Side::Source,
    };
    model.decode(tape, side, z)
}

/// `-E[log D(real)] - E[log(1 - D(fake))]`, minimised by the discriminator.
pub fn discriminator_loss<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    side: Side,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let lr = model.discriminate(tape, side, real)?;
    let lf = model.discriminate(tape, side, fake)?;
    let a = tape.log_prob_loss(lr, true);
    let b = tape.log_prob_loss(lf, false);
    Ok(tape.weighted_sum(&[(a, 1.0), (b, 1.0)]))
}

/// Non-saturating generator loss `-E[log D(fake)]`.
pub fn generator_loss<P: Pipelines + ?Sized>(tape: &mut Tape, model: &P, side: Side, fake: Var) -> Result<Var> {
    let lf = model.discriminate(tape, side, fake)?;
    Ok(tape.log_prob_loss(lf, true))
}

#[derive(Clone, Copy, Debug)]
pub struct GanLosses {
    /// Target discriminator on real target images vs translated source `i`.
    pub d_loss_target: Var,
    /// Generator side of the same game.
    pub g_loss_target: Var,
    /// Source discriminator on real source `i` images vs translated target.
    pub d_loss_source: Var,
    pub g_loss_source: Var,
}

/// Both adversarial games between source `i` and the target.
pub fn gan_losses<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    source: usize,
    x_source: Var,
    x_target: Var,
) -> Result<GanLosses> {
    let domain = Domain::Source(source);
    model.check_domain(domain)?;
    let fake_target = translate(tape, model, domain, x_source)?;
    let fake_source = translate(tape, model, Domain::Target, x_target)?;
    Ok(GanLosses {
        d_loss_target: discriminator_loss(tape, model, Side::Target, x_target, fake_target)?,
        g_loss_target: generator_loss(tape, model, Side::Target, fake_target)?,
        d_loss_source: discriminator_loss(tape, model, Side::Source, x_source, fake_source)?,
        g_loss_source: generator_loss(tape, model, Side::Source, fake_source)?,
    })
}

/// Semantic consistency between a source batch and its translation:
/// batch mean of `KL(softmax F(E_i(x)) || softmax F(E_T(G_ST(E_i(x)))))`.
pub fn esc_loss<P: Pipelines + ?Sized>(tape: &mut Tape, model: &P, source: usize, x_source: Var) -> Result<Var> {
    let domain = Domain::Source(source);
    model.check_domain(domain)?;
    let z = model.encode(tape, domain, x_source)?;
    let p = model.classify(tape, z)?;
    let translated = translate(tape, model, domain, x_source)?;
    let z_t = model.encode(tape, Domain::Target, translated)?;
    let q = model.classify(tape, z_t)?;
    tape.softmax_kl(p, q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CycleDirection {
    /// Source `i` to target and back.
    SourceTargetSource(usize),
    /// Target to source `i` style and back.
    TargetSourceTarget(usize),
}

/// Cycle reconstruction: translate, re-encode with the other domain's
/// encoder, decode back and compare with the original batch.
pub fn cycle_loss<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    direction: CycleDirection,
    x: Var,
    weights: &LossWeights,
    noise: &mut dyn LatentNoise,
) -> Result<Var> {
    let (origin, other, back) = match direction {
        CycleDirection::SourceTargetSource(i) => (Domain::Source(i), Domain::Target, Side::Source),
        CycleDirection::TargetSourceTarget(i) => (Domain::Target, Domain::Source(i), Side::Target),
    };
    model.check_domain(origin)?;
    model.check_domain(other)?;
    if weights.lambda2 == 0.0 && weights.lambda3 == 0.0 {
        return Ok(zero(tape));
    }
    let translated = translate(tape, model, origin, x)?;
    variational_term(tape, model, other, back, translated, x, weights.lambda2, weights.lambda3, noise)
}

/// Classification loss on labelled source images and on their translations:
/// `lambda4 * CE(F(E_i(x)), y) + lambda5 * CE(F(E_T(G_ST(E_i(x)))), y)`.
pub fn task_loss<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    source: usize,
    x_source: Var,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(Var, [Var; 2])> {
    let domain = Domain::Source(source);
    model.check_domain(domain)?;
    let direct = if weights.lambda4 != 0.0 {
        let z = model.encode(tape, domain, x_source)?;
        let logits = model.classify(tape, z)?;
        tape.cross_entropy(logits, labels)?
    } else {
        zero(tape)
    };
    let adapted = if weights.lambda5 != 0.0 {
        let translated = translate(tape, model, domain, x_source)?;
        let z = model.encode(tape, Domain::Target, translated)?;
        let logits = model.classify(tape, z)?;
        tape.cross_entropy(logits, labels)?
    } else {
        zero(tape)
    };
    let total = tape.weighted_sum(&[(direct, weights.lambda4), (adapted, weights.lambda5)]);
    Ok((total, [direct, adapted]))
}

/// Which optional pieces of the encoder/generator objective are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSwitches {
    pub gan: bool,
    pub esc: bool,
    /// Count target-side terms once overall instead of once per source.
    pub dedupe_target_terms: bool,
}

impl Default for ObjectiveSwitches {
    fn default() -> Self {
        Self {
            gan: true,
            esc: true,
            dedupe_target_terms: false,
        }
    }
}

/// Target-side terms shared by every bracket of the MVAE-GAN sum.
struct TargetTerms {
    mvae: Var,
    gan: Var,
}

fn target_terms<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    x_target: Var,
    weights: &LossWeights,
    switches: &ObjectiveSwitches,
    noise: &mut dyn LatentNoise,
) -> Result<TargetTerms> {
    let mvae = mvae_loss(tape, model, Domain::Target, x_target, weights, noise)?;
    let gan = if switches.gan {
        let fake = translate(tape, model, Domain::Target, x_target)?;
        generator_loss(tape, model, Side::Source, fake)?
    } else {
        zero(tape)
    };
    Ok(TargetTerms { mvae, gan })
}

struct SourceTerms {
    mvae: Var,
    gan: Var,
    cyc_source: Var,
    cyc_target: Var,
}

fn source_terms<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    source: usize,
    x_source: Var,
    x_target: Var,
    weights: &LossWeights,
    switches: &ObjectiveSwitches,
    noise: &mut dyn LatentNoise,
) -> Result<SourceTerms> {
    let domain = Domain::Source(source);
    let mvae = mvae_loss(tape, model, domain, x_source, weights, noise)?;
    let gan = if switches.gan {
        let fake = translate(tape, model, domain, x_source)?;
        generator_loss(tape, model, Side::Target, fake)?
    } else {
        zero(tape)
    };
    let cyc_source = cycle_loss(tape, model, CycleDirection::SourceTargetSource(source), x_source, weights, noise)?;
    let cyc_target = cycle_loss(tape, model, CycleDirection::TargetSourceTarget(source), x_target, weights, noise)?;
    Ok(SourceTerms {
        mvae,
        gan,
        cyc_source,
        cyc_target,
    })
}

fn assemble(tape: &mut Tape, sources: &[(usize, SourceTerms)], target: &TargetTerms, scale: f64) -> (Var, LossReport) {
    let mut terms = Vec::new();
    let mut report = LossReport {
        target_term_scale: scale,
        mvae_target: tape.scalar(target.mvae),
        gan_target: tape.scalar(target.gan),
        ..LossReport::default()
    };
    for (i, t) in sources {
        terms.extend([
            (t.mvae, 1.0),
            (target.mvae, scale),
            (t.gan, 1.0),
            (t.cyc_source, 1.0),
            (target.gan, scale),
            (t.cyc_target, scale),
        ]);
        report.sources.push(*i);
        report.mvae_source.push(tape.scalar(t.mvae));
        report.gan_source.push(tape.scalar(t.gan));
        report.cyc_source.push(tape.scalar(t.cyc_source));
        report.cyc_target.push(tape.scalar(t.cyc_target));
    }
    let total = tape.weighted_sum(&terms);
    report.total_mvae_gan = tape.scalar(total);
    (total, report)
}

/// The full MVAE-GAN objective over every source batch: for each source,
/// its reconstruction, adversarial and source-cycle terms plus the target
/// reconstruction, target adversarial and target-cycle terms. As printed
/// the target terms sit inside the per-source sum; `dedupe_target_terms`
/// divides them by `M` instead.
pub fn mvae_gan_total<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    x_sources: &[Var],
    x_target: Var,
    weights: &LossWeights,
    switches: &ObjectiveSwitches,
    noise: &mut dyn LatentNoise,
) -> Result<(Var, LossReport)> {
    if x_sources.len() != model.num_sources() {
        return Err(Error::Config(alloc::format!(
            "expected {} source batches, got {}",
            model.num_sources(),
            x_sources.len()
        )));
    }
    let target = target_terms(tape, model, x_target, weights, switches, noise)?;
    let mut per_source = Vec::with_capacity(x_sources.len());
    for (i, &x) in x_sources.iter().enumerate() {
        per_source.push((i, source_terms(tape, model, i, x, x_target, weights, switches, noise)?));
    }
    let scale = if switches.dedupe_target_terms {
        1.0 / x_sources.len() as f64
    } else {
        1.0
    };
    Ok(assemble(tape, &per_source, &target, scale))
}

/// The encoder/generator objective for one inner iteration: the bracket
/// of the MVAE-GAN sum belonging to source `i` (target terms scaled by
/// `target_scale`) plus, when enabled, the semantic-consistency loss.
pub fn source_objective<P: Pipelines + ?Sized>(
    tape: &mut Tape,
    model: &P,
    source: usize,
    x_source: Var,
    x_target: Var,
    weights: &LossWeights,
    switches: &ObjectiveSwitches,
    noise: &mut dyn LatentNoise,
) -> Result<(Var, LossReport)> {
    model.check_domain(Domain::Source(source))?;
    let target = target_terms(tape, model, x_target, weights, switches, noise)?;
    let terms = source_terms(tape, model, source, x_source, x_target, weights, switches, noise)?;
    let scale = if switches.dedupe_target_terms {
        1.0 / model.num_sources() as f64
    } else {
        1.0
    };
    let (total, mut report) = assemble(tape, &[(source, terms)], &target, scale);
    if !switches.esc {
        report.esc = vec![0.0];
        return Ok((total, report));
    }
    let esc = esc_loss(tape, model, source, x_source)?;
    report.esc = vec![tape.scalar(esc)];
    Ok((tape.weighted_sum(&[(total, 1.0), (esc, 1.0)]), report))
}

#[cfg(test)]
mod tests;
