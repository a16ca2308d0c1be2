use proptest::prelude::*;

use super::*;
use crate::gradcheck::check_gradients;
use crate::networks::{build_models, AffineStub, GroupId, NetSpec, ParameterGroups};
use crate::rng::{self, normal, GaussianNoise, ZeroNoise};
use crate::tensor::Tensor;

const LN2: f64 = core::f64::consts::LN_2;

fn with_tape(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
    let mut tape = Tape::new(&[], &[]);
    let v = f(&mut tape).unwrap();
    tape.scalar(v)
}

fn kl_of(mu: Tensor) -> f64 {
    with_tape(|t| {
        let m = t.input(mu);
        Ok(kl_unit_gaussian(t, m))
    })
}

fn nll_of(a: Tensor, b: Tensor) -> f64 {
    with_tape(|t| {
        let a = t.input(a);
        let b = t.input(b);
        laplacian_nll(t, a, b)
    })
}

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut r = rng::stream(seed, &[42]);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = scale * normal(&mut r);
    }
    t
}

fn images(batch: usize, seed: u64) -> Tensor {
    random_tensor(&[batch, 2, 2, 1], seed, 0.5).map(|v| v.clamp(-1.0, 1.0))
}

fn stub(m: usize) -> AffineStub {
    AffineStub::identity(m, [2, 2, 1], 2)
}

/// Independent summation of `0.5 * |mu|^2` averaged over rows.
fn kl_oracle(mu: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..mu.batch() {
        let mut s = 0.0;
        for v in mu.item(i) {
            s += v * v;
        }
        total += 0.5 * s;
    }
    total / mu.batch() as f64
}

/// Monte-Carlo estimate of `E_q[log q(z) - log p(z)]` for `q = N(mu, I)`,
/// `p = N(0, I)`.
fn kl_monte_carlo(mu: &[f64], samples: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, &[7]);
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut log_q = 0.0;
        let mut log_p = 0.0;
        for m in mu {
            let z = m + normal(&mut r);
            log_q -= 0.5 * (z - m) * (z - m);
            log_p -= 0.5 * z * z;
        }
        acc += log_q - log_p;
    }
    acc / samples as f64
}

#[test]
fn kl_closed_form_cases() {
    let d = 5;
    assert_eq!(kl_of(Tensor::zeros(&[3, d])), 0.0);
    let mut e1 = Tensor::zeros(&[1, d]);
    e1.data_mut()[0] = 1.0;
    assert!((kl_of(e1.clone()) - 0.5).abs() < 1e-15);
    let mu = random_tensor(&[4, d], 1, 1.0);
    let a = kl_of(mu.clone());
    let b = kl_of(mu.map(|v| 2.0 * v));
    assert!((b - 4.0 * a).abs() < 1e-12);
    assert!((a - kl_oracle(&mu)).abs() < 1e-9);
}

#[test]
fn kl_matches_monte_carlo() {
    for seed in 0..3 {
        let mut mu = random_tensor(&[1, 4], seed + 10, 1.0);
        let norm = libm::sqrt(mu.sq_norm());
        let target = 3.0 * (seed as f64 + 1.0) / 3.0;
        mu = mu.map(|v| v * target / norm);
        let closed = kl_of(mu.clone());
        let mc = kl_monte_carlo(mu.data(), 100_000, seed);
        assert!((closed - mc).abs() < 0.02, "closed {closed} vs mc {mc}");
    }
}

#[test]
fn laplacian_cases() {
    let x = images(3, 1);
    let y = images(3, 2);
    assert_eq!(nll_of(x.clone(), x.clone()), 0.0);
    let ones = Tensor::full(&[2, 2, 2, 1], 1.0);
    let zeros = Tensor::zeros(&[2, 2, 2, 1]);
    assert_eq!(nll_of(ones.clone(), zeros.clone()), 1.0);
    let ab = nll_of(x.clone(), y.clone());
    let ba = nll_of(y.clone(), x.clone());
    assert_eq!(ab, ba);
}

#[test]
fn laplacian_rejects_shape_mismatch() {
    let mut tape = Tape::new(&[], &[]);
    let a = tape.input(images(3, 1));
    let b = tape.input(images(2, 1));
    assert!(matches!(laplacian_nll(&mut tape, a, b), Err(Error::Shape { .. })));
}

#[test]
fn mvae_weight_zero_and_identity_autoencoder() {
    let s = stub(1);
    let x = images(3, 4);
    let zero_w = LossWeights::default().with_kl_nll(0.0, 0.0);
    let v = with_tape(|t| {
        let xv = t.input(x.clone());
        mvae_loss(t, &s, Domain::Source(0), xv, &zero_w, &mut GaussianNoise::new(1))
    });
    assert_eq!(v, 0.0);
    let w = LossWeights::default();
    for domain in [Domain::Source(0), Domain::Target] {
        let v = with_tape(|t| {
            let xv = t.input(x.clone());
            mvae_loss(t, &s, domain, xv, &w, &mut ZeroNoise)
        });
        let mu = x.clone().reshape(&[3, 4]).unwrap();
        assert!((v - w.lambda0 * kl_oracle(&mu)).abs() < 1e-12);
    }
}

#[test]
fn mvae_rejects_unknown_source() {
    let s = stub(2);
    let mut tape = Tape::new(&[], &[]);
    let x = tape.input(images(1, 1));
    let err = mvae_loss(&mut tape, &s, Domain::Source(2), x, &LossWeights::default(), &mut ZeroNoise).unwrap_err();
    assert_eq!(err, Error::Domain { index: 2, count: 2 });
}

fn gan_values(s: &AffineStub, xs: &Tensor, xt: &Tensor) -> [f64; 4] {
    let mut tape = Tape::new(&[], &[]);
    let a = tape.input(xs.clone());
    let b = tape.input(xt.clone());
    let g = gan_losses(&mut tape, s, 0, a, b).unwrap();
    [g.d_loss_target, g.g_loss_target, g.d_loss_source, g.g_loss_source].map(|v| tape.scalar(v))
}

#[test]
fn uninformative_discriminator_is_at_maximum_entropy() {
    let [dt, gt, ds, gs] = gan_values(&stub(1), &images(2, 1), &images(2, 2));
    assert!((dt - 2.0 * LN2).abs() < 1e-12);
    assert!((ds - 2.0 * LN2).abs() < 1e-12);
    assert!((gt - LN2).abs() < 1e-12);
    assert!((gs - LN2).abs() < 1e-12);
    assert!((dt - 1.3863).abs() < 1e-4);
}

#[test]
fn perfect_discriminator_limits() {
    // sources are bright, targets dark; identity translation keeps that,
    // so a discriminator keyed on brightness separates real from fake
    let mut s = stub(1);
    s.to_target_scale = 1.0;
    let xs = Tensor::full(&[2, 2, 2, 1], 0.8);
    let xt = Tensor::full(&[2, 2, 2, 1], -0.8);
    s.disc_target = (Tensor::full(&[4, 1], -50.0), 0.0);
    s.disc_source = (Tensor::full(&[4, 1], 50.0), 0.0);
    let [dt, gt, ds, gs] = gan_values(&s, &xs, &xt);
    assert!(dt < 1e-5 && ds < 1e-5, "{dt} {ds}");
    assert!(gt > 10.0 && gs > 10.0, "{gt} {gs}");
    // clamped at the discriminator epsilon
    assert!((gt + libm::log(crate::tape::DISC_EPS)).abs() < 1e-9);
}

/// `sum_k p_k ln(p_k / q_k)`, written out term by term.
fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..p.len() {
        s += p[k] * (libm::log(p[k]) - libm::log(q[k]));
    }
    s
}

fn esc_value(s: &AffineStub, x: &Tensor) -> f64 {
    with_tape(|t| {
        let xv = t.input(x.clone());
        esc_loss(t, s, 0, xv)
    })
}

#[test]
fn esc_hand_value() {
    // logits (ln 9, 0) -> (0.9, 0.1); the negating translation gives
    // (-ln 9, 0) -> (0.1, 0.9)
    let mut s = stub(1);
    s.to_target_scale = -1.0;
    let mut x = Tensor::zeros(&[1, 2, 2, 1]);
    x.data_mut()[0] = libm::log(9.0);
    let v = esc_value(&s, &x);
    let oracle = discrete_kl(&[0.9, 0.1], &[0.1, 0.9]);
    let printed = 0.9 * libm::log(9.0) + 0.1 * libm::log(1.0 / 9.0);
    assert!((oracle - printed).abs() < 1e-12);
    assert!((v - 1.7578).abs() < 1e-3, "{v}");
    assert!((v - oracle).abs() < 1e-9);
}

#[test]
fn esc_vanishes_under_identity_translation() {
    let x = images(3, 8);
    assert!(esc_value(&stub(2), &x).abs() < 1e-12);
}

#[test]
fn esc_is_shift_invariant_in_logits() {
    let mut s = stub(1);
    s.to_target_scale = -0.7;
    let x = images(3, 5);
    let base = esc_value(&s, &x);
    s.classifier.1 = Tensor::full(&[2], 3.25);
    assert!((esc_value(&s, &x) - base).abs() < 1e-12);
}

#[test]
fn cycle_cases() {
    let s = stub(2);
    let x = images(3, 6);
    let off = LossWeights::default().with_kl_nll(10.0, 0.1);
    let off = LossWeights {
        lambda2: 0.0,
        lambda3: 0.0,
        ..off
    };
    for dir in [CycleDirection::SourceTargetSource(1), CycleDirection::TargetSourceTarget(0)] {
        let v = with_tape(|t| {
            let xv = t.input(x.clone());
            cycle_loss(t, &s, dir, xv, &off, &mut GaussianNoise::new(2))
        });
        assert_eq!(v, 0.0);
        let w = LossWeights::default();
        let v = with_tape(|t| {
            let xv = t.input(x.clone());
            cycle_loss(t, &s, dir, xv, &w, &mut ZeroNoise)
        });
        let flat = x.clone().reshape(&[3, 4]).unwrap();
        assert!((v - w.lambda2 * kl_oracle(&flat)).abs() < 1e-12);
    }
}

#[test]
fn task_loss_cases() {
    let mut s = stub(1);
    s.classifier.0 = Tensor::zeros(&[4, 2]);
    let x = images(4, 3);
    let w = LossWeights {
        lambda4: 1.0,
        lambda5: 0.0,
        ..LossWeights::default()
    };
    let v = with_tape(|t| {
        let xv = t.input(x.clone());
        Ok(task_loss(t, &s, 0, xv, &[0, 1, 1, 0], &w)?.0)
    });
    assert!((v - LN2).abs() < 1e-6);

    let s = stub(1);
    let mut x = Tensor::zeros(&[2, 2, 2, 1]);
    x.data_mut()[0] = 40.0;
    x.data_mut()[5] = 40.0;
    let v = with_tape(|t| {
        let xv = t.input(x.clone());
        Ok(task_loss(t, &s, 0, xv, &[0, 1], &LossWeights::default())?.0)
    });
    assert!((0.0..=1e-7).contains(&v), "{v}");
}

#[test]
fn task_loss_rejects_bad_labels() {
    let s = stub(1);
    let mut tape = Tape::new(&[], &[]);
    let x = tape.input(images(2, 1));
    assert!(matches!(
        task_loss(&mut tape, &s, 0, x, &[0, 2], &LossWeights::default()),
        Err(Error::Label { label: 2, classes: 2 })
    ));
}

fn total_report(s: &AffineStub, xs: &[Tensor], xt: &Tensor, w: &LossWeights, sw: &ObjectiveSwitches) -> (f64, LossReport) {
    let mut tape = Tape::new(&[], &[]);
    let vs: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
    let t = tape.input(xt.clone());
    let (v, r) = mvae_gan_total(&mut tape, s, &vs, t, w, sw, &mut ZeroNoise).unwrap();
    (tape.scalar(v), r)
}

#[test]
fn single_source_total_is_the_six_term_sum() {
    let mut s = stub(1);
    s.to_target_scale = 0.6;
    s.to_source_scale = -0.4;
    s.disc_target = (random_tensor(&[4, 1], 3, 1.0), 0.1);
    s.disc_source = (random_tensor(&[4, 1], 4, 1.0), -0.2);
    let xs = images(3, 1);
    let xt = images(3, 2);
    let w = LossWeights::default();
    let (total, report) = total_report(&s, &[xs.clone()], &xt, &w, &ObjectiveSwitches::default());
    let six = with_tape(|t| {
        let a = t.input(xs.clone());
        let b = t.input(xt.clone());
        let m_s = mvae_loss(t, &s, Domain::Source(0), a, &w, &mut ZeroNoise)?;
        let m_t = mvae_loss(t, &s, Domain::Target, b, &w, &mut ZeroNoise)?;
        let g = gan_losses(t, &s, 0, a, b)?;
        let c_s = cycle_loss(t, &s, CycleDirection::SourceTargetSource(0), a, &w, &mut ZeroNoise)?;
        let c_t = cycle_loss(t, &s, CycleDirection::TargetSourceTarget(0), b, &w, &mut ZeroNoise)?;
        Ok(t.weighted_sum(&[
            (m_s, 1.0),
            (m_t, 1.0),
            (g.g_loss_target, 1.0),
            (c_s, 1.0),
            (g.g_loss_source, 1.0),
            (c_t, 1.0),
        ]))
    });
    assert!((total - six).abs() <= 1e-12 * six.abs().max(1.0));
    assert!((report.recomputed_total() - total).abs() <= 1e-6 * total.abs());
}

#[test]
fn zero_weights_leave_only_adversarial_terms() {
    let m = 3;
    let s = stub(m);
    let xs: Vec<Tensor> = (0..m).map(|i| images(2, i as u64)).collect();
    let w = LossWeights::default().with_kl_nll(0.0, 0.0);
    let (total, report) = total_report(&s, &xs, &images(2, 9), &w, &ObjectiveSwitches::default());
    assert!((total - m as f64 * 2.0 * LN2).abs() < 1e-12);
    assert!((report.recomputed_total() - total).abs() <= 1e-6 * total);
}

#[test]
fn dedupe_counts_target_terms_once() {
    let m = 2;
    let mut s = stub(m);
    s.to_source_scale = 0.5;
    let xs: Vec<Tensor> = (0..m).map(|i| images(2, i as u64)).collect();
    let xt = images(2, 7);
    let w = LossWeights::default();
    let (printed, r1) = total_report(&s, &xs, &xt, &w, &ObjectiveSwitches::default());
    let sw = ObjectiveSwitches {
        dedupe_target_terms: true,
        ..ObjectiveSwitches::default()
    };
    let (deduped, r2) = total_report(&s, &xs, &xt, &w, &sw);
    let mf = m as f64;
    let target = mf * (r1.mvae_target + r1.gan_target) + r1.cyc_target.iter().sum::<f64>();
    assert!((printed - deduped - (1.0 - 1.0 / mf) * target).abs() < 1e-9);
    assert_eq!(r2.target_term_scale, 0.5);
    assert!((r2.recomputed_total() - deduped).abs() <= 1e-6 * deduped.abs());
}

#[test]
fn source_objective_adds_esc_only_when_enabled() {
    let mut s = stub(2);
    s.to_target_scale = -0.5;
    let xs = images(2, 1);
    let xt = images(2, 2);
    let w = LossWeights::default();
    let run = |sw: ObjectiveSwitches| {
        let mut tape = Tape::new(&[], &[]);
        let a = tape.input(xs.clone());
        let b = tape.input(xt.clone());
        let (v, r) = source_objective(&mut tape, &s, 1, a, b, &w, &sw, &mut ZeroNoise).unwrap();
        (tape.scalar(v), r)
    };
    let (with, r) = run(ObjectiveSwitches::default());
    let (without, _) = run(ObjectiveSwitches {
        esc: false,
        ..ObjectiveSwitches::default()
    });
    assert!(r.esc[0] > 0.0);
    assert!((with - without - r.esc[0]).abs() < 1e-12);
    assert_eq!(r.sources, vec![1]);
}

fn tiny_models(seed: u64) -> ParameterGroups {
    let mut spec = NetSpec::new(8, 3, vec![2, 3], 2);
    spec.classifier_hidden = 5;
    build_models(&spec, 2, seed).unwrap()
}

fn image_batch(batch: usize, seed: u64) -> Tensor {
    random_tensor(&[batch, 8, 8, 3], seed, 0.6).map(|v| v.clamp(-1.0, 1.0))
}

fn assert_gradients(name: &str, groups: &[GroupId], loss: impl Fn(&mut Tape, &ParameterGroups, &Tensor, &Tensor) -> Result<Var>) {
    for seed in 0..3 {
        let p = tiny_models(seed);
        let xs = image_batch(4, 100 + seed);
        let xt = image_batch(4, 200 + seed);
        let check = check_gradients(&p, groups, 2, 1e-4, seed, |t, p| loss(t, p, &xs, &xt)).unwrap();
        assert!(check.max_abs() > 1e-8, "{name}: vanishing gradient");
        let err = check.relative_error();
        assert!(err < 1e-3, "{name} seed {seed}: relative error {err}");
        let kink = check.kink_error();
        assert!(kink < 1e-3, "{name} seed {seed}: relative error {kink} at {} kinks", check.kinks());
    }
}

#[test]
fn gradients_of_kl() {
    assert_gradients("kl", &[GroupId::SourceEncoder(0)], |t, p, xs, _| {
        let x = t.input(xs.clone());
        let z = p.encode(t, Domain::Source(0), x)?;
        Ok(kl_unit_gaussian(t, z))
    });
}

#[test]
fn gradients_of_laplacian() {
    assert_gradients("nll", &[GroupId::TargetEncoder, GroupId::GenToTarget], |t, p, _, xt| {
        let x = t.input(xt.clone());
        let z = p.encode(t, Domain::Target, x)?;
        let r = p.decode(t, Side::Target, z)?;
        laplacian_nll(t, x, r)
    });
}

#[test]
fn gradients_of_mvae() {
    assert_gradients("mvae", &[GroupId::SourceEncoder(1), GroupId::GenToSource], |t, p, xs, _| {
        let x = t.input(xs.clone());
        mvae_loss(t, p, Domain::Source(1), x, &LossWeights::default().with_kl_nll(0.1, 10.0), &mut GaussianNoise::new(5))
    });
}

#[test]
fn gradients_of_gan() {
    let all = [
        GroupId::SourceEncoder(0),
        GroupId::TargetEncoder,
        GroupId::GenToTarget,
        GroupId::GenToSource,
        GroupId::DiscSource,
        GroupId::DiscTarget,
    ];
    assert_gradients("gan", &all, |t, p, xs, xt| {
        let a = t.input(xs.clone());
        let b = t.input(xt.clone());
        let g = gan_losses(t, p, 0, a, b)?;
        Ok(t.weighted_sum(&[
            (g.d_loss_target, 1.0),
            (g.g_loss_target, 0.7),
            (g.d_loss_source, 0.4),
            (g.g_loss_source, 1.3),
        ]))
    });
}

#[test]
fn gradients_of_esc() {
    let groups = [GroupId::SourceEncoder(0), GroupId::TargetEncoder, GroupId::GenToTarget, GroupId::Classifier];
    assert_gradients("esc", &groups, |t, p, xs, _| {
        let a = t.input(xs.clone());
        esc_loss(t, p, 0, a)
    });
}

#[test]
fn gradients_of_cycle() {
    let groups = [
        GroupId::SourceEncoder(1),
        GroupId::TargetEncoder,
        GroupId::GenToTarget,
        GroupId::GenToSource,
    ];
    let w = LossWeights::default().with_kl_nll(0.5, 2.0);
    assert_gradients("cycle", &groups, |t, p, xs, xt| {
        let a = t.input(xs.clone());
        let b = t.input(xt.clone());
        let mut noise = GaussianNoise::new(3);
        let c1 = cycle_loss(t, p, CycleDirection::SourceTargetSource(1), a, &w, &mut noise)?;
        let c2 = cycle_loss(t, p, CycleDirection::TargetSourceTarget(1), b, &w, &mut noise)?;
        Ok(t.weighted_sum(&[(c1, 1.0), (c2, 1.0)]))
    });
}

#[test]
fn gradients_of_task() {
    let groups = [GroupId::SourceEncoder(0), GroupId::TargetEncoder, GroupId::GenToTarget, GroupId::Classifier];
    assert_gradients("task", &groups, |t, p, xs, _| {
        let a = t.input(xs.clone());
        Ok(task_loss(t, p, 0, a, &[0, 1, 1, 0], &LossWeights::default())?.0)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000, scale in -1.5f64..1.5, shift in -2.0f64..2.0) {
        let mut s = stub(1);
        s.to_target_scale = scale;
        s.classifier.1 = Tensor::from_vec(&[2], vec![shift, -shift]).unwrap();
        let x = images(3, seed);
        let y = images(3, seed + 1);
        let kl = kl_of(x.clone().reshape(&[3, 4]).unwrap());
        let nll = nll_of(x.clone(), y.clone());
        let esc = esc_value(&s, &x);
        let task = with_tape(|t| {
            let xv = t.input(x.clone());
            Ok(task_loss(t, &s, 0, xv, &[0, 1, 0], &LossWeights::default())?.0)
        });
        prop_assert!(kl >= 0.0 && nll >= 0.0 && esc >= -1e-12 && task >= 0.0);
    }

    #[test]
    fn esc_is_permutation_invariant(seed in 0u64..10_000, scale in -1.5f64..1.5) {
        let mut s = stub(1);
        s.to_target_scale = scale;
        let x = images(4, seed);
        let perm = [2usize, 0, 3, 1];
        let xp = x.select(&perm);
        prop_assert!((esc_value(&s, &x) - esc_value(&s, &xp)).abs() < 1e-12);
    }

    #[test]
    fn zero_esc_preserves_argmax(seed in 0u64..10_000) {
        let s = stub(1);
        let x = images(3, seed);
        prop_assert!(esc_value(&s, &x).abs() < 1e-12);
        let mut tape = Tape::new(&[], &[]);
        let xv = tape.input(x.clone());
        let z = s.encode(&mut tape, Domain::Source(0), xv).unwrap();
        let direct = s.classify(&mut tape, z).unwrap();
        let tr = translate(&mut tape, &s, Domain::Source(0), xv).unwrap();
        let zt = s.encode(&mut tape, Domain::Target, tr).unwrap();
        let adapted = s.classify(&mut tape, zt).unwrap();
        let argmax = |r: &[f64]| if r[0] >= r[1] { 0 } else { 1 };
        for i in 0..3 {
            prop_assert_eq!(argmax(tape.value(direct).item(i)), argmax(tape.value(adapted).item(i)));
        }
    }

    #[test]
    fn report_total_matches_constituents(seed in 0u64..10_000, kl in 0.0f64..10.0, nll in 0.0f64..10.0, dedupe: bool) {
        let m = 2;
        let mut s = stub(m);
        s.to_target_scale = 0.3;
        s.to_source_scale = -0.8;
        s.disc_source = (random_tensor(&[4, 1], seed, 1.0), 0.0);
        s.disc_target = (random_tensor(&[4, 1], seed + 1, 1.0), 0.0);
        let xs: Vec<Tensor> = (0..m).map(|i| images(2, seed + 10 + i as u64)).collect();
        let sw = ObjectiveSwitches { dedupe_target_terms: dedupe, ..ObjectiveSwitches::default() };
        let (total, r) = total_report(&s, &xs, &images(2, seed + 3), &LossWeights::default().with_kl_nll(kl, nll), &sw);
        prop_assert!((r.recomputed_total() - total).abs() <= 1e-6 * total.abs().max(1e-12));
    }
}
