//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;


use crate::error::Result;
use crate::networks::{GroupId, ParameterGroups};
use crate::rng;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `(storage, element)` of every probed coordinate.
    pub coordinates: Vec<(usize, usize)>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// The same central difference with a step 1000 times smaller.
    pub fine: Vec<f64>,
}

impl GradCheck {
    /// A coordinate straddles a kink (LeakyReLU, `|x|`, a clamp) when the
    /// two step sizes disagree, i.e. the loss is not smooth within the step.
    pub fn straddles_kink(&self, i: usize) -> bool {
        (self.numeric[i] - self.fine[i]).abs() > 1e-5 * (1.0 + self.fine[i].abs())
    }

    pub fn kinks(&self) -> usize {
        (0..self.numeric.len()).filter(|&i| self.straddles_kink(i)).count()
    }

    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over the probed
    /// coordinates that do not straddle a kink, taken as one vector.
    pub fn relative_error(&self) -> f64 {
        self.error_where(false, &self.numeric)
    }

    /// The same measure on the kink coordinates against the fine difference.
    pub fn kink_error(&self) -> f64 {
        self.error_where(true, &self.fine)
    }

    fn error_where(&self, kinked: bool, reference: &[f64]) -> f64 {
        let pick: Vec<usize> = (0..self.numeric.len()).filter(|&i| self.straddles_kink(i) == kinked).collect();
        let diff: f64 = pick.iter().map(|&i| (self.analytic[i] - reference[i]) * (self.analytic[i] - reference[i])).sum();
        let na: f64 = pick.iter().map(|&i| self.analytic[i] * self.analytic[i]).sum();
        let nn: f64 = pick.iter().map(|&i| reference[i] * reference[i]).sum();
        let scale = libm::sqrt(na.max(nn));
        if scale == 0.0 {
            0.0
        } else {
            libm::sqrt(diff) / scale
        }
    }

    /// Largest gradient magnitude seen, to rule out vacuous agreement.
    pub fn max_abs(&self) -> f64 {
        self.analytic.iter().chain(&self.numeric).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Compares the tape gradient of `loss` with `(f(p + h) - f(p - h)) / 2h`
/// on `per_storage` distinct random elements of every storage owned by
/// `groups`.
/// `loss` must be deterministic: it is re-evaluated for each perturbation.
pub fn check_gradients(
    params: &ParameterGroups,
    groups: &[GroupId],
    per_storage: usize,
    step: f64,
    seed: u64,
    loss: impl Fn(&mut Tape, &ParameterGroups) -> Result<Var>,
) -> Result<GradCheck> {
    let mask = params.trainable_mask(groups);
    let grads = {
        let mut tape = Tape::new(params.tensors(), &mask);
        let l = loss(&mut tape, params)?;
        tape.backward(l)
    };
    let frozen = alloc::vec![false; mask.len()];
    let eval = |p: &ParameterGroups| -> Result<f64> {
        let mut tape = Tape::new(p.tensors(), &frozen);
        let l = loss(&mut tape, p)?;
        Ok(tape.scalar(l))
    };
    let mut r = rng::stream(seed, &[0x6772_6164]);
    let mut out = GradCheck {
        coordinates: Vec::new(),
        analytic: Vec::new(),
        numeric: Vec::new(),
        fine: Vec::new(),
    };
    let central = |work: &mut ParameterGroups, s: usize, e: usize, h: f64| -> Result<f64> {
        let orig = work.tensor(s).data()[e];
        work.tensor_mut(s).data_mut()[e] = orig + h;
        let plus = eval(work)?;
        work.tensor_mut(s).data_mut()[e] = orig - h;
        let minus = eval(work)?;
        work.tensor_mut(s).data_mut()[e] = orig;
        Ok((plus - minus) / (2.0 * h))
    };
    let mut work = params.clone();
    for s in (0..mask.len()).filter(|&s| mask[s]) {
        let len = params.tensor(s).len();
        for e in rand::seq::index::sample(&mut r, len, per_storage.min(len)) {
            out.coordinates.push((s, e));
            out.numeric.push(central(&mut work, s, e, step)?);
            out.fine.push(central(&mut work, s, e, step * 1e-3)?);
            out.analytic.push(grads.get(s).map_or(0.0, |g| g.data()[e]));
        }
    }
    Ok(out)
}
