use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::rng::{self, tags};
use crate::tape::sigmoid;
use crate::tensor::Tensor;

const PROBE_L2: f64 = 1e-2;
const PROBE_ITERS: usize = 300;
const POWER_ITERS: usize = 30;

/// L2-regularised logistic regression on standardised features, fitted by
/// accelerated gradient descent with a step size from the curvature bound.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

impl LinearProbe {
    /// `x` is `[n, d]`; `y[i]` marks the positive class.
    pub fn fit(x: &Tensor, y: &[bool], l2: f64) -> Result<Self> {
        let (n, d) = (x.batch(), x.item_len());
        if n != y.len() {
            return Err(Error::Shape {
                expected: vec![y.len()],
                actual: vec![n],
            });
        }
        if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
            return Err(Error::Degenerate("probe needs both classes".into()));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.item(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.item(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| if *v > 1e-24 { 1.0 / libm::sqrt(*v) } else { 0.0 })
            .collect();
        let mut probe = Self {
            mean,
            scale,
            weights: vec![0.0; d],
            bias: 0.0,
        };
        let z = probe.standardize(x);
        let targets: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();

        // curvature bound: 0.25 * lambda_max(Z^T Z / n) + l2 for the weights,
        // 0.25 for the bias
        let mut v = vec![1.0 / libm::sqrt(d as f64); d];
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            let zv = matvec(&z, n, d, &v, false);
            let mut ztzv = matvec(&z, n, d, &zv, true);
            let norm = libm::sqrt(ztzv.iter().map(|a| a * a).sum::<f64>());
            if norm == 0.0 {
                break;
            }
            lambda = norm / n as f64;
            ztzv.iter_mut().for_each(|a| *a /= norm);
            v = ztzv;
        }
        let step = 1.0 / (1.1 * (0.25 * lambda.max(1.0) + l2));

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut w_prev = w.clone();
        let mut b_prev = b;
        for k in 0..PROBE_ITERS {
            let mom = k as f64 / (k as f64 + 3.0);
            let yw: Vec<f64> = w.iter().zip(&w_prev).map(|(a, p)| a + mom * (a - p)).collect();
            let yb = b + mom * (b - b_prev);
            let logits = matvec(&z, n, d, &yw, false);
            let resid: Vec<f64> = logits
                .iter()
                .zip(&targets)
                .map(|(l, t)| (sigmoid(l + yb) - t) / n as f64)
                .collect();
            let gw = matvec(&z, n, d, &resid, true);
            let gb: f64 = resid.iter().sum();
            w_prev = w;
            b_prev = b;
            w = yw.iter().zip(&gw).map(|(a, g)| a - step * (g + l2 * a)).collect();
            b = yb - step * gb;
        }
        probe.weights = w;
        probe.bias = b;
        Ok(probe)
    }

    fn standardize(&self, x: &Tensor) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.batch() {
            for k in 0..d {
                out.push((x.item(i)[k] - self.mean[k]) * self.scale[k]);
            }
        }
        out
    }

    /// Positive-class logits.
    pub fn scores(&self, x: &Tensor) -> Vec<f64> {
        let z = self.standardize(x);
        matvec(&z, x.batch(), self.mean.len(), &self.weights, false)
            .into_iter()
            .map(|l| l + self.bias)
            .collect()
    }
}

/// `Z v` (`[n]`) or, with `transpose`, `Z^T v` (`[d]`) for row-major `Z`.
fn matvec(z: &[f64], n: usize, d: usize, v: &[f64], transpose: bool) -> Vec<f64> {
    if transpose {
        let mut out = vec![0.0; d];
        gemm(d, n, 1, z, true, v, false, 0.0, &mut out);
        out
    } else {
        let mut out = vec![0.0; n];
        gemm(n, d, 1, z, false, v, false, 0.0, &mut out);
        out
    }
}

/// Area under the ROC curve: the Mann-Whitney statistic with tied scores
/// sharing their average rank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != positive.len() {
        return Err(Error::Degenerate("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn halves(n: usize, seed: u64, set: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tags::PROBE, set]));
    let test = idx.split_off(n / 2);
    (idx, test)
}

/// Held-out AUC of a linear probe separating the rows of `a` (negative)
/// from the rows of `b` (positive). Each set is split in half; the probe
/// is fitted on the first halves and scored on the second.
pub fn probe_auc(a: &Tensor, b: &Tensor, seed: u64) -> Result<f64> {
    if a.batch() < 4 || b.batch() < 4 {
        return Err(Error::Degenerate("probe needs at least four codes per domain".into()));
    }
    if a.item_len() != b.item_len() {
        return Err(Error::Shape {
            expected: vec![a.item_len()],
            actual: vec![b.item_len()],
        });
    }
    let (a_train, a_test) = halves(a.batch(), seed, 0);
    let (b_train, b_test) = halves(b.batch(), seed, 1);
    let join = |ia: &[usize], ib: &[usize]| -> Result<(Tensor, Vec<bool>)> {
        let mut data = a.select(ia).into_data();
        data.extend(b.select(ib).into_data());
        let mut y = vec![false; ia.len()];
        y.extend(vec![true; ib.len()]);
        Ok((Tensor::from_vec(&[ia.len() + ib.len(), a.item_len()], data)?, y))
    };
    let (x_train, y_train) = join(&a_train, &b_train)?;
    let (x_test, y_test) = join(&a_test, &b_test)?;
    let probe = LinearProbe::fit(&x_train, &y_train, PROBE_L2)?;
    roc_auc(&probe.scores(&x_test), &y_test)
}
