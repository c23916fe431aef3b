//! Rewards, the score-function (REINFORCE) estimator for the Bernoulli
//! attention unit, and the per-timestep reward baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rollout of the attention policy over a window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    /// Bernoulli parameters `p_t`.
    pub p: Vec<f64>,
    /// Sampled binary weights `w_t`.
    pub w: Vec<bool>,
    /// Raw rewards `r_t` in {0, 1}.
    pub rewards: Vec<f64>,
    /// Cumulative rewards `R_t = sum_{tau <= t} r_tau`.
    pub returns: Vec<f64>,
    /// Padded steps are excluded from rewards and gradients.
    pub valid: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Index of the largest entry, `None` on an exact tie for the maximum.
pub fn strict_argmax(v: &[f64]) -> Option<usize> {
    let mut best = 0;
    let mut tie = false;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
            tie = false;
        } else if x == v[best] {
            tie = true;
        }
    }
    (!tie && !v.is_empty()).then_some(best)
}

/// `r_t = 1` iff the posterior's argmax is the true class (ties score 0),
/// plus the running sums `R_t`.
pub fn compute_rewards(posteriors: &[Vec<f64>], truth: usize) -> (Vec<f64>, Vec<f64>) {
    let rewards: Vec<f64> = posteriors
        .iter()
        .map(|c| if strict_argmax(c) == Some(truth) { 1.0 } else { 0.0 })
        .collect();
    let returns = cumulative(&rewards);
    (rewards, returns)
}

pub fn cumulative(rewards: &[f64]) -> Vec<f64> {
    rewards
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect()
}

/// `d log pi(w; p) / d p = (w - p) / (p (1 - p))`.
pub fn score_factor(w: bool, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bernoulli parameter {p} must lie strictly inside (0, 1)"
        )));
    }
    let w = if w { 1.0 } else { 0.0 };
    Ok((w - p) / (p * (1.0 - p)))
}

/// Gradient of the negated REINFORCE objective with respect to each step's
/// pre-sigmoid activation:
///
/// `-(1/M) (w_t - p_t) (R_t - b_t)` for every valid step, which is the
/// score factor chained through `dp/da = p (1 - p)`. The optimizer descends,
/// so this is the negated ascent direction. Invalid steps get 0.
pub fn reinforce_activation_grads(episodes: &[Episode], baseline: &Baseline) -> Result<Vec<Vec<f64>>> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("REINFORCE needs at least one episode".into()));
    }
    let m = episodes.len() as f64;
    episodes
        .iter()
        .map(|ep| {
            (0..ep.len())
                .map(|t| {
                    if !ep.valid[t] {
                        return Ok(0.0);
                    }
                    let score = score_factor(ep.w[t], ep.p[t])?;
                    let dp_da = ep.p[t] * (1.0 - ep.p[t]);
                    Ok(-(score * dp_da) * (ep.returns[t] - baseline.value(t)) / m)
                })
                .collect()
        })
        .collect()
}

/// Learned expected cumulative reward, one free scalar per timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    values: Vec<f64>,
}

impl Baseline {
    pub fn new(steps: usize) -> Self {
        Baseline {
            values: vec![0.0; steps],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Baseline { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, t: usize) -> f64 {
        self.values.get(t).copied().unwrap_or(0.0)
    }

    /// Gradient of `(1/M) sum_i sum_t (R_t^i - b_t)^2` with respect to `b`.
    pub fn mse_gradient(&self, episodes: &[Episode]) -> Vec<f64> {
        let m = episodes.len().max(1) as f64;
        (0..self.values.len())
            .map(|t| {
                -2.0 / m
                    * episodes
                        .iter()
                        .filter(|ep| t < ep.len() && ep.valid[t])
                        .map(|ep| ep.returns[t] - self.values[t])
                        .sum::<f64>()
            })
            .collect()
    }

    /// One gradient step on the squared error against observed returns.
    pub fn update(&mut self, episodes: &[Episode], lr: f64) {
        let grad = self.mse_gradient(episodes);
        for (b, g) in self.values.iter_mut().zip(grad) {
            *b -= lr * g;
        }
    }
}
