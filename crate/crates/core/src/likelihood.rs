//! Negative log-likelihoods, gradients and Hessian quadratic forms for
//! k-wise rankings (collab) and bundled choices.
//!
//! Both losses are normalized averages: the collab loss divides by the total
//! number of ranked positions (`k * d1` when every user sees `k` items), the
//! bundled loss by the number of purchases `n`.

use crate::densemat::Matrix;
use crate::error::{Error, Result};
use crate::model::Setting;
use crate::sampler::{BundledObservation, RankingObservation};

/// One ranking per user `0..d1`, stored in user order.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabDataset {
    d1: usize,
    d2: usize,
    observations: Vec<RankingObservation>,
    positions: usize,
}

/// `n >= 1` bundled purchases over a `d1 x d2` pair universe.
#[derive(Debug, Clone, PartialEq)]
pub struct BundledDataset {
    d1: usize,
    d2: usize,
    observations: Vec<BundledObservation>,
}

/// Either kind of dataset; the variant fixes the setting of the fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Collab(CollabDataset),
    Bundled(BundledDataset),
}

impl CollabDataset {
    /// Validates and sorts by user. Users must be exactly `0..d1`.
    pub fn new(d1: usize, d2: usize, mut observations: Vec<RankingObservation>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        if observations.len() != d1 {
            return Err(Error::invalid(format!(
                "expected one ranking per user ({d1}), got {}",
                observations.len()
            )));
        }
        observations.sort_by_key(|o| o.user);
        for (i, obs) in observations.iter().enumerate() {
            if obs.user != i {
                return Err(Error::invalid(format!(
                    "user ids must be a permutation of 0..{d1}; missing or repeated user {i}"
                )));
            }
            obs.validate(d2)?;
        }
        let positions = observations.iter().map(RankingObservation::k).sum();
        Ok(CollabDataset {
            d1,
            d2,
            observations,
            positions,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn observations(&self) -> &[RankingObservation] {
        &self.observations
    }

    /// Total ranked positions, the loss normalizer.
    pub fn positions(&self) -> usize {
        self.positions
    }

    /// Common list length if every user saw the same number of items.
    pub fn uniform_k(&self) -> Option<usize> {
        let k = self.observations.first()?.k();
        self.observations.iter().all(|o| o.k() == k).then_some(k)
    }
}

impl BundledDataset {
    pub fn new(d1: usize, d2: usize, observations: Vec<BundledObservation>) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::invalid("dataset dimensions must be positive"));
        }
        if observations.is_empty() {
            return Err(Error::invalid("bundled dataset needs at least one observation"));
        }
        for obs in &observations {
            obs.validate(d1, d2)?;
        }
        Ok(BundledDataset { d1, d2, observations })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn observations(&self) -> &[BundledObservation] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }
}

impl Dataset {
    pub fn setting(&self) -> Setting {
        match self {
            Dataset::Collab(_) => Setting::Collab,
            Dataset::Bundled(_) => Setting::Bundled,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Dataset::Collab(d) => d.dims(),
            Dataset::Bundled(d) => d.dims(),
        }
    }
}

impl From<CollabDataset> for Dataset {
    fn from(d: CollabDataset) -> Self {
        Dataset::Collab(d)
    }
}

impl From<BundledDataset> for Dataset {
    fn from(d: BundledDataset) -> Self {
        Dataset::Bundled(d)
    }
}

fn check_dims(theta: &Matrix, dims: (usize, usize), what: &str) -> Result<()> {
    if theta.shape() != dims {
        return Err(Error::invalid(format!(
            "{what} is {}x{} but the dataset is {}x{}",
            theta.rows(),
            theta.cols(),
            dims.0,
            dims.1
        )));
    }
    Ok(())
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Scores of the positions in ranked order, and the log-partition of every
/// stage: `lse[t] = log sum_{s >= t} exp(ranked[s])`.
fn ranked_stages(theta: &Matrix, obs: &RankingObservation) -> (Vec<f64>, Vec<f64>) {
    let row = theta.row(obs.user);
    let ranked: Vec<f64> = obs.order.iter().map(|&p| row[obs.items[p]]).collect();
    let k = ranked.len();
    let mut lse = vec![0.0; k];
    lse[k - 1] = ranked[k - 1];
    for t in (0..k - 1).rev() {
        lse[t] = log_add_exp(lse[t + 1], ranked[t]);
    }
    (ranked, lse)
}

/// `-log P(chosen)` for a softmax choice among `scores`, evaluated on score
/// differences so that alternatives tied with the chosen one contribute
/// exactly `exp(0)` whatever their common value.
fn neg_log_choice(chosen: f64, scores: &[f64]) -> f64 {
    let shift = scores.iter().map(|s| s - chosen).fold(f64::NEG_INFINITY, f64::max);
    shift + scores.iter().map(|s| (s - chosen - shift).exp()).sum::<f64>().ln()
}

pub fn nll_collab(theta: &Matrix, data: &CollabDataset) -> Result<f64> {
    check_dims(theta, data.dims(), "theta")?;
    let total: f64 = data
        .observations
        .iter()
        .map(|obs| {
            let row = theta.row(obs.user);
            let ranked: Vec<f64> = obs.order.iter().map(|&p| row[obs.items[p]]).collect();
            (0..ranked.len()).map(|t| neg_log_choice(ranked[t], &ranked[t..])).sum::<f64>()
        })
        .sum();
    Ok(total / data.positions as f64)
}

/// Gradient of [`nll_collab`]. Every row sums to zero.
///
/// The position ranked `t`-th is a candidate in stages `0..=t`; its
/// accumulated choice probability is `exp(x_t - lse_t) * R_t` with
/// `R_t = sum_{l <= t} exp(lse_t - lse_l)`, built by `R_t = 1 + exp(lse_t -
/// lse_{t-1}) R_{t-1}` so every exponent stays nonpositive.
pub fn grad_collab(theta: &Matrix, data: &CollabDataset) -> Result<Matrix> {
    check_dims(theta, data.dims(), "theta")?;
    let mut grad = Matrix::zeros(data.d1, data.d2);
    let scale = 1.0 / data.positions as f64;
    for obs in &data.observations {
        let (ranked, lse) = ranked_stages(theta, obs);
        let mut r = 0.0;
        for t in 0..ranked.len() {
            r = if t == 0 { 1.0 } else { 1.0 + (lse[t] - lse[t - 1]).exp() * r };
            let prob_mass = (ranked[t] - lse[t]).exp() * r;
            let col = obs.items[obs.order[t]];
            grad.add_at(obs.user, col, -scale * (1.0 - prob_mass));
        }
    }
    Ok(grad)
}

/// `vec(direction)^T H vec(direction)` for the Hessian `H` of
/// [`nll_collab`] at `theta`, accumulated stage by stage as the variance of
/// the direction under each conditional choice distribution.
pub fn hessian_quadform_collab(theta: &Matrix, data: &CollabDataset, direction: &Matrix) -> Result<f64> {
    check_dims(theta, data.dims(), "theta")?;
    check_dims(direction, data.dims(), "direction")?;
    let mut total = 0.0;
    for obs in &data.observations {
        let (ranked, lse) = ranked_stages(theta, obs);
        let dir_row = direction.row(obs.user);
        let y: Vec<f64> = obs.order.iter().map(|&p| dir_row[obs.items[p]]).collect();
        for t in 0..ranked.len() {
            let probs: Vec<f64> = ranked[t..].iter().map(|x| (x - lse[t]).exp()).collect();
            let mean: f64 = probs.iter().zip(&y[t..]).map(|(p, v)| p * v).sum();
            total += probs
                .iter()
                .zip(&y[t..])
                .map(|(p, v)| p * (v - mean) * (v - mean))
                .sum::<f64>();
        }
    }
    Ok(total / data.positions as f64)
}

fn pair_scores(theta: &Matrix, obs: &BundledObservation) -> Vec<f64> {
    obs.s_items
        .iter()
        .flat_map(|&a| obs.t_items.iter().map(move |&b| theta.get(a, b)))
        .collect()
}

pub fn nll_bundled(theta: &Matrix, data: &BundledDataset) -> Result<f64> {
    check_dims(theta, data.dims(), "theta")?;
    let total: f64 = data
        .observations
        .iter()
        .map(|obs| {
            let (u, v) = obs.chosen_entry();
            neg_log_choice(theta.get(u, v), &pair_scores(theta, obs))
        })
        .sum();
    Ok(total / data.n() as f64)
}

/// Gradient of [`nll_bundled`]; its entries sum to zero. Repeated pairs in
/// the presented grid accumulate onto their shared entry.
pub fn grad_bundled(theta: &Matrix, data: &BundledDataset) -> Result<Matrix> {
    check_dims(theta, data.dims(), "theta")?;
    let mut grad = Matrix::zeros(data.d1, data.d2);
    let scale = 1.0 / data.n() as f64;
    for obs in &data.observations {
        let scores = pair_scores(theta, obs);
        let lse = log_sum_exp(&scores);
        let k2 = obs.t_items.len();
        for (idx, x) in scores.iter().enumerate() {
            let (a, b) = (obs.s_items[idx / k2], obs.t_items[idx % k2]);
            grad.add_at(a, b, scale * (x - lse).exp());
        }
        let (u, v) = obs.chosen_entry();
        grad.add_at(u, v, -scale);
    }
    Ok(grad)
}

pub fn nll(theta: &Matrix, data: &Dataset) -> Result<f64> {
    match data {
        Dataset::Collab(d) => nll_collab(theta, d),
        Dataset::Bundled(d) => nll_bundled(theta, d),
    }
}

pub fn grad(theta: &Matrix, data: &Dataset) -> Result<Matrix> {
    match data {
        Dataset::Collab(d) => grad_collab(theta, d),
        Dataset::Bundled(d) => grad_bundled(theta, d),
    }
}

/// Worst relative disagreement between the analytic gradient and central
/// differences with step `h`, using `max(|analytic|, 1e-8)` as denominator.
/// Coordinates the loss does not depend on (both estimates exactly zero)
/// are skipped.
pub fn fd_gradient_check(theta: &Matrix, data: &Dataset, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let analytic = grad(theta, data)?;
    let mut probe = theta.clone();
    let mut worst = 0.0_f64;
    for idx in 0..theta.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = nll(&probe, data)?;
        probe.as_mut_slice()[idx] = orig - h;
        let minus = nll(&probe, data)?;
        probe.as_mut_slice()[idx] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let g = analytic.as_slice()[idx];
        if fd == 0.0 && g == 0.0 {
            continue;
        }
        worst = worst.max((fd - g).abs() / g.abs().max(1e-8));
    }
    Ok(worst)
}
