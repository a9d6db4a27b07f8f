//! Proximal gradient descent for `min_theta L(theta) + lambda * ||theta||_*`.
//!
//! Each iteration takes a gradient step on the smooth loss and applies
//! singular value thresholding, halving the step from `init_step` until the
//! quadratic upper bound on the loss holds. Iterates are not projected: the
//! loss gradient already has zero row sums (collab) or zero total sum
//! (bundled), so starting from zero every iterate stays canonical up to
//! rounding, and the estimate is re-centered once at the end.

use serde::{Deserialize, Serialize};

use crate::densemat::{rank_of, svd, Matrix, NormKind};
use crate::error::{Error, Result};
use crate::likelihood::{self, Dataset};
use crate::model::{canonicalize, PreferenceMatrix};

/// Singular values above this fraction of the largest count toward the
/// reported rank of the estimate.
pub const FINAL_RANK_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Use `SolverConfig::lambda` as given.
    Explicit,
    /// Multiply `SolverConfig::lambda` by [`paper_default_lambda`].
    PaperDefault,
}

/// Where the backtracking search starts each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// `d1 * d2`, the inverse of the loss curvature scale for averaged
    /// MNL likelihoods over a `d1 x d2` matrix.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Regularization weight, or the multiplier of the default weight in
    /// `PaperDefault` mode.
    pub lambda: f64,
    pub lambda_mode: LambdaMode,
    pub init_step: StepSize,
    pub backtrack_factor: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Momentum with restart whenever the objective would increase.
    pub accelerate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            lambda_mode: LambdaMode::PaperDefault,
            init_step: StepSize::Auto,
            backtrack_factor: 0.5,
            rel_tol: 1e-8,
            max_iter: 5000,
            accelerate: false,
        }
    }
}

impl SolverConfig {
    pub fn explicit(lambda: f64) -> Self {
        SolverConfig {
            lambda,
            lambda_mode: LambdaMode::Explicit,
            ..SolverConfig::default()
        }
    }

    pub fn paper_default(multiplier: f64) -> Self {
        SolverConfig {
            lambda: multiplier,
            lambda_mode: LambdaMode::PaperDefault,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if let StepSize::Fixed(s) = self.init_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("init_step must be positive, got {s}")));
            }
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        Ok(())
    }

    /// The regularization weight actually used on `data`.
    pub fn resolve_lambda(&self, data: &Dataset) -> f64 {
        match self.lambda_mode {
            LambdaMode::Explicit => self.lambda,
            LambdaMode::PaperDefault => self.lambda * paper_default_lambda(data),
        }
    }

    fn resolve_step(&self, data: &Dataset) -> f64 {
        match self.init_step {
            StepSize::Fixed(s) => s,
            StepSize::Auto => {
                let (d1, d2) = data.dims();
                (d1 * d2) as f64
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Canonicalized final iterate.
    pub estimate: PreferenceMatrix,
    /// Objective after every iteration, starting with the value at zero.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_rank: usize,
    /// Regularization weight used.
    pub lambda: f64,
}

impl SolverResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts with the initial objective")
    }
}

/// Default regularization weight.
///
/// Collab: `(1/2) sqrt(ln d / (k d1 d2))` with `d = (d1 + d2) / 2` and `k`
/// the mean list length; on square matrices this is `(1/2) sqrt(ln d /
/// (k d^2))`. Bundled: `sqrt(max(d1, d2) ln d / (n d1 d2))`.
pub fn paper_default_lambda(data: &Dataset) -> f64 {
    let (d1, d2) = data.dims();
    let (d1f, d2f) = (d1 as f64, d2 as f64);
    let log_d = ((d1f + d2f) / 2.0).ln();
    match data {
        Dataset::Collab(c) => {
            let k = c.positions() as f64 / d1f;
            0.5 * (log_d / (k * d1f * d2f)).sqrt()
        }
        Dataset::Bundled(b) => (d1f.max(d2f) * log_d / (b.n() as f64 * d1f * d2f)).sqrt(),
    }
}

/// Proximal map of `tau * ||.||_*`: soft-thresholds the singular values.
pub fn svt(z: &Matrix, tau: f64) -> Result<Matrix> {
    Ok(svt_parts(z, tau)?.0)
}

/// SVT result together with its shrunk singular values.
fn svt_parts(z: &Matrix, tau: f64) -> Result<(Matrix, Vec<f64>)> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("threshold must be nonnegative, got {tau}")));
    }
    let dec = svd(z)?;
    let shrunk: Vec<f64> = dec.sigma.iter().map(|s| (s - tau).max(0.0)).collect();
    Ok((dec.recompose_with(&shrunk), shrunk))
}

/// `L(theta) + lambda * ||theta||_*`.
pub fn objective(theta: &Matrix, data: &Dataset, lambda: f64) -> Result<f64> {
    let loss = likelihood::nll(theta, data)?;
    Ok(loss + lambda * crate::densemat::norm(theta, NormKind::Nuclear)?)
}

struct Step {
    theta: Matrix,
    loss: f64,
    nuclear: f64,
    sigma: Vec<f64>,
}

/// One backtracking proximal step from `base`.
fn prox_step(data: &Dataset, base: &Matrix, base_loss: f64, lambda: f64, step0: f64, factor: f64, iteration: usize) -> Result<Step> {
    let g = likelihood::grad(base, data)?;
    let mut eta = step0;
    loop {
        let (cand, sigma) = svt_parts(&base.add_scaled(&g, -eta)?, eta * lambda)?;
        let loss = likelihood::nll(&cand, data)?;
        if !loss.is_finite() {
            return Err(Error::Numerical {
                iteration,
                reason: format!("non-finite loss {loss}"),
            });
        }
        let diff = cand.sub(base)?;
        let model = base_loss + g.dot(&diff)? + diff.frobenius_sq() / (2.0 * eta);
        // rounding slack in the quadratic-model test
        let slack = 1e-15 * base_loss.abs();
        if loss <= model + slack || eta < step0 * 1e-15 {
            let nuclear = sigma.iter().sum();
            return Ok(Step {
                theta: cand,
                loss,
                nuclear,
                sigma,
            });
        }
        eta *= factor;
    }
}

/// Fits the nuclear-norm regularized MLE starting from the zero matrix.
pub fn fit(data: &Dataset, config: &SolverConfig) -> Result<SolverResult> {
    config.validate()?;
    let lambda = config.resolve_lambda(data);
    let step0 = config.resolve_step(data);
    let (d1, d2) = data.dims();

    let mut theta = Matrix::zeros(d1, d2);
    let mut prev_theta = theta.clone();
    let mut loss = likelihood::nll(&theta, data)?;
    let mut obj = loss;
    let mut sigma: Vec<f64> = Vec::new();
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut momentum = 1.0_f64;

    for it in 1..=config.max_iter {
        iterations = it;
        let mut step = None;
        if config.accelerate && it > 1 {
            let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next_momentum;
            let y = theta.add_scaled(&theta.sub(&prev_theta)?, beta)?;
            let y_loss = likelihood::nll(&y, data)?;
            let s = prox_step(data, &y, y_loss, lambda, step0, config.backtrack_factor, it)?;
            if s.loss + lambda * s.nuclear <= obj {
                momentum = next_momentum;
                step = Some(s);
            } else {
                momentum = 1.0;
            }
        }
        let s = match step {
            Some(s) => s,
            None => prox_step(data, &theta, loss, lambda, step0, config.backtrack_factor, it)?,
        };
        let new_obj = s.loss + lambda * s.nuclear;
        if !new_obj.is_finite() {
            return Err(Error::Numerical {
                iteration: it,
                reason: format!("non-finite objective {new_obj}"),
            });
        }
        if new_obj > obj * (1.0 + 1e-12) {
            // backtracking bottomed out at rounding level; no descent left
            iterations = it - 1;
            break;
        }
        prev_theta = std::mem::replace(&mut theta, s.theta);
        loss = s.loss;
        sigma = s.sigma;
        let change = (new_obj - obj).abs() / new_obj.abs().max(1e-12);
        obj = new_obj;
        trace.push(obj);
        if change < config.rel_tol {
            converged = true;
            break;
        }
    }

    let final_rank = rank_of(&sigma, FINAL_RANK_RTOL);
    Ok(SolverResult {
        estimate: canonicalize(&theta, data.setting()),
        objective_trace: trace,
        iterations,
        converged,
        final_rank,
        lambda,
    })
}

/// Writes the objective trace as `iteration,objective` lines with a header.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{v:.16e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densemat::{norm, singular_values};
    use crate::model::synth_lowrank;
    use crate::rng::substream;
    use crate::sampler::sample_collab_dataset;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = substream(seed, 3);
        Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn small_problem(seed: u64, k: usize) -> (PreferenceMatrix, Dataset) {
        let truth = synth_lowrank(12, 10, 2, 2.0, seed).unwrap();
        let data = sample_collab_dataset(&truth, k, seed + 100).unwrap();
        (truth, data.into())
    }

    #[test]
    fn svt_examples() {
        let z = random_matrix(4, 3, 1);
        assert!(svt(&z, 0.0).unwrap().sub(&z).unwrap().max_abs() < 1e-12);
        let d = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = svt(&d, 2.0).unwrap();
        let want = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(s.sub(&want).unwrap().max_abs() < 1e-14);
        let top = svd(&z).unwrap().sigma[0];
        assert_eq!(svt(&z, top).unwrap().max_abs(), 0.0);
        assert!(svt(&z, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn svt_satisfies_subgradient_optimality(seed in any::<u64>(), tau in 0.0..3.0f64) {
            let z = random_matrix(5, 4, seed);
            let x = svt(&z, tau).unwrap();
            let resid = z.sub(&x).unwrap();
            prop_assert!(norm(&resid, NormKind::Spectral).unwrap() <= tau + 1e-9);
            let inner = resid.dot(&x).unwrap();
            prop_assert!((inner - tau * norm(&x, NormKind::Nuclear).unwrap()).abs() <= 1e-8);
        }
    }

    #[test]
    fn objective_composes_loss_and_norm() {
        let (_, data) = small_problem(1, 4);
        let theta = random_matrix(12, 10, 5);
        let nll = likelihood::nll(&theta, &data).unwrap();
        assert_eq!(objective(&theta, &data, 0.0).unwrap(), nll);
        let zero = Matrix::zeros(12, 10);
        assert_eq!(objective(&zero, &data, 3.0).unwrap(), likelihood::nll(&zero, &data).unwrap());
        let nuc: f64 = singular_values(&theta).unwrap().iter().sum();
        assert!((objective(&theta, &data, 0.7).unwrap() - (nll + 0.7 * nuc)).abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let (_, data) = small_problem(2, 5);
        let g0 = likelihood::grad(&Matrix::zeros(12, 10), &data).unwrap();
        let lam = norm(&g0, NormKind::Spectral).unwrap() * 1.0001;
        let res = fit(&data, &SolverConfig::explicit(lam)).unwrap();
        assert_eq!(res.estimate.theta().max_abs(), 0.0);
        assert!(res.converged);
        assert_eq!(res.final_rank, 0);
    }

    #[test]
    fn trace_is_monotone_and_estimate_canonical() {
        for accelerate in [false, true] {
            let (_, data) = small_problem(3, 6);
            let cfg = SolverConfig {
                accelerate,
                ..SolverConfig::paper_default(1.0)
            };
            let res = fit(&data, &cfg).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
            assert!(res.estimate.in_feasible_set(f64::MAX));
            assert!(res.converged);
        }
    }

    #[test]
    fn acceleration_reaches_same_optimum() {
        let (_, data) = small_problem(4, 8);
        let plain = fit(&data, &SolverConfig::paper_default(1.0)).unwrap();
        let fast = fit(
            &data,
            &SolverConfig {
                accelerate: true,
                rel_tol: 1e-12,
                ..SolverConfig::paper_default(1.0)
            },
        )
        .unwrap();
        assert!((plain.objective() - fast.objective()).abs() < 1e-6 * plain.objective());
    }

    #[test]
    fn more_samples_give_lower_error() {
        let rmse = |k: usize| -> f64 {
            (0..2)
                .map(|t| {
                    let truth = synth_lowrank(30, 30, 2, 2.0, 10 + t).unwrap();
                    let data: Dataset = sample_collab_dataset(&truth, k, 20 + t).unwrap().into();
                    let est = fit(&data, &SolverConfig::paper_default(1.0)).unwrap().estimate;
                    est.theta().sub(truth.theta()).unwrap().frobenius_sq().sqrt() / 30.0
                })
                .sum::<f64>()
        };
        assert!(rmse(40) < rmse(5));
    }

    #[test]
    fn fit_is_deterministic_and_centering_is_reporting_only() {
        let (_, data) = small_problem(5, 5);
        let a = fit(&data, &SolverConfig::paper_default(2.0)).unwrap();
        let b = fit(&data, &SolverConfig::paper_default(2.0)).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.objective_trace, b.objective_trace);
        let nll_est = likelihood::nll(a.estimate.theta(), &data).unwrap();
        let loss_trace = a.objective() - a.lambda * norm(a.estimate.theta(), NormKind::Nuclear).unwrap();
        assert!((nll_est - loss_trace).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let (_, data) = small_problem(6, 3);
        let bad = [
            SolverConfig { lambda: -1.0, ..SolverConfig::default() },
            SolverConfig { backtrack_factor: 1.0, ..SolverConfig::default() },
            SolverConfig { rel_tol: 0.0, ..SolverConfig::default() },
            SolverConfig { max_iter: 0, ..SolverConfig::default() },
            SolverConfig { init_step: StepSize::Fixed(0.0), ..SolverConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(fit(&data, &cfg), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn default_lambda_formulas() {
        let (_, data) = small_problem(7, 4);
        let want = 0.5 * (11f64.ln() / (4.0 * 12.0 * 10.0)).sqrt();
        assert!((paper_default_lambda(&data) - want).abs() < 1e-15);
    }
}
