//! Closed-form regularization constants and error bounds, and the
//! round-robin partition of ordered index triples.
//!
//! All logarithms are natural. `d` is `(d1 + d2) / 2` throughout.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Setting;

/// Default constant multiplying the reference weight for rankings.
pub const DEFAULT_C_COLLAB: f64 = 32.0;
/// Default constant multiplying the reference weight for bundled choices.
pub const DEFAULT_C_BUNDLED: f64 = 8.0;

/// Problem parameters for the bound formulas.
///
/// Exact-rank bounds need `r`; approximately-low-rank bounds need `q` and
/// `rho_q` instead. Collab formulas read `k`; bundled formulas read `n`
/// (with `k1`, `k2` used only by [`sample_regime_ok`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub setting: Setting,
    pub d1: usize,
    pub d2: usize,
    pub r: Option<usize>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub alpha: f64,
    pub c_const: Option<f64>,
    pub q: Option<f64>,
    pub rho_q: Option<f64>,
}

impl BoundParams {
    pub fn collab(d1: usize, d2: usize, k: usize, alpha: f64) -> Self {
        BoundParams {
            setting: Setting::Collab,
            d1,
            d2,
            r: None,
            k: Some(k),
            n: None,
            k1: None,
            k2: None,
            alpha,
            c_const: None,
            q: None,
            rho_q: None,
        }
    }

    pub fn bundled(d1: usize, d2: usize, n: usize, alpha: f64) -> Self {
        BoundParams {
            setting: Setting::Bundled,
            n: Some(n),
            k: None,
            ..BoundParams::collab(d1, d2, 0, alpha)
        }
    }

    pub fn with_rank(mut self, r: usize) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_lq_ball(mut self, q: f64, rho_q: f64) -> Self {
        self.q = Some(q);
        self.rho_q = Some(rho_q);
        self
    }

    pub fn d(&self) -> f64 {
        (self.d1 + self.d2) as f64 / 2.0
    }

    /// The constant `c0` (collab) or `c1` (bundled).
    pub fn c(&self) -> f64 {
        self.c_const.unwrap_or(match self.setting {
            Setting::Collab => DEFAULT_C_COLLAB,
            Setting::Bundled => DEFAULT_C_BUNDLED,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.d1 == 0 || self.d2 == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if let Some(c) = self.c_const {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("constant must be positive, got {c}")));
            }
        }
        if let Some(q) = self.q {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::invalid(format!("q must lie in (0, 1], got {q}")));
            }
        }
        if let Some(rho) = self.rho_q {
            if !(rho > 0.0) {
                return Err(Error::invalid(format!("rho_q must be positive, got {rho}")));
            }
        }
        Ok(())
    }

    /// Sample size used by the setting's formulas: `k` or `n`.
    fn samples(&self) -> Result<f64> {
        let (value, name) = match self.setting {
            Setting::Collab => (self.k, "k"),
            Setting::Bundled => (self.n, "n"),
        };
        match value {
            Some(v) if v > 0 => Ok(v as f64),
            Some(_) => Err(Error::invalid(format!("{name} must be positive"))),
            None => Err(Error::invalid(format!("the {} setting needs {name}", self.setting))),
        }
    }

    fn with_samples(&self, s: usize) -> BoundParams {
        let mut p = self.clone();
        match p.setting {
            Setting::Collab => p.k = Some(s),
            Setting::Bundled => p.n = Some(s),
        }
        p
    }
}

/// Which low-rank model a bound describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankModel {
    Exact { r: usize },
    LqBall { q: f64, rho_q: f64 },
}

fn rank_model(p: &BoundParams) -> Result<RankModel> {
    match (p.r, p.q, p.rho_q) {
        (Some(r), None, None) => Ok(RankModel::Exact { r }),
        (None, Some(q), Some(rho_q)) => Ok(RankModel::LqBall { q, rho_q }),
        (Some(_), _, _) => Err(Error::invalid("give either a rank or (q, rho_q), not both")),
        (None, None, None) => Err(Error::invalid("a bound needs a rank or (q, rho_q)")),
        _ => Err(Error::invalid("q and rho_q must be given together")),
    }
}

/// Reference regularization weight: `lambda_0` for rankings,
/// `lambda_1` for bundled choices.
pub fn reference_lambda(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let (d1, d2) = (p.d1 as f64, p.d2 as f64);
    let log_d = p.d().ln();
    let s = p.samples()?;
    Ok(match p.setting {
        Setting::Collab => {
            (2.0 * p.alpha).exp() * ((d1 * log_d + d2 * log_d * log_d) / (s * d1 * d1 * d2)).sqrt()
        }
        Setting::Bundled => ((2.0 * p.alpha).exp() * d1.max(d2) * log_d / (s * d1 * d2)).sqrt(),
    })
}

/// Upper bound on the rescaled error `||est - truth||_F / sqrt(d1 d2)`
/// from the exact-rank or lq-ball corollary for the setting.
pub fn minimax_upper(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let model = rank_model(p)?;
    let (d1, d2) = (p.d1 as f64, p.d2 as f64);
    let log_d = p.d().ln();
    let s = p.samples()?;
    let c = p.c();
    // prefactor and the per-unit-rank variance term of each setting
    let (prefactor, spread) = match p.setting {
        Setting::Collab => (
            288.0 * SQRT_2 * (6.0 * p.alpha).exp() * c,
            (d1 * log_d + d2 * log_d * log_d) / (s * d1),
        ),
        Setting::Bundled => (
            48.0 * SQRT_2 * (3.0 * p.alpha).exp() * c,
            (d1 + d2) * log_d / s,
        ),
    };
    Ok(match model {
        RankModel::Exact { r } => prefactor * (r as f64 * spread).sqrt(),
        RankModel::LqBall { q, rho_q } => {
            let inner = prefactor * (d1 * d2 * spread).sqrt();
            2.0 * rho_q.sqrt() / (d1 * d2).sqrt() * inner.powf((2.0 - q) / 2.0)
        }
    })
}

/// Minimax lower bound with its unspecified universal constant set to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBound {
    pub value: f64,
    /// Always true: the true bound is `c * value` for an unknown `c > 0`.
    pub constant_unspecified: bool,
}

pub fn minimax_lower(p: &BoundParams) -> Result<LowerBound> {
    p.validate()?;
    let r = match rank_model(p)? {
        RankModel::Exact { r } => r as f64,
        RankModel::LqBall { .. } => {
            return Err(Error::invalid("the lower bound is stated for exact rank r"))
        }
    };
    let (d1, d2) = (p.d1 as f64, p.d2 as f64);
    let a = p.alpha;
    let log_d = p.d().ln();
    let s = p.samples()?;
    let (first, second) = match p.setting {
        Setting::Collab => (
            a * (-a).exp() * (r * d2 / (s * d1)).sqrt(),
            a * d2 / (d1 * d2 * log_d).sqrt(),
        ),
        Setting::Bundled => (
            ((-5.0 * a).exp() * r * (d1 + d2) / s).sqrt(),
            a * (d1 + d2) / (d1 * d2 * log_d).sqrt(),
        ),
    };
    Ok(LowerBound {
        value: first.min(second),
        constant_unspecified: true,
    })
}

/// Sample size (`k` or `n`) at which [`minimax_upper`] equals 1. The bound
/// decays as `s^(-1/2)` (exact rank) or `s^(-(2-q)/4)` (lq ball).
pub fn upper_bound_crossover(p: &BoundParams) -> Result<f64> {
    let at_one = minimax_upper(&p.with_samples(1))?;
    Ok(match rank_model(p)? {
        RankModel::Exact { .. } => at_one * at_one,
        RankModel::LqBall { q, .. } => at_one.powf(4.0 / (2.0 - q)),
    })
}

/// Whether the sample size lies in the range the upper bounds assume:
/// `24 <= k <= min(d1^2, (d1^2 + d2^2) / (2 d1)) ln d` for rankings,
/// `16 e^{2 alpha} min(d1, d2) ln d <= n <= min(d^5, k1 k2 max(d1, d2)^2) ln d`
/// for bundled choices (the upper end is skipped when `k1`/`k2` are absent).
pub fn sample_regime_ok(p: &BoundParams) -> Result<bool> {
    p.validate()?;
    let (d1, d2) = (p.d1 as f64, p.d2 as f64);
    let log_d = p.d().ln();
    let s = p.samples()?;
    Ok(match p.setting {
        Setting::Collab => s >= 24.0 && s <= (d1 * d1).min((d1 * d1 + d2 * d2) / (2.0 * d1)) * log_d,
        Setting::Bundled => {
            let lower = 16.0 * (2.0 * p.alpha).exp() * d1.min(d2) * log_d;
            let upper = match (p.k1, p.k2) {
                (Some(k1), Some(k2)) => p.d().powi(5).min((k1 * k2) as f64 * d1.max(d2).powi(2)) * log_d,
                _ => f64::INFINITY,
            };
            s >= lower && s <= upper
        }
    })
}

pub type Triple = (usize, usize, usize);

/// Partitions the ordered triples of distinct indices from `1..=k` into
/// rounds in which no index appears twice.
///
/// Base rounds are `T(a, b) = {(l, m, h) : l < m < h, l + m = a, m + h = b}`
/// for `a in 3..=2k-3`, `b in 5..=2k-1`; empty ones are dropped. Each base
/// round is emitted six times, once per reordering of its triples' entries.
pub fn triple_partition(k: usize) -> Result<Vec<Vec<Triple>>> {
    if k < 3 {
        return Err(Error::invalid(format!("triple partition needs k >= 3, got {k}")));
    }
    let reorder: [fn(Triple) -> Triple; 6] = [
        |(x, y, z)| (x, y, z),
        |(x, y, z)| (x, z, y),
        |(x, y, z)| (y, x, z),
        |(x, y, z)| (y, z, x),
        |(x, y, z)| (z, x, y),
        |(x, y, z)| (z, y, x),
    ];
    let mut rounds = Vec::new();
    for a in 3..=2 * k - 3 {
        for b in 5..=2 * k - 1 {
            // l + m = a and m + h = b with l < m < h; m determines the triple
            let base: Vec<Triple> = (2..k)
                .filter_map(|m| {
                    let l = a.checked_sub(m)?;
                    let h = b.checked_sub(m)?;
                    (l >= 1 && l < m && m < h && h <= k).then_some((l, m, h))
                })
                .collect();
            if base.is_empty() {
                continue;
            }
            for f in reorder {
                rounds.push(base.iter().map(|&t| f(t)).collect());
            }
        }
    }
    Ok(rounds)
}

/// One round per line, triples as `(a,b,c)` separated by spaces.
pub fn format_rounds(rounds: &[Vec<Triple>]) -> String {
    let mut s = String::new();
    for round in rounds {
        let line: Vec<String> = round.iter().map(|(a, b, c)| format!("({a},{b},{c})")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn reference_lambda_values() {
        let p = BoundParams::collab(50, 50, 10, 0.0);
        let l50 = 50f64.ln();
        let want = ((50.0 * l50 + 50.0 * l50 * l50) / 1.25e6).sqrt();
        assert!(rel(reference_lambda(&p).unwrap(), want) < 1e-14);
        assert!((reference_lambda(&p).unwrap() - 0.027724).abs() < 5e-7);

        let b = BoundParams::bundled(50, 50, 500, 0.0);
        assert!((reference_lambda(&b).unwrap() - 0.012509).abs() < 5e-7);

        let lam = |a: f64| reference_lambda(&BoundParams::collab(50, 50, 10, a)).unwrap();
        assert!(rel(lam(2.0) / lam(1.0), 2f64.exp()) < 1e-12);
    }

    #[test]
    fn upper_bound_values() {
        let l50 = 50f64.ln();
        let p = BoundParams::collab(50, 50, 10, 0.0).with_rank(3);
        let want = 288.0 * SQRT_2 * 32.0 * (3.0 * (50.0 * l50 + 50.0 * l50 * l50) / 500.0).sqrt();
        assert!(rel(minimax_upper(&p).unwrap(), want) < 1e-14);
        assert!((minimax_upper(&p).unwrap() - 31293.13).abs() < 0.01);
        assert_eq!(minimax_upper(&BoundParams::collab(50, 50, 10, 0.0).with_rank(0)).unwrap(), 0.0);

        let b = BoundParams::bundled(50, 50, 10_000, 0.0).with_rank(3);
        assert!((minimax_upper(&b).unwrap() - 186.0405).abs() < 1e-3);
        let b = BoundParams::bundled(50, 50, 1000, 0.0).with_rank(3);
        assert!((minimax_upper(&b).unwrap() - 588.31).abs() < 0.01);
    }

    #[test]
    fn lq_ball_reduces_to_exact_shape() {
        // q -> 0 with rho = r recovers twice the exact bound
        let exact = minimax_upper(&BoundParams::collab(40, 60, 30, 0.5).with_rank(2)).unwrap();
        let approx = minimax_upper(&BoundParams::collab(40, 60, 30, 0.5).with_lq_ball(1e-12, 2.0)).unwrap();
        assert!(rel(approx, 2.0 * exact) < 1e-9);
        let exact = minimax_upper(&BoundParams::bundled(40, 60, 900, 0.5).with_rank(2)).unwrap();
        let approx = minimax_upper(&BoundParams::bundled(40, 60, 900, 0.5).with_lq_ball(1e-12, 2.0)).unwrap();
        assert!(rel(approx, 2.0 * exact) < 1e-9);
    }

    #[test]
    fn rank_model_errors() {
        let base = BoundParams::collab(10, 10, 5, 1.0);
        assert!(minimax_upper(&base).is_err());
        assert!(minimax_upper(&base.clone().with_rank(2).with_lq_ball(0.5, 1.0)).is_err());
        let mut half = base.clone();
        half.q = Some(0.5);
        assert!(minimax_upper(&half).is_err());
        assert!(minimax_upper(&base.clone().with_lq_ball(1.5, 1.0)).is_err());
        assert!(minimax_lower(&base.clone().with_lq_ball(0.5, 1.0)).is_err());
        let no_k = BoundParams { k: None, ..base.clone().with_rank(1) };
        assert!(reference_lambda(&no_k).is_err());
        let mut bundled_no_n = BoundParams::bundled(10, 10, 5, 1.0);
        bundled_no_n.n = None;
        assert!(reference_lambda(&bundled_no_n).is_err());
    }

    #[test]
    fn lower_bound_values() {
        let p = BoundParams::collab(50, 50, 10, 1.0).with_rank(3);
        let lb = minimax_lower(&p).unwrap();
        let first = (-1f64).exp() * 0.3f64.sqrt();
        let second = 50.0 / (2500.0 * 50f64.ln()).sqrt();
        assert!(rel(lb.value, first.min(second)) < 1e-14);
        assert!((second - 0.505591).abs() < 1e-6);
        assert!(lb.constant_unspecified);
        assert_eq!(minimax_lower(&BoundParams::collab(50, 50, 10, 0.0).with_rank(3)).unwrap().value, 0.0);
        assert_eq!(minimax_lower(&BoundParams::bundled(50, 50, 1000, 0.0).with_rank(3)).unwrap().value, 0.0);
    }

    #[test]
    fn crossover_solves_unit_bound() {
        let p = BoundParams::collab(30, 30, 10, 0.0).with_rank(2).with_c(1.0);
        let k_star = upper_bound_crossover(&p).unwrap();
        let at = |k: f64| {
            let scale = minimax_upper(&p.with_samples(1)).unwrap();
            scale / k.sqrt()
        };
        assert!((at(k_star) - 1.0).abs() < 1e-12);
        let q = BoundParams::bundled(30, 30, 10, 0.0).with_lq_ball(0.5, 3.0);
        let n_star = upper_bound_crossover(&q).unwrap();
        let one = minimax_upper(&q.with_samples(1)).unwrap();
        assert!((one * n_star.powf(-(2.0 - 0.5) / 4.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sample_regime() {
        assert!(!sample_regime_ok(&BoundParams::collab(50, 50, 10, 0.0)).unwrap());
        assert!(sample_regime_ok(&BoundParams::collab(50, 50, 30, 0.0)).unwrap());
        let mut b = BoundParams::bundled(50, 50, 100_000, 0.0);
        assert!(sample_regime_ok(&b).unwrap());
        b.k1 = Some(1);
        b.k2 = Some(1);
        assert!(!sample_regime_ok(&b).unwrap());
    }

    impl BoundParams {
        fn with_c(mut self, c: f64) -> Self {
            self.c_const = Some(c);
            self
        }
    }

    proptest! {
        #[test]
        fn formulas_are_monotone(d in 5usize..200, k in 1usize..100, r in 1usize..5, a in 0.1..5.0f64) {
            let p = BoundParams::collab(d, d + 3, k, a).with_rank(r);
            let more_k = BoundParams { k: Some(k + 1), ..p.clone() };
            let more_r = BoundParams { r: Some(r + 1), ..p.clone() };
            prop_assert!(reference_lambda(&more_k).unwrap() < reference_lambda(&p).unwrap());
            prop_assert!(minimax_upper(&more_k).unwrap() < minimax_upper(&p).unwrap());
            prop_assert!(minimax_upper(&more_r).unwrap() > minimax_upper(&p).unwrap());
            prop_assert!(minimax_lower(&more_k).unwrap().value <= minimax_lower(&p).unwrap().value);
            prop_assert!(minimax_lower(&more_r).unwrap().value >= minimax_lower(&p).unwrap().value);

            let b = BoundParams::bundled(d, d + 3, 10 * k, a).with_rank(r);
            let more_n = BoundParams { n: Some(10 * k + 1), ..b.clone() };
            prop_assert!(reference_lambda(&more_n).unwrap() < reference_lambda(&b).unwrap());
            prop_assert!(minimax_upper(&more_n).unwrap() < minimax_upper(&b).unwrap());
        }
    }

    fn check_partition(k: usize) {
        let rounds = triple_partition(k).unwrap();
        let mut seen = HashSet::new();
        for round in &rounds {
            assert!(!round.is_empty());
            assert!(round.len() <= k / 3);
            let mut used = HashSet::new();
            for &(a, b, c) in round {
                assert!(a != b && b != c && a != c);
                assert!([a, b, c].iter().all(|&x| (1..=k).contains(&x)));
                assert!(used.insert(a) && used.insert(b) && used.insert(c), "index reused in round");
                assert!(seen.insert((a, b, c)), "triple in two rounds");
            }
        }
        assert_eq!(seen.len(), k * (k - 1) * (k - 2));
        assert!(rounds.len() <= 6 * (2 * k - 5) * (2 * k - 5));
        assert!(rounds.len() <= 24 * k * k);
    }

    #[test]
    fn partition_small_cases() {
        let rounds = triple_partition(3).unwrap();
        assert_eq!(rounds.len(), 6);
        let all: HashSet<Triple> = rounds.iter().map(|r| r[0]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(rounds[0], vec![(1, 2, 3)]);
        assert!(triple_partition(2).is_err());
    }

    #[test]
    fn partition_is_exhaustive_up_to_15() {
        for k in 3..=15 {
            check_partition(k);
        }
    }

    #[test]
    fn rounds_format() {
        let text = format_rounds(&triple_partition(3).unwrap());
        assert_eq!(text.lines().next(), Some("(1,2,3)"));
        assert_eq!(text.lines().count(), 6);
    }
}
