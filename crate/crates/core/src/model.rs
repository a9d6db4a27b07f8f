//! Preference matrices: canonical representatives, dynamic range,
//! feasibility, MNL choice probabilities and synthetic ground truth.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::densemat::{center_global, center_rows, Matrix};
use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for the centering invariants.
pub const CENTER_TOL: f64 = 1e-10;

/// Which observation model a matrix parameterizes.
///
/// `Collab`: rows are users ranking column items; the likelihood is invariant
/// to adding a constant to any row. `Bundled`: rows and columns are two item
/// categories; the likelihood is invariant to one global constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Collab,
    Bundled,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Collab => "collab",
            Setting::Bundled => "bundled",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collab" => Ok(Setting::Collab),
            "bundled" => Ok(Setting::Bundled),
            other => Err(Error::invalid(format!(
                "unknown setting {other:?} (expected collab or bundled)"
            ))),
        }
    }
}

/// A parameter matrix in canonical form for its setting: zero row sums
/// (collab) or zero total sum (bundled).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    theta: Matrix,
    setting: Setting,
}

impl PreferenceMatrix {
    /// Wraps an already-canonical matrix, rejecting one that violates the
    /// setting's centering invariant.
    pub fn try_new(theta: Matrix, setting: Setting) -> Result<Self> {
        if !is_centered(&theta, setting) {
            return Err(Error::invalid(format!(
                "matrix is not centered for the {setting} setting"
            )));
        }
        Ok(PreferenceMatrix { theta, setting })
    }

    pub fn theta(&self) -> &Matrix {
        &self.theta
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn into_inner(self) -> Matrix {
        self.theta
    }

    pub fn dynamic_range(&self) -> f64 {
        dynamic_range(self)
    }

    pub fn in_feasible_set(&self, alpha: f64) -> bool {
        in_feasible_set(&self.theta, self.setting, alpha)
    }
}

fn center_scale(m: &Matrix) -> f64 {
    CENTER_TOL * m.max_abs().max(1.0)
}

fn is_centered(m: &Matrix, setting: Setting) -> bool {
    let tol = center_scale(m);
    match setting {
        Setting::Collab => (0..m.rows()).all(|i| m.row(i).iter().sum::<f64>().abs() <= tol * m.cols() as f64),
        Setting::Bundled => m.sum().abs() <= tol * m.as_slice().len() as f64,
    }
}

/// Canonical representative of the equivalence class of `theta`.
pub fn canonicalize(theta: &Matrix, setting: Setting) -> PreferenceMatrix {
    let centered = match setting {
        Setting::Collab => center_rows(theta),
        Setting::Bundled => center_global(theta),
    };
    PreferenceMatrix {
        theta: centered,
        setting,
    }
}

/// Largest within-row spread (collab) or global spread (bundled).
pub fn dynamic_range(pm: &PreferenceMatrix) -> f64 {
    fn spread(xs: &[f64]) -> f64 {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }
    let m = &pm.theta;
    match pm.setting {
        Setting::Collab => (0..m.rows()).map(|i| spread(m.row(i))).fold(0.0, f64::max),
        Setting::Bundled => spread(m.as_slice()),
    }
}

/// Membership in the feasible set: bounded entries and centered for the
/// setting.
pub fn in_feasible_set(theta: &Matrix, setting: Setting, alpha: f64) -> bool {
    theta.max_abs() <= alpha && is_centered(theta, setting)
}

/// Probability that each position of `items` is ranked first, treating
/// repeated items as distinct positions with tied weights.
pub fn sequential_choice_probs(theta_row: &[f64], items: &[usize]) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::invalid("empty item multiset"));
    }
    if let Some(&bad) = items.iter().find(|&&j| j >= theta_row.len()) {
        return Err(Error::invalid(format!(
            "item {bad} out of range for a row of length {}",
            theta_row.len()
        )));
    }
    let scores: Vec<f64> = items.iter().map(|&j| theta_row[j]).collect();
    Ok(softmax(&scores))
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    w
}

/// Random rank-`r` row-centered matrix with largest entry magnitude `alpha`.
///
/// `U` (`d1 x r`) and `V` (`d2 x r`) get i.i.d. uniform `[0, 1)` entries,
/// `U V^T` is row-centered and then rescaled. Attempt `a` draws from
/// substream `a` of `seed`.
pub fn synth_lowrank(d1: usize, d2: usize, r: usize, alpha: f64, seed: u64) -> Result<PreferenceMatrix> {
    synth_lowrank_for(Setting::Collab, d1, d2, r, alpha, seed)
}

/// Setting-aware variant of [`synth_lowrank`]. For `Bundled` the columns of
/// `U` are centered before forming `U V^T`, which zeroes every column sum of
/// the product while keeping the rank at most `r`.
pub fn synth_lowrank_for(
    setting: Setting,
    d1: usize,
    d2: usize,
    r: usize,
    alpha: f64,
    seed: u64,
) -> Result<PreferenceMatrix> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    if r == 0 || r > d1.min(d2) {
        return Err(Error::invalid(format!(
            "rank {r} must lie in [1, {}]",
            d1.min(d2)
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    // centering annihilates every matrix along a singleton dimension
    match setting {
        Setting::Collab if d2 < 2 => {
            return Err(Error::invalid("collab ground truth needs at least 2 columns"))
        }
        Setting::Bundled if d1 < 2 => {
            return Err(Error::invalid("bundled ground truth needs at least 2 rows"))
        }
        _ => {}
    }
    for attempt in 0u64.. {
        let mut rng = rng::substream(seed, attempt);
        let mut u = Matrix::new(d1, r, (0..d1 * r).map(|_| rng.random::<f64>()).collect())?;
        let v = Matrix::new(d2, r, (0..d2 * r).map(|_| rng.random::<f64>()).collect())?;
        if setting == Setting::Bundled {
            u = center_rows(&u.transpose()).transpose();
        }
        let mut theta = u.matmul(&v.transpose())?;
        if setting == Setting::Collab {
            theta = center_rows(&theta);
        }
        let peak = theta.max_abs();
        if peak == 0.0 {
            continue;
        }
        let mut theta = theta.scaled(alpha / peak);
        // rounding in the rescale can leave ties a few ulps off +-alpha
        let pos = theta
            .as_slice()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map_or(0, |(p, _)| p);
        for x in theta.as_mut_slice() {
            *x = x.clamp(-alpha, alpha);
        }
        let x = &mut theta.as_mut_slice()[pos];
        *x = alpha.copysign(*x);
        return Ok(PreferenceMatrix { theta, setting });
    }
    unreachable!("attempt counter is unbounded")
}
