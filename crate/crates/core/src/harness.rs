//! Synthetic experiments: error versus sample size and versus the
//! regularization weight, written as CSV, plus gnuplot scripts that render
//! them and the small statistics used to summarize a sweep.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densemat::Matrix;
use crate::error::{Error, Result};
use crate::likelihood::{self, Dataset};
use crate::model::{canonicalize, synth_lowrank, Setting};
use crate::rng;
use crate::sampler::sample_collab_dataset;
use crate::solver::{self, SolverConfig, StepSize};

/// CSV header of experiment results.
pub const RECORD_HEADER: &str =
    "setting,d1,d2,r,k_or_n,alpha,lambda,seed,trial,rmse,iterations,objective,converged";

/// Solver knobs an experiment may override. The weight is always the
/// default weight times a multiplier from the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub accelerate: bool,
    pub init_step: Option<f64>,
}

impl Default for SolverOverrides {
    fn default() -> Self {
        let base = SolverConfig::default();
        SolverOverrides {
            rel_tol: base.rel_tol,
            max_iter: base.max_iter,
            accelerate: base.accelerate,
            init_step: None,
        }
    }
}

/// A grid of synthetic trials, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub setting: Setting,
    pub d1: usize,
    pub d2: usize,
    pub rank_list: Vec<usize>,
    #[serde(alias = "n_list")]
    pub k_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    #[serde(default = "unit_multiplier")]
    pub lambda_multipliers: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub out_path: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverOverrides,
}

fn unit_multiplier() -> Vec<f64> {
    vec![1.0]
}

/// One trial of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub setting: Setting,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub k_or_n: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    pub trial: usize,
    pub rmse: f64,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.setting != Setting::Collab {
            return Err(Error::invalid("synthetic sweeps are defined for the collab setting"));
        }
        if self.rank_list.is_empty() || self.k_list.is_empty() || self.alpha_list.is_empty() || self.lambda_multipliers.is_empty() {
            return Err(Error::invalid("experiment grids must be nonempty"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.d1 == 0 || self.d2 < 2 {
            return Err(Error::invalid("need d1 >= 1 and d2 >= 2"));
        }
        if let Some(&r) = self.rank_list.iter().find(|&&r| r == 0 || r > self.d1.min(self.d2)) {
            return Err(Error::invalid(format!("rank {r} out of range")));
        }
        if self.k_list.iter().any(|&k| k < 2) {
            return Err(Error::invalid("list lengths must be at least 2"));
        }
        if self.alpha_list.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("alphas must be positive"));
        }
        if self.lambda_multipliers.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::invalid("lambda multipliers must be nonnegative"));
        }
        self.solver_config(1.0).validate()
    }

    fn solver_config(&self, multiplier: f64) -> SolverConfig {
        SolverConfig {
            rel_tol: self.solver.rel_tol,
            max_iter: self.solver.max_iter,
            accelerate: self.solver.accelerate,
            init_step: self.solver.init_step.map_or(StepSize::Auto, StepSize::Fixed),
            ..SolverConfig::paper_default(multiplier)
        }
    }
}

/// Rescaled Frobenius error `||est - truth||_F / sqrt(d1 d2)` between the
/// canonical representatives of both matrices.
pub fn rmse(estimate: &Matrix, truth: &Matrix, setting: Setting) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let est = canonicalize(estimate, setting);
    let tru = canonicalize(truth, setting);
    let diff = est.theta().sub(tru.theta())?;
    Ok((diff.frobenius_sq() / (estimate.rows() * estimate.cols()) as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
struct Task {
    r: usize,
    k: usize,
    alpha: f64,
    multiplier: f64,
    trial: usize,
}

/// Seed of one trial: a stable hash of the base seed and every coordinate
/// of the cell.
pub fn trial_seed(base_seed: u64, r: usize, k_or_n: usize, alpha: f64, multiplier: f64, trial: usize) -> u64 {
    rng::mix(&[base_seed, r as u64, k_or_n as u64, alpha.to_bits(), multiplier.to_bits(), trial as u64])
}

fn run_task(spec: &ExperimentSpec, task: Task) -> Result<TrialRecord> {
    let seed = trial_seed(spec.base_seed, task.r, task.k, task.alpha, task.multiplier, task.trial);
    let truth = synth_lowrank(spec.d1, spec.d2, task.r, task.alpha, seed)?;
    let data: Dataset = sample_collab_dataset(&truth, task.k, rng::splitmix64(seed))?.into();
    let config = spec.solver_config(task.multiplier);
    let lambda = config.resolve_lambda(&data);
    let (estimate, iterations, objective, converged) = match solver::fit(&data, &config) {
        Ok(res) => (res.estimate.theta().clone(), res.iterations, res.objective(), res.converged),
        Err(Error::Numerical { iteration, .. }) => {
            // the sweep keeps the initial iterate for a failed fit
            let zero = Matrix::zeros(spec.d1, spec.d2);
            let obj = likelihood::nll(&zero, &data)?;
            (zero, iteration, obj, false)
        }
        Err(e) => return Err(e),
    };
    Ok(TrialRecord {
        setting: spec.setting,
        d1: spec.d1,
        d2: spec.d2,
        r: task.r,
        k_or_n: task.k,
        alpha: task.alpha,
        lambda,
        seed,
        trial: task.trial,
        rmse: rmse(&estimate, truth.theta(), spec.setting)?,
        iterations,
        objective,
        converged,
    })
}

fn run_tasks(spec: &ExperimentSpec, tasks: Vec<Task>) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    // collect keeps task order regardless of scheduling
    let records = tasks
        .into_par_iter()
        .map(|t| run_task(spec, t))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &spec.out_path {
        write_records(path, &records)?;
    }
    Ok(records)
}

fn with_trials(spec: &ExperimentSpec, r: usize, k: usize, alpha: f64, multiplier: f64) -> impl Iterator<Item = Task> {
    (0..spec.trials).map(move |trial| Task {
        r,
        k,
        alpha,
        multiplier,
        trial,
    })
}

/// Error versus list length: cells ordered by rank, then `k`, then alpha,
/// then multiplier, each with `trials` repetitions.
pub fn run_scaling_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    let mut tasks = Vec::new();
    for &r in &spec.rank_list {
        for &k in &spec.k_list {
            for &alpha in &spec.alpha_list {
                for &m in &spec.lambda_multipliers {
                    tasks.extend(with_trials(spec, r, k, alpha, m));
                }
            }
        }
    }
    run_tasks(spec, tasks)
}

/// Error versus regularization weight: cells ordered by alpha, then rank,
/// then `k`, then multiplier.
pub fn run_lambda_sweep(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    let mut tasks = Vec::new();
    for &alpha in &spec.alpha_list {
        for &r in &spec.rank_list {
            for &k in &spec.k_list {
                for &m in &spec.lambda_multipliers {
                    tasks.extend(with_trials(spec, r, k, alpha, m));
                }
            }
        }
    }
    run_tasks(spec, tasks)
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(RECORD_HEADER.split(',')).map_err(to_err)?;
    for rec in records {
        w.serialize(rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RECORD_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Mean error of one grid cell over its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub r: usize,
    pub k_or_n: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub mean_rmse: f64,
    pub trials: usize,
}

/// Groups records by `(r, k_or_n, alpha, lambda)` in first-seen order.
pub fn summarize(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for rec in records {
        let key = (rec.r, rec.k_or_n, rec.alpha.to_bits(), rec.lambda.to_bits());
        match cells
            .iter_mut()
            .find(|c| (c.r, c.k_or_n, c.alpha.to_bits(), c.lambda.to_bits()) == key)
        {
            Some(c) => {
                c.mean_rmse += rec.rmse;
                c.trials += 1;
            }
            None => cells.push(CellSummary {
                r: rec.r,
                k_or_n: rec.k_or_n,
                alpha: rec.alpha,
                lambda: rec.lambda,
                mean_rmse: rec.rmse,
                trials: 1,
            }),
        }
    }
    for c in &mut cells {
        c.mean_rmse /= c.trials as f64;
    }
    cells
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation, averaging ranks over ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Largest relative deviation of any curve from the pointwise mean of all
/// curves, over the x-range every curve covers.
///
/// Curves are `(x, y)` points sorted by `x`, interpolated linearly in
/// log-log coordinates. The comparison points are every curve's own x values
/// that fall inside the common range. Returns `None` when the ranges do not
/// overlap.
pub fn collapse_spread(curves: &[Vec<(f64, f64)>]) -> Option<f64> {
    let lo = curves.iter().map(|c| c.first().map_or(f64::INFINITY, |p| p.0)).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().map(|c| c.last().map_or(f64::NEG_INFINITY, |p| p.0)).fold(f64::INFINITY, f64::min);
    if !(lo <= hi) {
        return None;
    }
    let interp = |curve: &[(f64, f64)], x: f64| -> f64 {
        let seg = curve.windows(2).find(|w| x >= w[0].0 && x <= w[1].0);
        match seg {
            Some(w) if w[1].0 > w[0].0 => {
                let t = (x.ln() - w[0].0.ln()) / (w[1].0.ln() - w[0].0.ln());
                (w[0].1.ln() + t * (w[1].1.ln() - w[0].1.ln())).exp()
            }
            Some(w) => w[0].1,
            None => curve[0].1,
        }
    };
    let xs: BTreeSet<u64> = curves
        .iter()
        .flatten()
        .map(|p| p.0)
        .filter(|&x| x >= lo && x <= hi)
        .map(f64::to_bits)
        .collect();
    let mut worst = 0.0_f64;
    for x in xs.into_iter().map(f64::from_bits) {
        let ys: Vec<f64> = curves.iter().map(|c| interp(c, x)).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        for y in ys {
            worst = worst.max((y - mean).abs() / mean);
        }
    }
    Some(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Mean error versus `k`, one curve per rank, log-scaled x.
    Scaling,
    /// Same data against `k / (r ln d)`.
    Collapse,
    /// Mean error versus the multiplier of the default weight, one curve
    /// per alpha, log2-scaled x.
    Lambda,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(PlotKind::Scaling),
            "collapse" => Ok(PlotKind::Collapse),
            "lambda" => Ok(PlotKind::Lambda),
            other => Err(Error::invalid(format!("unknown plot kind {other:?}"))),
        }
    }
}

/// Writes a gnuplot script rendering `records_path`. The script reads only
/// that CSV; `smooth unique` averages trials sharing an x value.
pub fn emit_plot_script(records_path: &Path, kind: PlotKind, script_path: &Path) -> Result<()> {
    let records = read_records(records_path)?;
    if records.is_empty() {
        return Err(Error::Parse {
            path: records_path.to_path_buf(),
            line: 2,
            reason: "no records".into(),
        });
    }
    let csv_name = records_path.display().to_string().replace('\'', "''");
    let mut s = String::new();
    let w = &mut s;
    writeln!(w, "# gnuplot script; render with: gnuplot {}", script_path.display()).unwrap();
    writeln!(w, "set datafile separator ','").unwrap();
    writeln!(w, "set terminal pngcairo size 800,600").unwrap();
    writeln!(w, "set output '{}.png'", script_path.with_extension("").display()).unwrap();
    writeln!(w, "set ylabel 'RMSE'").unwrap();
    writeln!(w, "set key top right").unwrap();
    // columns: 2 d1, 3 d2, 4 r, 5 k_or_n, 6 alpha, 7 lambda, 10 rmse
    let (xexpr, groups, col, label): (String, Vec<f64>, usize, &str) = match kind {
        PlotKind::Scaling => {
            writeln!(w, "set logscale x").unwrap();
            writeln!(w, "set xlabel 'k'").unwrap();
            ("($5)".into(), distinct(records.iter().map(|r| r.r as f64)), 4, "r")
        }
        PlotKind::Collapse => {
            writeln!(w, "set logscale x").unwrap();
            writeln!(w, "set xlabel 'k / (r ln d)'").unwrap();
            (
                "($5/($4*log(($2+$3)/2.0)))".into(),
                distinct(records.iter().map(|r| r.r as f64)),
                4,
                "r",
            )
        }
        PlotKind::Lambda => {
            writeln!(w, "set logscale x 2").unwrap();
            writeln!(w, "set xlabel 'lambda / default lambda'").unwrap();
            (
                "($7/(0.5*sqrt(log(($2+$3)/2.0)/($5*$2*$3))))".into(),
                distinct(records.iter().map(|r| r.alpha)),
                6,
                "alpha",
            )
        }
    };
    let series: Vec<String> = groups
        .iter()
        .map(|g| {
            format!(
                "'{csv_name}' skip 1 using {xexpr}:(${col}=={g} ? $10 : NaN) smooth unique with linespoints title '{label}={g}'"
            )
        })
        .collect();
    writeln!(w, "plot {}", series.join(", \\\n     ")).unwrap();
    fs::write(script_path, s).map_err(|e| Error::io(script_path, e))
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.map(f64::to_bits).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}
