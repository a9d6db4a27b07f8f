//! Observation generators for both settings, plus the exact ranking
//! distribution used to check them.
//!
//! Item sets are drawn uniformly with replacement. A repeated item is kept
//! as a separate position with the same score, so a ranking is always a
//! permutation of positions `0..k`, never of item ids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::densemat::Matrix;
use crate::error::{Error, Result};
use crate::likelihood::{BundledDataset, CollabDataset};
use crate::model::{PreferenceMatrix, Setting};
use crate::rng;

/// Largest `k` for which [`ranking_pmf`] enumerates all `k!` orders.
pub const PMF_MAX_K: usize = 8;

/// One user's presented multiset and the revealed ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingObservation {
    pub user: usize,
    /// Item ids in draw order; may repeat.
    pub items: Vec<usize>,
    /// Positions into `items`, most preferred first.
    pub order: Vec<usize>,
}

/// One bundled purchase: the presented sets and the chosen pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundledObservation {
    #[serde(rename = "S")]
    pub s_items: Vec<usize>,
    #[serde(rename = "T")]
    pub t_items: Vec<usize>,
    /// Positions into `s_items` and `t_items`.
    pub choice: (usize, usize),
}

impl RankingObservation {
    pub fn k(&self) -> usize {
        self.items.len()
    }

    pub fn validate(&self, d2: usize) -> Result<()> {
        if self.items.len() < 2 {
            return Err(Error::invalid(format!(
                "user {}: a ranking needs at least 2 items",
                self.user
            )));
        }
        if let Some(&j) = self.items.iter().find(|&&j| j >= d2) {
            return Err(Error::invalid(format!(
                "user {}: item {j} out of range (d2 = {d2})",
                self.user
            )));
        }
        if !is_permutation(&self.order, self.items.len()) {
            return Err(Error::invalid(format!(
                "user {}: order {:?} is not a permutation of 0..{}",
                self.user,
                self.order,
                self.items.len()
            )));
        }
        Ok(())
    }
}

impl BundledObservation {
    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        if self.s_items.is_empty() || self.t_items.is_empty() {
            return Err(Error::invalid("bundled observation with an empty set"));
        }
        if self.s_items.iter().any(|&j| j >= d1) || self.t_items.iter().any(|&j| j >= d2) {
            return Err(Error::invalid(format!(
                "bundled observation index out of range ({d1}x{d2})"
            )));
        }
        if self.choice.0 >= self.s_items.len() || self.choice.1 >= self.t_items.len() {
            return Err(Error::invalid(format!(
                "choice {:?} outside the presented sets",
                self.choice
            )));
        }
        Ok(())
    }

    /// The chosen `(row, column)` entry of the parameter matrix.
    pub fn chosen_entry(&self) -> (usize, usize) {
        (self.s_items[self.choice.0], self.t_items[self.choice.1])
    }
}

fn is_permutation(order: &[usize], k: usize) -> bool {
    if order.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    for &p in order {
        if p >= k || std::mem::replace(&mut seen[p], true) {
            return false;
        }
    }
    true
}

/// `k` independent uniform draws from `0..universe_size`, in draw order.
pub fn sample_itemset<R: Rng + ?Sized>(universe_size: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if universe_size == 0 {
        return Err(Error::invalid("cannot sample from an empty universe"));
    }
    if k == 0 {
        return Err(Error::invalid("item set size k must be at least 1"));
    }
    Ok((0..k).map(|_| rng.random_range(0..universe_size)).collect())
}

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn scores(theta_row: &[f64], items: &[usize]) -> Vec<f64> {
    items.iter().map(|&j| theta_row[j]).collect()
}

/// Positions sorted by key; `descending` selects the direction. Equal keys
/// keep the lower position first.
fn argsort(keys: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = keys[a].total_cmp(&keys[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx
}

/// Random-utility ranking: each position gets its score plus standard
/// Gumbel noise `-ln(-ln u)`, and positions are sorted by utility,
/// highest first.
pub fn sample_ranking_gumbel<R: Rng + ?Sized>(theta_row: &[f64], items: &[usize], rng: &mut R) -> Vec<usize> {
    let utilities: Vec<f64> = scores(theta_row, items)
        .into_iter()
        .map(|s| s - (-open_unit(rng).ln()).ln())
        .collect();
    argsort(&utilities, true)
}

/// Exponential-race ranking: each position finishes after an exponential
/// time with mean `exp(-score)`; earliest finisher is ranked first.
pub fn sample_ranking_exprace<R: Rng + ?Sized>(theta_row: &[f64], items: &[usize], rng: &mut R) -> Vec<usize> {
    let times: Vec<f64> = scores(theta_row, items)
        .into_iter()
        .map(|s| -open_unit(rng).ln() * (-s).exp())
        .collect();
    argsort(&times, false)
}

/// Index drawn with probability proportional to `exp(scores[i])`.
fn draw_softmax<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    weights.len() - 1
}

/// Chooses one pair of positions from `s x t` with probability proportional
/// to `exp(theta[s[a], t[b]])`.
pub fn choose_pair<R: Rng + ?Sized>(theta: &Matrix, s: &[usize], t: &[usize], rng: &mut R) -> (usize, usize) {
    let pair_scores: Vec<f64> = s
        .iter()
        .flat_map(|&a| t.iter().map(move |&b| theta.get(a, b)))
        .collect();
    let idx = draw_softmax(&pair_scores, rng);
    (idx / t.len(), idx % t.len())
}

/// Presents `k1` row items and `k2` column items (with replacement) and
/// draws the purchased pair.
pub fn sample_bundled<R: Rng + ?Sized>(
    pm: &PreferenceMatrix,
    k1: usize,
    k2: usize,
    rng: &mut R,
) -> Result<BundledObservation> {
    let theta = pm.theta();
    let s_items = sample_itemset(theta.rows(), k1, rng)?;
    let t_items = sample_itemset(theta.cols(), k2, rng)?;
    let choice = choose_pair(theta, &s_items, &t_items, rng);
    Ok(BundledObservation {
        s_items,
        t_items,
        choice,
    })
}

/// Probability of `order` under sequential MNL selection, computed as the
/// plain product of conditional ratios.
pub fn order_probability(theta_row: &[f64], items: &[usize], order: &[usize]) -> f64 {
    let w: Vec<f64> = items.iter().map(|&j| theta_row[j].exp()).collect();
    (0..order.len())
        .map(|t| {
            let remaining: f64 = order[t..].iter().map(|&p| w[p]).sum();
            w[order[t]] / remaining
        })
        .product()
}

/// Exact distribution over all `k!` orders of the positions of `items`,
/// listed in lexicographic order of the permutation.
pub fn ranking_pmf(theta_row: &[f64], items: &[usize]) -> Result<Vec<(Vec<usize>, f64)>> {
    let k = items.len();
    if k > PMF_MAX_K {
        return Err(Error::SizeLimit {
            what: "k",
            value: k,
            max: PMF_MAX_K,
        });
    }
    if k == 0 {
        return Err(Error::invalid("empty item multiset"));
    }
    if items.iter().any(|&j| j >= theta_row.len()) {
        return Err(Error::invalid("item index out of range"));
    }
    // shift so the largest weight is 1; the distribution is shift invariant
    let max = items.iter().map(|&j| theta_row[j]).fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = theta_row.iter().map(|x| x - max).collect();
    Ok((0..k)
        .permutations(k)
        .map(|order| {
            let p = order_probability(&shifted, items, &order);
            (order, p)
        })
        .collect())
}

/// One ranking per user of `pm`, each over `k` items drawn with
/// replacement. User `i` uses substream `i` of `seed`.
pub fn sample_collab_dataset(pm: &PreferenceMatrix, k: usize, seed: u64) -> Result<CollabDataset> {
    if pm.setting() != Setting::Collab {
        return Err(Error::invalid("collab sampling needs a collab preference matrix"));
    }
    if k < 2 {
        return Err(Error::invalid("rankings need k >= 2"));
    }
    let theta = pm.theta();
    let observations = (0..theta.rows())
        .map(|user| {
            let mut rng = rng::substream(seed, user as u64);
            let items = sample_itemset(theta.cols(), k, &mut rng)?;
            let order = sample_ranking_gumbel(theta.row(user), &items, &mut rng);
            Ok(RankingObservation { user, items, order })
        })
        .collect::<Result<Vec<_>>>()?;
    CollabDataset::new(theta.rows(), theta.cols(), observations)
}

/// `n` bundled purchases from `pm`; sample `i` uses substream `i` of `seed`.
pub fn sample_bundled_dataset(pm: &PreferenceMatrix, k1: usize, k2: usize, n: usize, seed: u64) -> Result<BundledDataset> {
    let theta = pm.theta();
    let observations = (0..n)
        .map(|i| sample_bundled(pm, k1, k2, &mut rng::substream(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    BundledDataset::new(theta.rows(), theta.cols(), observations)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("observation serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Writes `{"user":..,"items":[..],"order":[..]}` lines.
pub fn write_rankings_jsonl(path: &Path, data: &CollabDataset) -> Result<()> {
    write_jsonl(path, data.observations())
}

pub fn read_rankings_jsonl(path: &Path) -> Result<Vec<RankingObservation>> {
    read_jsonl(path)
}

/// Writes `{"S":[..],"T":[..],"choice":[a,b]}` lines.
pub fn write_bundled_jsonl(path: &Path, data: &BundledDataset) -> Result<()> {
    write_jsonl(path, data.observations())
}

pub fn read_bundled_jsonl(path: &Path) -> Result<Vec<BundledObservation>> {
    read_jsonl(path)
}
