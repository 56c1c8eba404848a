//! Elo ratings over pairwise preference logs, with bootstrap intervals,
//! win-rate matrices and rating histograms.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("record {index} compares model {model:?} with itself")]
    SameModel { index: usize, model: String },
    #[error("comparison log is empty")]
    EmptyLog,
    #[error("invalid Elo configuration: {0}")]
    BadConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no bootstrap rounds to summarize")]
    NoRounds,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub pair_id: String,
    pub model_a: String,
    pub model_b: String,
    pub winner: Winner,
    pub annotator: String,
    pub timestamp: String,
}

impl ComparisonRecord {
    pub fn winner_model(&self) -> &str {
        match self.winner {
            Winner::A => &self.model_a,
            Winner::B => &self.model_b,
        }
    }

    pub fn loser_model(&self) -> &str {
        match self.winner {
            Winner::A => &self.model_b,
            Winner::B => &self.model_a,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Parses a JSON Lines log. Blank lines are skipped.
pub fn parse_jsonl(text: &str, path: &str) -> Result<Vec<ComparisonRecord>, RankingError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ComparisonRecord =
            serde_json::from_str(line).map_err(|e| RankingError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if rec.model_a == rec.model_b {
            return Err(RankingError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: format!("model {:?} compared with itself", rec.model_a),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ComparisonRecord>, RankingError> {
    parse_jsonl(&std::fs::read_to_string(path)?, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    pub initial_rating: f64,
    pub k_factor: f64,
    pub bootstrap_rounds: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            initial_rating: 1000.0,
            k_factor: 32.0,
            bootstrap_rounds: 1000,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<(), RankingError> {
        if !(self.k_factor > 0.0 && self.k_factor.is_finite()) {
            return Err(RankingError::BadConfig(format!(
                "k_factor must be positive, got {}",
                self.k_factor
            )));
        }
        if !self.initial_rating.is_finite() {
            return Err(RankingError::BadConfig(
                "initial_rating must be finite".into(),
            ));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(RankingError::BadConfig(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub model: String,
    pub rating: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub games: usize,
}

/// Rows sorted by rating, highest first, ties broken by model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub rows: Vec<RatingRow>,
}

impl RatingTable {
    fn sorted(mut rows: Vec<RatingRow>) -> Self {
        rows.sort_by(|a, b| {
            b.rating
                .total_cmp(&a.rating)
                .then_with(|| a.model.cmp(&b.model))
        });
        Self { rows }
    }

    pub fn get(&self, model: &str) -> Option<&RatingRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn rating(&self, model: &str) -> Option<f64> {
        self.get(model).map(|r| r.rating)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, RankingError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "rating", "ci_low", "ci_high", "games"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.rating.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.games.to_string(),
            ])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, RankingError> {
    w.into_inner()
        .map_err(|e| RankingError::Io(std::io::Error::other(e.to_string())))
}

/// `1 / (1 + 10^((r_b - r_a) / 400))`.
pub fn expected_score(r_a: f64, r_b: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((r_b - r_a) / 400.0))
}

/// Sorted model names from the records plus `extra`.
fn model_index<'a>(
    records: impl IntoIterator<Item = &'a ComparisonRecord>,
    extra: &[String],
) -> BTreeMap<String, usize> {
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        names.entry(r.model_a.clone()).or_default();
        names.entry(r.model_b.clone()).or_default();
    }
    for m in extra {
        names.entry(m.clone()).or_default();
    }
    for (i, v) in names.values_mut().enumerate() {
        *v = i;
    }
    names
}

fn check_records(records: &[ComparisonRecord]) -> Result<(), RankingError> {
    if let Some((index, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.model_a == r.model_b)
    {
        return Err(RankingError::SameModel {
            index,
            model: r.model_a.clone(),
        });
    }
    Ok(())
}

/// Sequential Elo over `order` (indices into `records`).
fn run_elo(
    records: &[ComparisonRecord],
    order: impl IntoIterator<Item = usize>,
    index: &BTreeMap<String, usize>,
    config: &EloConfig,
) -> (Vec<f64>, Vec<usize>) {
    let mut ratings = vec![config.initial_rating; index.len()];
    let mut games = vec![0usize; index.len()];
    for i in order {
        let r = &records[i];
        let (a, b) = (index[&r.model_a], index[&r.model_b]);
        let e_a = expected_score(ratings[a], ratings[b]);
        let s_a = if r.winner == Winner::A { 1.0 } else { 0.0 };
        let delta = config.k_factor * (s_a - e_a);
        ratings[a] += delta;
        ratings[b] -= delta;
        games[a] += 1;
        games[b] += 1;
    }
    (ratings, games)
}

/// Single-pass Elo in log order. Interval columns equal the rating.
pub fn elo_ratings(
    records: &[ComparisonRecord],
    config: &EloConfig,
) -> Result<RatingTable, RankingError> {
    if records.is_empty() {
        return Err(RankingError::EmptyLog);
    }
    elo_ratings_with_models(records, &[], config)
}

/// Like [`elo_ratings`] but also lists `models` that may have no games;
/// an empty log yields every model at the initial rating.
pub fn elo_ratings_with_models(
    records: &[ComparisonRecord],
    models: &[String],
    config: &EloConfig,
) -> Result<RatingTable, RankingError> {
    config.validate()?;
    check_records(records)?;
    let index = model_index(records, models);
    let (ratings, games) = run_elo(records, 0..records.len(), &index, config);
    Ok(RatingTable::sorted(
        index
            .iter()
            .map(|(m, &i)| RatingRow {
                model: m.clone(),
                rating: ratings[i],
                ci_low: ratings[i],
                ci_high: ratings[i],
                games: games[i],
            })
            .collect(),
    ))
}

/// Bootstrap output with the per-round ratings kept for histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub table: RatingTable,
    /// Model names in column order of `rounds`.
    pub models: Vec<String>,
    /// `rounds[r][m]`: rating of `models[m]` after round `r`.
    pub rounds: Vec<Vec<f64>>,
}

/// Seed for bootstrap round `round`, derived from the master seed.
pub fn round_seed(master: u64, round: usize) -> u64 {
    // splitmix64 finalizer over (master, round)
    let mut z = master
        ^ (round as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Resamples the log with replacement in random order each round and runs
/// sequential Elo on the sample. The point estimate is the per-model median
/// across rounds; the interval is the central `ci_level` percentile range.
pub fn bootstrap_elo(
    records: &[ComparisonRecord],
    config: &EloConfig,
) -> Result<BootstrapResult, RankingError> {
    bootstrap_elo_with(records, config, |n, rng| {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    })
}

/// [`bootstrap_elo`] with a caller-supplied resampler returning the record
/// order for one round.
pub fn bootstrap_elo_with<F>(
    records: &[ComparisonRecord],
    config: &EloConfig,
    resample: F,
) -> Result<BootstrapResult, RankingError>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Vec<usize> + Sync,
{
    config.validate()?;
    if records.is_empty() {
        return Err(RankingError::EmptyLog);
    }
    if config.bootstrap_rounds == 0 {
        return Err(RankingError::NoRounds);
    }
    check_records(records)?;
    let index = model_index(records, &[]);
    let n = records.len();
    let rounds: Vec<Vec<f64>> = (0..config.bootstrap_rounds)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(round_seed(config.seed, r));
            run_elo(records, resample(n, &mut rng), &index, config).0
        })
        .collect();
    let (_, games) = run_elo(records, 0..n, &index, config);

    let alpha = (1.0 - config.ci_level) / 2.0;
    let rows = index
        .iter()
        .map(|(m, &i)| {
            let mut col: Vec<f64> = rounds.iter().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            RatingRow {
                model: m.clone(),
                rating: percentile(&col, 0.5),
                ci_low: percentile(&col, alpha),
                ci_high: percentile(&col, 1.0 - alpha),
                games: games[i],
            }
        })
        .collect();
    Ok(BootstrapResult {
        table: RatingTable::sorted(rows),
        models: index.keys().cloned().collect(),
        rounds,
    })
}

/// Linear-interpolation percentile of ascending `sorted`, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pairwise win rates; `rates[i][j]` is absent on the diagonal and when
/// `i` and `j` never met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub models: Vec<String>,
    pub wins: Vec<Vec<usize>>,
    pub rates: Vec<Vec<Option<f64>>>,
}

impl WinRateMatrix {
    pub fn rate(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == row)?;
        let j = self.models.iter().position(|m| m == col)?;
        self.rates[i][j]
    }

    /// Every off-diagonal cell; undefined rates are left blank.
    pub fn to_csv(&self) -> Result<Vec<u8>, RankingError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "col", "rate"])?;
        for (i, row) in self.models.iter().enumerate() {
            for (j, col) in self.models.iter().enumerate() {
                if i != j {
                    let rate = self.rates[i][j].map(|r| r.to_string()).unwrap_or_default();
                    w.write_record([row.as_str(), col.as_str(), rate.as_str()])?;
                }
            }
        }
        finish(w)
    }
}

pub fn win_rate_matrix(records: &[ComparisonRecord]) -> WinRateMatrix {
    let index = model_index(records, &[]);
    let n = index.len();
    let mut wins = vec![vec![0usize; n]; n];
    for r in records {
        let w = index[r.winner_model()];
        let l = index[r.loser_model()];
        wins[w][l] += 1;
    }
    let rates = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let games = wins[i][j] + wins[j][i];
                    (i != j && games > 0).then(|| wins[i][j] as f64 / games as f64)
                })
                .collect()
        })
        .collect();
    WinRateMatrix {
        models: index.into_keys().collect(),
        wins,
        rates,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub model: String,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// Per-model counts of bootstrap ratings in `bins` equal-width bins spanning
/// the global minimum and maximum. A degenerate range collapses to one bin.
pub fn rating_distribution(
    result: &BootstrapResult,
    bins: usize,
) -> Result<Vec<HistogramRow>, RankingError> {
    if result.rounds.is_empty() {
        return Err(RankingError::NoRounds);
    }
    if bins == 0 {
        return Err(RankingError::BadConfig(
            "need at least one histogram bin".into(),
        ));
    }
    let all = result.rounds.iter().flatten();
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut rows = Vec::with_capacity(result.models.len() * bins);
    for (m, model) in result.models.iter().enumerate() {
        let mut counts = vec![0usize; bins];
        for round in &result.rounds {
            let b = if hi > lo {
                (((round[m] - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            let bin_high = if b + 1 == bins {
                hi
            } else {
                lo + width * (b + 1) as f64
            };
            rows.push(HistogramRow {
                model: model.clone(),
                bin_low: lo + width * b as f64,
                bin_high,
                count,
            });
        }
    }
    Ok(rows)
}

pub fn histogram_csv(rows: &[HistogramRow]) -> Result<Vec<u8>, RankingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "bin_low", "bin_high", "count"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.bin_low.to_string(),
            r.bin_high.to_string(),
            r.count.to_string(),
        ])?;
    }
    finish(w)
}

/// A log of `n` comparisons between uniformly drawn distinct pairs, where
/// each outcome follows the Elo expectation of the planted `strengths`.
pub fn synthetic_log(strengths: &[(&str, f64)], n: usize, seed: u64) -> Vec<ComparisonRecord> {
    assert!(strengths.len() >= 2, "need at least two models");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let i = rng.random_range(0..strengths.len());
            let mut j = rng.random_range(0..strengths.len() - 1);
            if j >= i {
                j += 1;
            }
            let p = expected_score(strengths[i].1, strengths[j].1);
            let winner = if rng.random_bool(p) {
                Winner::A
            } else {
                Winner::B
            };
            ComparisonRecord {
                pair_id: format!("p{k:05}"),
                model_a: strengths[i].0.to_string(),
                model_b: strengths[j].0.to_string(),
                winner,
                annotator: format!("ann{}", k % 7),
                timestamp: format!("2024-01-01T00:{:02}:{:02}Z", (k / 60) % 60, k % 60),
            }
        })
        .collect()
}
