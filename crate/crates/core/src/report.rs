//! CSV and JSON outputs of runs and sweeps.
//!
//! `results.csv` and `seed_<n>.csv` share one schema:
//!
//! | column          | meaning                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | `episode`       | 0-based episode index                                     |
//! | `realized_cost` | total cost of the executed trajectory                     |
//! | `oracle_cost`   | true-model planner cost estimate                          |
//! | `cum_regret`    | running sum of `realized_cost − oracle_cost`              |
//! | `info_gain`     | `log det Σ − log det Σ⁰` after the episode's update       |
//! | `ball_ok`       | true weights inside the confidence ball (empty if N/A)    |
//! | `coverage`      | distinct maze state-action pairs so far (empty if N/A)    |
//! | `first_success` | first episode that reached the goal (empty until then)    |
//!
//! Floats are written in shortest round-trip form, so parsing a file
//! reproduces the in-memory values exactly.
//!
//! `aggregate.csv` has one row per episode with `<column>_mean` and
//! `<column>_std` (population standard deviation across seeds) for
//! `realized_cost`, `cum_regret`, `info_gain` and `coverage`, plus
//! `success_fraction`, the share of seeds that reached the goal by then.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::driver::{EpisodeRecord, Experiment, OracleCache, OracleEstimate, RegretReport};
use crate::error::{invalid, KnrError, Result};

pub fn write_results_csv<W: Write>(out: W, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<EpisodeRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(KnrError::from)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub episodes: usize,
    pub final_cum_regret: f64,
    pub first_success_episode: Option<usize>,
    pub mean_regret: f64,
    pub regret_std_err: f64,
    pub final_info_gain: f64,
    pub oracle: OracleEstimate,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

impl Summary {
    pub fn new(report: &RegretReport, config: &ExperimentConfig, wall_clock_seconds: f64) -> Self {
        let (mean_regret, regret_std_err) = report.mean_regret();
        Self {
            episodes: report.records.len(),
            final_cum_regret: report.final_cum_regret(),
            first_success_episode: report.first_success,
            mean_regret,
            regret_std_err,
            final_info_gain: report.records.last().map_or(0.0, |r| r.info_gain),
            oracle: report.oracle,
            wall_clock_seconds,
            config: config.clone(),
        }
    }
}

/// Writes `results.csv` and `summary.json` into `out_dir`.
pub fn write_run(out_dir: &Path, report: &RegretReport, config: &ExperimentConfig, wall_clock_seconds: f64) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_results_csv(BufWriter::new(File::create(out_dir.join("results.csv"))?), &report.records)?;
    let summary = Summary::new(report, config, wall_clock_seconds);
    let mut f = BufWriter::new(File::create(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub episode: usize,
    pub realized_cost_mean: f64,
    pub realized_cost_std: f64,
    pub cum_regret_mean: f64,
    pub cum_regret_std: f64,
    pub info_gain_mean: f64,
    pub info_gain_std: f64,
    pub coverage_mean: Option<f64>,
    pub coverage_std: Option<f64>,
    pub success_fraction: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-episode statistics across seeds. All runs must have the same length.
pub fn aggregate(runs: &[Vec<EpisodeRecord>]) -> Result<Vec<AggregateRow>> {
    let Some(first) = runs.first() else {
        return Err(invalid("seeds", "need at least one run to aggregate"));
    };
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(invalid("seeds", "runs have different episode counts"));
    }
    let maze = first.first().is_some_and(|r| r.coverage.is_some());
    let rows = (0..first.len())
        .map(|t| {
            let column = |f: &dyn Fn(&EpisodeRecord) -> f64| mean_std(&runs.iter().map(|r| f(&r[t])).collect::<Vec<_>>());
            let (rc_m, rc_s) = column(&|r| r.realized_cost);
            let (cr_m, cr_s) = column(&|r| r.cum_regret);
            let (ig_m, ig_s) = column(&|r| r.info_gain);
            let (cov, success) = if maze {
                let (m, s) = column(&|r| r.coverage.unwrap_or(0) as f64);
                let (f, _) = column(&|r| if r.first_success.is_some() { 1.0 } else { 0.0 });
                ((Some(m), Some(s)), Some(f))
            } else {
                ((None, None), None)
            };
            AggregateRow {
                episode: t,
                realized_cost_mean: rc_m,
                realized_cost_std: rc_s,
                cum_regret_mean: cr_m,
                cum_regret_std: cr_s,
                info_gain_mean: ig_m,
                info_gain_std: ig_s,
                coverage_mean: cov.0,
                coverage_std: cov.1,
                success_fraction: success,
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(KnrError::from)).collect()
}

#[derive(Debug)]
pub struct SweepOutput {
    pub seeds: Vec<u64>,
    pub reports: Vec<RegretReport>,
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
}

/// Runs `config` once per seed, writing `seed_<n>.csv` per seed and
/// `aggregate.csv`. The true-model oracle is estimated once and shared.
pub fn run_sweep(config: &ExperimentConfig, seeds: &[u64], out_dir: &Path) -> Result<SweepOutput> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "need at least one seed"));
    }
    fs::create_dir_all(out_dir)?;
    let mut cache = OracleCache::new();
    let mut reports = Vec::with_capacity(seeds.len());
    let mut files = Vec::with_capacity(seeds.len() + 1);
    for &seed in seeds {
        let with_seed = |e| KnrError::Seed {
            seed,
            source: Box::new(e),
        };
        let cfg = config.clone().with_seed(seed);
        let report = Experiment::new(&cfg)
            .and_then(|ex| ex.run(&mut cache))
            .map_err(with_seed)?;
        let path = out_dir.join(format!("seed_{seed}.csv"));
        write_results_csv(BufWriter::new(File::create(&path)?), &report.records)?;
        files.push(path);
        reports.push(report);
    }
    let runs: Vec<Vec<EpisodeRecord>> = reports.iter().map(|r| r.records.clone()).collect();
    let aggregate = aggregate(&runs)?;
    let path = out_dir.join("aggregate.csv");
    write_aggregate_csv(BufWriter::new(File::create(&path)?), &aggregate)?;
    files.push(path);
    Ok(SweepOutput {
        seeds: seeds.to_vec(),
        reports,
        aggregate,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize, cost: f64, cov: Option<usize>) -> EpisodeRecord {
        EpisodeRecord {
            episode: t,
            realized_cost: cost,
            oracle_cost: 0.1,
            cum_regret: cost * (t + 1) as f64,
            info_gain: 0.5 * t as f64,
            ball_ok: Some(t.is_multiple_of(2)),
            coverage: cov,
            first_success: (t > 0).then_some(1),
        }
    }

    #[test]
    fn results_csv_round_trip_is_exact() {
        let records = vec![
            record(0, 1.0 / 3.0, Some(4)),
            record(1, -2.5e-17, None),
            record(2, 123456.789012345, Some(9)),
        ];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "episode,realized_cost,oracle_cost,cum_regret,info_gain,ball_ok,coverage,first_success\n"
        ));
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn single_seed_has_zero_std() {
        let run = vec![record(0, 1.0, Some(3)), record(1, 2.0, Some(5))];
        let rows = aggregate(&[run]).unwrap();
        for r in &rows {
            assert_eq!(r.realized_cost_std, 0.0);
            assert_eq!(r.cum_regret_std, 0.0);
            assert_eq!(r.coverage_std, Some(0.0));
        }
    }

    #[test]
    fn aggregate_matches_hand_average() {
        let a = vec![record(0, 1.0, Some(2)), record(1, 3.0, Some(6))];
        let b = vec![record(0, 2.0, Some(4)), record(1, 5.0, Some(6))];
        let rows = aggregate(&[a, b]).unwrap();
        assert_eq!(rows[0].realized_cost_mean, 1.5);
        assert_eq!(rows[0].realized_cost_std, 0.5);
        assert_eq!(rows[1].coverage_mean, Some(6.0));
        assert_eq!(rows[1].coverage_std, Some(0.0));
        assert_eq!(rows[1].success_fraction, Some(1.0));
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_aggregate_csv(buf.as_slice()).unwrap(), rows);
        assert!(aggregate(&[]).is_err());
    }
}
