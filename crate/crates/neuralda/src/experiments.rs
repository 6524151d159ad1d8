//! Experiment drivers behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use neuralda_core::datagen::{generate_feature_conditioned, generate_random_walk};
use neuralda_core::eval::{
    detector_labels, evaluate_tracking, ground_truth_supervised_train, hungarian_supervised_train, hungarian_tracker,
    label_accuracy, track_with_permutations, CostKind,
};
use neuralda_core::model::{Episode, ModelParams, Permutation};
use neuralda_core::network::{InputMode, NetworkParams};
use neuralda_core::tensor::Tensor;
use neuralda_core::trainer::{em_train_with_clock, hard_nll, predict_permutations, TrainConfig, TrainReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::io::{write_csv, write_json, write_train_report, Checkpoint};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const DETECTOR_FILE: &str = "detector.csv";
pub const DETECTOR_SUMMARY_FILE: &str = "detector_summary.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.csv";
pub const EVAL_FILE: &str = "eval.csv";

fn run_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    Ok(pool.install(f))
}

fn timed_train(episodes: &[Episode], params: &ModelParams, cfg: &TrainConfig) -> Result<(NetworkParams, TrainReport)> {
    let start = Instant::now();
    Ok(em_train_with_clock(episodes, params, cfg, &mut || start.elapsed().as_secs_f64())?)
}

/// Neural tracker: hardened network assignments, then filter and smooth.
pub struct NeuralTrack {
    pub assignments: Vec<Permutation>,
    pub smoothed: Vec<Tensor>,
    pub rmse: f64,
    pub accuracy: f64,
    pub alignment: Vec<usize>,
}

pub fn neural_track(
    episode: &Episode,
    params: &ModelParams,
    net: &NetworkParams,
    cfg: &TrainConfig,
) -> Result<NeuralTrack> {
    let assignments = predict_permutations(episode, net, cfg.input_mode, cfg.sinkhorn)?;
    let out = track_with_permutations(episode, params, &assignments)?;
    let report = evaluate_tracking(episode, &out.smoothed, &assignments)?;
    Ok(NeuralTrack {
        smoothed: neuralda_core::eval::belief_tracks(&out.smoothed, params.dim),
        rmse: report.rmse,
        accuracy: report.accuracy,
        alignment: report.alignment.into_vec(),
        assignments,
    })
}

/// One cell of a sweep. Timing is the only non-deterministic column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub fingerprint: String,
    pub seed: u64,
    pub sigma_r: f64,
    pub learning_rate: f64,
    pub graduation_rate: f64,
    pub q_min_scale: f64,
    pub neural_rmse: Option<f64>,
    pub neural_accuracy: Option<f64>,
    pub hungarian_rmse: Option<f64>,
    pub hungarian_accuracy: Option<f64>,
    pub oracle_rmse: Option<f64>,
    pub final_nll: Option<f64>,
    pub hard_nll: Option<f64>,
    pub error: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    sigma_r: f64,
    learning_rate: f64,
    graduation_rate: f64,
    seed: u64,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &sigma_r in &cfg.sigma_r {
        for &learning_rate in &cfg.learning_rates {
            for &graduation_rate in &cfg.graduation_rates {
                for &seed in &cfg.seeds {
                    out.push(Cell { sigma_r, learning_rate, graduation_rate, seed });
                }
            }
        }
    }
    out
}

fn run_cell(cfg: &ExperimentConfig, fingerprint: &str, cell: Cell) -> SweepRow {
    let start = Instant::now();
    let tc = cfg.train.build(cell.learning_rate, cell.graduation_rate, cell.seed, InputMode::Positional);
    let mut row = SweepRow {
        experiment: cfg.name.clone(),
        fingerprint: fingerprint.to_string(),
        seed: cell.seed,
        sigma_r: cell.sigma_r,
        learning_rate: cell.learning_rate,
        graduation_rate: tc.graduation_rate,
        q_min_scale: tc.q_min_scale,
        neural_rmse: None,
        neural_accuracy: None,
        hungarian_rmse: None,
        hungarian_accuracy: None,
        oracle_rmse: None,
        final_nll: None,
        hard_nll: None,
        error: String::new(),
        seconds: 0.0,
    };
    let result = (|| -> Result<()> {
        let walk = cfg.model.walk(cell.sigma_r);
        let params = walk.model_params()?;
        let episode = generate_random_walk(&walk, cell.seed)?;

        // references do not depend on training, so they survive a failed run
        let h = hungarian_tracker(&episode, &params, CostKind::Euclidean)?;
        let hr = evaluate_tracking(&episode, &h.smoothed, &h.assignments)?;
        row.hungarian_rmse = Some(hr.rmse);
        row.hungarian_accuracy = Some(hr.accuracy);
        let o = track_with_permutations(&episode, &params, &episode.true_perms)?;
        row.oracle_rmse = Some(evaluate_tracking(&episode, &o.smoothed, &episode.true_perms)?.rmse);

        let eps = std::slice::from_ref(&episode);
        let (net, report) = timed_train(eps, &params, &tc)?;
        row.final_nll = report.nll.last().copied();
        row.hard_nll = Some(hard_nll(eps, &params, &net, tc.input_mode, tc.sinkhorn)?);
        let track = neural_track(&episode, &params, &net, &tc)?;
        row.neural_rmse = Some(track.rmse);
        row.neural_accuracy = Some(track.accuracy);
        Ok(())
    })();
    if let Err(e) = result {
        warn!("cell seed={} lr={} gamma={} failed: {e:#}", cell.seed, cell.learning_rate, cell.graduation_rate);
        row.error = format!("{e:#}");
    }
    row.seconds = start.elapsed().as_secs_f64();
    info!(
        "seed={} sigma_r={} lr={} gamma={:.4} neural_rmse={:?} hungarian_rmse={:?}",
        cell.seed, cell.sigma_r, cell.learning_rate, row.graduation_rate, row.neural_rmse, row.hungarian_rmse
    );
    row
}

/// Median and interquartile range of one metric within a summary group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    Some(Spread { median: quantile(values, 0.5), q25: quantile(values, 0.25), q75: quantile(values, 0.75) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub fingerprint: String,
    pub sigma_r: f64,
    pub learning_rate: f64,
    pub graduation_rate: f64,
    pub runs: usize,
    pub failures: usize,
    pub neural_rmse_median: Option<f64>,
    pub neural_rmse_q25: Option<f64>,
    pub neural_rmse_q75: Option<f64>,
    pub neural_accuracy_median: Option<f64>,
    pub hungarian_rmse_median: Option<f64>,
    pub hungarian_rmse_q25: Option<f64>,
    pub hungarian_rmse_q75: Option<f64>,
    pub hungarian_accuracy_median: Option<f64>,
    pub oracle_rmse_median: Option<f64>,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, f64, f64)> = Vec::new();
    for r in rows {
        let k = (r.sigma_r, r.learning_rate, r.graduation_rate);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(sigma_r, learning_rate, graduation_rate)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| {
                    (r.sigma_r, r.learning_rate, r.graduation_rate) == (sigma_r, learning_rate, graduation_rate)
                })
                .collect();
            let col = |f: fn(&SweepRow) -> Option<f64>| spread(&group.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let nr = col(|r| r.neural_rmse);
            let hr = col(|r| r.hungarian_rmse);
            SummaryRow {
                experiment: group[0].experiment.clone(),
                fingerprint: group[0].fingerprint.clone(),
                sigma_r,
                learning_rate,
                graduation_rate,
                runs: group.len(),
                failures: group.iter().filter(|r| !r.error.is_empty()).count(),
                neural_rmse_median: nr.map(|s| s.median),
                neural_rmse_q25: nr.map(|s| s.q25),
                neural_rmse_q75: nr.map(|s| s.q75),
                neural_accuracy_median: col(|r| r.neural_accuracy).map(|s| s.median),
                hungarian_rmse_median: hr.map(|s| s.median),
                hungarian_rmse_q25: hr.map(|s| s.q25),
                hungarian_rmse_q75: hr.map(|s| s.q75),
                hungarian_accuracy_median: col(|r| r.hungarian_accuracy).map(|s| s.median),
                oracle_rmse_median: col(|r| r.oracle_rmse).map(|s| s.median),
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SummaryRow>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn failed_entirely(&self) -> bool {
        self.rows.iter().all(|r| !r.error.is_empty())
    }
}

/// Every `(σ_r, λ, γ, seed)` cell: generate, train, evaluate the network
/// and both references. Cells run on `jobs` workers; rows are written in
/// grid order once all cells finish.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let grid = cells(cfg);
    info!("sweep {}: {} cells on {} workers", cfg.name, grid.len(), jobs);
    let rows: Vec<SweepRow> = run_pool(jobs, || grid.par_iter().map(|c| run_cell(cfg, &fingerprint, *c)).collect())?;
    let summary = summarize(&rows);
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let results_path = cfg.out_dir.join(RESULTS_FILE);
    let summary_path = cfg.out_dir.join(SUMMARY_FILE);
    write_csv(&results_path, &rows)?;
    write_csv(&summary_path, &summary)?;
    Ok(SweepOutcome { rows, summary, results_path, summary_path })
}

/// Everything needed to plot one trained trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub fingerprint: String,
    pub seed: u64,
    /// `steps x objects x dim`.
    pub truth: Vec<Vec<Vec<f64>>>,
    pub observations: Vec<Vec<Vec<f64>>>,
    /// Smoothed track estimates in the network's own track order.
    pub smoothed: Vec<Vec<Vec<f64>>>,
    /// `alignment[track]` is the true object a learned track maps to.
    pub alignment: Vec<usize>,
    /// Per-step slot → track assignments of the network.
    pub assignments: Vec<Vec<usize>>,
    pub true_assignments: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub rmse: f64,
    pub hungarian_rmse: f64,
    pub hungarian_accuracy: f64,
}

fn nested(ts: &[Tensor]) -> Vec<Vec<Vec<f64>>> {
    ts.iter().map(|t| (0..t.rows()).map(|r| t.row(r).to_vec()).collect()).collect()
}

/// Trains one model on the first configured seed with graduated
/// optimization and dumps the trial plus its checkpoint and loss trace.
pub fn run_trajectory_demo(cfg: &ExperimentConfig) -> Result<TrajectoryDump> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let walk = cfg.model.walk(cfg.model.sigma_r);
    let params = walk.model_params()?;
    let episode = generate_random_walk(&walk, seed)?;
    let tc = cfg.train.build(cfg.train.learning_rate, cfg.train.default_graduation_rate(), seed, InputMode::Positional);
    let (net, report) = timed_train(std::slice::from_ref(&episode), &params, &tc)?;
    let track = neural_track(&episode, &params, &net, &tc)?;
    let h = hungarian_tracker(&episode, &params, CostKind::Euclidean)?;
    let hr = evaluate_tracking(&episode, &h.smoothed, &h.assignments)?;

    fs::create_dir_all(&cfg.out_dir)?;
    write_json(
        &cfg.out_dir.join(CHECKPOINT_FILE),
        &Checkpoint::new(&net, tc.input_mode, params.dim, None, tc.sinkhorn),
    )?;
    write_train_report(&cfg.out_dir.join(TRAIN_REPORT_FILE), &report)?;
    let dump = TrajectoryDump {
        fingerprint: cfg.fingerprint(),
        seed,
        truth: nested(&episode.states),
        observations: nested(&episode.observations),
        smoothed: nested(&track.smoothed),
        alignment: track.alignment,
        assignments: track.assignments.iter().map(|p| p.as_slice().to_vec()).collect(),
        true_assignments: episode.true_perms.iter().map(|p| p.as_slice().to_vec()).collect(),
        accuracy: track.accuracy,
        rmse: track.rmse,
        hungarian_rmse: hr.rmse,
        hungarian_accuracy: hr.accuracy,
    };
    write_json(&cfg.out_dir.join(TRAJECTORY_FILE), &dump)?;
    Ok(dump)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub experiment: String,
    pub fingerprint: String,
    pub seed: u64,
    pub sigma_r: f64,
    pub sigma_f: f64,
    pub label_error: Option<f64>,
    pub ground_truth_accuracy: Option<f64>,
    pub hungarian_accuracy: Option<f64>,
    pub em_accuracy: Option<f64>,
    pub error: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummaryRow {
    pub experiment: String,
    pub fingerprint: String,
    pub sigma_r: f64,
    pub runs: usize,
    pub failures: usize,
    pub label_error_median: Option<f64>,
    pub ground_truth_accuracy_median: Option<f64>,
    pub hungarian_accuracy_median: Option<f64>,
    pub em_accuracy_median: Option<f64>,
}

fn run_detector_seed(cfg: &ExperimentConfig, fingerprint: &str, sigma_r: f64, seed: u64) -> DetectorRow {
    let start = Instant::now();
    let d = &cfg.detector;
    let mut row = DetectorRow {
        experiment: cfg.name.clone(),
        fingerprint: fingerprint.to_string(),
        seed,
        sigma_r,
        sigma_f: d.sigma_f,
        label_error: None,
        ground_truth_accuracy: None,
        hungarian_accuracy: None,
        em_accuracy: None,
        error: String::new(),
        seconds: 0.0,
    };
    let result = (|| -> Result<()> {
        let walk = cfg.model.walk(sigma_r);
        let params = walk.model_params()?;
        let episode = generate_feature_conditioned(&walk, &d.features(), seed)?;
        let (train, test) = episode.split(d.train_fraction);
        let train = std::slice::from_ref(&train);
        let sc = d.supervised(seed, &cfg.train);
        let accuracy = |net: &NetworkParams| -> Result<f64> {
            let labels = detector_labels(net, &test, &sc)?;
            Ok(label_accuracy(&labels, &test.true_perms)?)
        };

        let gt = ground_truth_supervised_train(train, &sc)?;
        row.ground_truth_accuracy = Some(accuracy(&gt)?);
        let hung = hungarian_supervised_train(train, &params, &sc)?;
        row.label_error = Some(hung.label_error);
        row.hungarian_accuracy = Some(accuracy(&hung.params)?);

        let gamma = if d.em_graduation { cfg.train.default_graduation_rate() } else { 1.0 };
        let mut tc = cfg.train.build(d.em_learning_rate, gamma, seed, InputMode::Contextual);
        tc.optimizer = d.em_optimizer.build();
        let (em, _) = timed_train(train, &params, &tc)?;
        row.em_accuracy = Some(accuracy(&em)?);
        Ok(())
    })();
    if let Err(e) = result {
        warn!("detector seed={seed} sigma_r={sigma_r} failed: {e:#}");
        row.error = format!("{e:#}");
    }
    row.seconds = start.elapsed().as_secs_f64();
    info!(
        "detector seed={seed} sigma_r={sigma_r} gt={:?} hungarian={:?} em={:?} label_error={:?}",
        row.ground_truth_accuracy, row.hungarian_accuracy, row.em_accuracy, row.label_error
    );
    row
}

pub fn summarize_detector(rows: &[DetectorRow]) -> Vec<DetectorSummaryRow> {
    let mut levels: Vec<f64> = Vec::new();
    for r in rows {
        if !levels.contains(&r.sigma_r) {
            levels.push(r.sigma_r);
        }
    }
    levels
        .into_iter()
        .map(|sigma_r| {
            let group: Vec<&DetectorRow> = rows.iter().filter(|r| r.sigma_r == sigma_r).collect();
            let med = |f: fn(&DetectorRow) -> Option<f64>| {
                spread(&group.iter().filter_map(|r| f(r)).collect::<Vec<_>>()).map(|s| s.median)
            };
            DetectorSummaryRow {
                experiment: group[0].experiment.clone(),
                fingerprint: group[0].fingerprint.clone(),
                sigma_r,
                runs: group.len(),
                failures: group.iter().filter(|r| !r.error.is_empty()).count(),
                label_error_median: med(|r| r.label_error),
                ground_truth_accuracy_median: med(|r| r.ground_truth_accuracy),
                hungarian_accuracy_median: med(|r| r.hungarian_accuracy),
                em_accuracy_median: med(|r| r.em_accuracy),
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct DetectorOutcome {
    pub rows: Vec<DetectorRow>,
    pub summary: Vec<DetectorSummaryRow>,
}

impl DetectorOutcome {
    pub fn failed_entirely(&self) -> bool {
        self.rows.iter().all(|r| !r.error.is_empty())
    }
}

/// Ground-truth-supervised, Hungarian-supervised and EM-trained detectors
/// on feature-conditioned traces, one row per `(σ_r, seed)`. Each trace is
/// split by time; the leading part trains, the rest is held out.
pub fn run_detector_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<DetectorOutcome> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint();
    let grid: Vec<(f64, u64)> =
        cfg.sigma_r.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let rows: Vec<DetectorRow> =
        run_pool(jobs, || grid.par_iter().map(|&(s, seed)| run_detector_seed(cfg, &fingerprint, s, seed)).collect())?;
    let summary = summarize_detector(&rows);
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(DETECTOR_FILE), &rows)?;
    write_csv(&cfg.out_dir.join(DETECTOR_SUMMARY_FILE), &summary)?;
    Ok(DetectorOutcome { rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub fingerprint: String,
    pub seed: u64,
    pub accuracy: f64,
    pub rmse: f64,
    pub hard_nll: f64,
}

/// Runs a saved network on an episode file, or on a freshly generated
/// episode for the first configured seed.
pub fn eval_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, episode: Option<&Path>) -> Result<CheckpointEval> {
    let ck: Checkpoint = crate::io::read_json(checkpoint)?;
    let net = ck.network()?;
    let mode = ck.input_mode()?;
    let episode = match episode {
        Some(p) => crate::io::load_episode(p)?,
        None => {
            let walk = cfg.model.walk(cfg.model.sigma_r);
            if mode == InputMode::Positional {
                generate_random_walk(&walk, cfg.seeds[0])?
            } else {
                generate_feature_conditioned(&walk, &cfg.detector.features(), cfg.seeds[0])?
            }
        }
    };
    let params = ModelParams::random_walk(episode.objects(), episode.dim(), cfg.model.sigma_q, cfg.model.sigma_r)?;
    let tc = TrainConfig { input_mode: mode, sinkhorn: ck.sinkhorn(), ..TrainConfig::default() };
    let track = neural_track(&episode, &params, &net, &tc)?;
    let result = CheckpointEval {
        fingerprint: cfg.fingerprint(),
        seed: episode.seed,
        accuracy: track.accuracy,
        rmse: track.rmse,
        hard_nll: hard_nll(std::slice::from_ref(&episode), &params, &net, mode, ck.sinkhorn())?,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(EVAL_FILE), std::slice::from_ref(&result))?;
    Ok(result)
}
