//! Command-line front end. Precedence is flags, then the config file, then
//! built-in defaults.

use std::path::PathBuf;

use crate::config::{ExperimentConfig, InitKind, OptimizerKind};
use crate::experiments;
use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "neuralda", version, about = "Unsupervised neural data association experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learning-rate x graduation-rate x noise sweep against the Hungarian tracker.
    Sweep(Common),
    /// Train once and dump the trajectories for plotting.
    Demo(Common),
    /// Compare supervised, Hungarian-supervised and EM-trained detectors.
    Detector(Common),
    /// Run a saved network on an episode.
    EvalCheckpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode JSON; generated from the first seed when absent.
        #[arg(long)]
        episode: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the single seed given instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds `0..n`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma_q: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    sigma_r_list: Option<Vec<f64>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    graduation_rates: Option<Vec<f64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    subsequence_len: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    sinkhorn_iterations: Option<usize>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitKind>,
    #[arg(long)]
    q_min_scale: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    sigma_f: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer {s:?}, expected sgd or adam")),
    }
}

fn parse_init(s: &str) -> Result<InitKind, String> {
    match s {
        "paper_literal" | "unit" => Ok(InitKind::PaperLiteral),
        "scaled" => Ok(InitKind::Scaled),
        _ => Err(format!("unknown init {s:?}, expected unit or scaled")),
    }
}

impl Common {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            out => c.out_dir,
            objects => c.model.objects,
            dim => c.model.dim,
            steps => c.model.steps,
            sigma_q => c.model.sigma_q,
            sigma_r => c.model.sigma_r,
            sigma_r_list => c.sigma_r,
            learning_rate => c.train.learning_rate,
            learning_rates => c.learning_rates,
            graduation_rates => c.graduation_rates,
            iterations => c.train.iterations,
            batch_size => c.train.batch_size,
            subsequence_len => c.train.subsequence_len,
            temperature => c.train.temperature,
            sinkhorn_iterations => c.train.sinkhorn_iterations,
            optimizer => c.train.optimizer,
            init => c.train.init,
            q_min_scale => c.train.q_min_scale,
            restarts => c.train.restarts,
            sigma_f => c.detector.sigma_f,
            feature_dim => c.detector.feature_dim,
        }
        if let Some(n) = self.seeds {
            c.seeds = (0..n).collect();
        }
        if let Some(s) = self.seed {
            c.seeds = vec![s];
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sweep(common) => {
            let cfg = common.resolve()?;
            info!("sweep {} ({})", cfg.name, cfg.fingerprint());
            let out = experiments::run_sweep(&cfg, common.jobs)?;
            for s in &out.summary {
                println!(
                    "sigma_r={} lr={} gamma={} runs={} failures={} neural_rmse={} hungarian_rmse={} neural_acc={}",
                    s.sigma_r,
                    s.learning_rate,
                    s.graduation_rate,
                    s.runs,
                    s.failures,
                    fmt(s.neural_rmse_median),
                    fmt(s.hungarian_rmse_median),
                    fmt(s.neural_accuracy_median),
                );
            }
            println!("wrote {} and {}", out.results_path.display(), out.summary_path.display());
            Ok(!out.failed_entirely())
        }
        Command::Demo(common) => {
            let cfg = common.resolve()?;
            let d = experiments::run_trajectory_demo(&cfg)?;
            println!(
                "seed={} accuracy={:.4} rmse={:.4} hungarian_accuracy={:.4} hungarian_rmse={:.4}",
                d.seed, d.accuracy, d.rmse, d.hungarian_accuracy, d.hungarian_rmse
            );
            println!("wrote {}", cfg.out_dir.join(experiments::TRAJECTORY_FILE).display());
            Ok(true)
        }
        Command::Detector(common) => {
            let cfg = common.resolve()?;
            let out = experiments::run_detector_experiment(&cfg, common.jobs)?;
            for s in &out.summary {
                println!(
                    "sigma_r={} runs={} failures={} label_error={} ground_truth={} hungarian={} em={}",
                    s.sigma_r,
                    s.runs,
                    s.failures,
                    fmt(s.label_error_median),
                    fmt(s.ground_truth_accuracy_median),
                    fmt(s.hungarian_accuracy_median),
                    fmt(s.em_accuracy_median),
                );
            }
            Ok(!out.failed_entirely())
        }
        Command::EvalCheckpoint { common, checkpoint, episode } => {
            let cfg = common.resolve()?;
            let r = experiments::eval_checkpoint(&cfg, &checkpoint, episode.as_deref())?;
            println!("seed={} accuracy={:.4} rmse={:.4} hard_nll={:.4}", r.seed, r.accuracy, r.rmse, r.hard_nll);
            Ok(true)
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}
