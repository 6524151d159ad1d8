//! On-disk formats: episodes and checkpoints as JSON, training traces and
//! results as CSV. Matrices are stored as shapes plus flat row-major arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use neuralda_core::model::{Episode, Permutation};
use neuralda_core::network::{DenseLayer, InputMode, NetworkParams};
use neuralda_core::sinkhorn::SinkhornConfig;
use neuralda_core::tensor::Tensor;
use neuralda_core::trainer::TrainReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(data: &[f64], count: usize, rows: usize, cols: usize, what: &str) -> Result<Vec<Tensor>> {
    ensure!(data.len() == count * rows * cols, "{what}: expected {} values, found {}", count * rows * cols, data.len());
    Ok(data.chunks(rows * cols).map(|c| Tensor::from_vec(rows, cols, c.to_vec()).expect("chunk sized")).collect())
}

/// `states` and `observations` are `steps x objects x dim`, `context`
/// is `steps x objects x context_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFile {
    pub seed: u64,
    pub steps: usize,
    pub objects: usize,
    pub dim: usize,
    pub context_dim: Option<usize>,
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
    pub true_perms: Vec<Vec<usize>>,
    pub context: Option<Vec<f64>>,
}

impl EpisodeFile {
    pub fn from_episode(e: &Episode) -> Self {
        Self {
            seed: e.seed,
            steps: e.steps(),
            objects: e.objects(),
            dim: e.dim(),
            context_dim: e.context_dim(),
            states: flatten(&e.states),
            observations: flatten(&e.observations),
            true_perms: e.true_perms.iter().map(|p| p.as_slice().to_vec()).collect(),
            context: e.context.as_deref().map(flatten),
        }
    }

    pub fn into_episode(self) -> Result<Episode> {
        let (k, n, d) = (self.steps, self.objects, self.dim);
        let context = match (self.context, self.context_dim) {
            (Some(c), Some(cd)) => Some(unflatten(&c, k, n, cd, "context")?),
            (None, None) => None,
            _ => bail!("context and context_dim must be given together"),
        };
        let episode = Episode {
            states: unflatten(&self.states, k, n, d, "states")?,
            observations: unflatten(&self.observations, k, n, d, "observations")?,
            true_perms: self.true_perms.into_iter().map(Permutation::new).collect::<Result<_, _>>()?,
            context,
            seed: self.seed,
        };
        episode.validate()?;
        Ok(episode)
    }
}

pub fn save_episode(path: &Path, e: &Episode) -> Result<()> {
    write_json(path, &EpisodeFile::from_episode(e))
}

pub fn load_episode(path: &Path) -> Result<Episode> {
    read_json::<EpisodeFile>(path)?.into_episode()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// A trained network with everything needed to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub input_mode: String,
    pub objects: usize,
    pub dim: usize,
    pub context_dim: Option<usize>,
    pub temperature: f64,
    pub sinkhorn_iterations: usize,
    pub layers: Vec<LayerFile>,
}

impl Checkpoint {
    pub fn new(
        net: &NetworkParams,
        mode: InputMode,
        dim: usize,
        context_dim: Option<usize>,
        sinkhorn: SinkhornConfig,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            input_mode: mode.as_str().to_string(),
            objects: net.outputs(),
            dim,
            context_dim,
            temperature: sinkhorn.temperature,
            sinkhorn_iterations: sinkhorn.iterations,
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    fan_in: l.weight.rows(),
                    fan_out: l.weight.cols(),
                    weight: l.weight.data().to_vec(),
                    bias: l.bias.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn input_mode(&self) -> Result<InputMode> {
        InputMode::parse(&self.input_mode).with_context(|| format!("unknown input mode {:?}", self.input_mode))
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { temperature: self.temperature, iterations: self.sinkhorn_iterations }
    }

    pub fn network(&self) -> Result<NetworkParams> {
        ensure!(self.version == CHECKPOINT_VERSION, "unsupported checkpoint version {}", self.version);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    weight: Tensor::from_vec(l.fan_in, l.fan_out, l.weight.clone())?,
                    bias: Tensor::from_vec(1, l.fan_out, l.bias.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = NetworkParams::from_layers(layers)?;
        ensure!(net.outputs() == self.objects, "output width {} != objects {}", net.outputs(), self.objects);
        let expected = self.input_mode()?.input_dim(self.dim, self.context_dim)?;
        ensure!(net.input_dim() == expected, "input width {} != {expected}", net.input_dim());
        Ok(net)
    }
}

pub fn write_train_report(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "nll", "q_scale", "grad_norm", "seconds"])?;
    for i in 0..report.iterations() {
        w.write_record([
            i.to_string(),
            report.nll[i].to_string(),
            report.q_scale[i].to_string(),
            report.grad_norm[i].to_string(),
            report.seconds[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `rows` with headers taken from the struct field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
