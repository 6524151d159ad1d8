//! Assignment-prediction network.
//!
//! A small MLP is applied independently to each observation slot and its
//! log-softmax output rows are stacked into the square score matrix that
//! feeds Sinkhorn. Row `j`, column `i` is the log-probability that slot `j`
//! belongs to track `i`. Because the encoder is shared across slots,
//! permuting the input rows permutes the score rows identically.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Gradients, Tape, Var};
use crate::datagen::stream_rng;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Hidden widths used unless configured otherwise.
pub const DEFAULT_HIDDEN: [usize; 2] = [8, 8];

/// What each slot's input row is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMode {
    /// The measurement itself (`d` values).
    Positional,
    /// The slot's context feature vector (`c` values).
    Contextual,
    /// Measurement followed by context (`d + c` values).
    Both,
}

impl InputMode {
    pub fn input_dim(self, dim: usize, context_dim: Option<usize>) -> Result<usize> {
        match (self, context_dim) {
            (InputMode::Positional, _) => Ok(dim),
            (InputMode::Contextual, Some(c)) => Ok(c),
            (InputMode::Both, Some(c)) => Ok(dim + c),
            (_, None) => Err(Error::MissingContext),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Positional => "positional",
            InputMode::Contextual => "contextual",
            InputMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "positional" => Some(InputMode::Positional),
            "contextual" => Some(InputMode::Contextual),
            "both" => Some(InputMode::Both),
            _ => None,
        }
    }
}

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Every weight and bias drawn from `N(0, 1)`.
    PaperLiteral,
    /// Weights from `N(0, 1/fan_in)`, zero biases.
    #[default]
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `fan_in x fan_out`.
    pub weight: Tensor,
    /// `1 x fan_out`.
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<DenseLayer>,
}

impl NetworkParams {
    /// `input_dim → hidden… → outputs` with ReLU between layers.
    pub fn init(input_dim: usize, hidden: &[usize], outputs: usize, seed: u64, scheme: InitScheme) -> Result<Self> {
        if input_dim == 0 || outputs == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let w_scale = match scheme {
                    InitScheme::PaperLiteral => 1.0,
                    InitScheme::Scaled => 1.0 / math::sqrt(fan_in as f64),
                };
                let weight: Vec<f64> =
                    (0..fan_in * fan_out).map(|_| w_scale * rng.sample::<f64, _>(StandardNormal)).collect();
                let bias: Vec<f64> = match scheme {
                    InitScheme::PaperLiteral => (0..fan_out).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                    InitScheme::Scaled => alloc::vec![0.0; fan_out],
                };
                DenseLayer {
                    weight: Tensor::from_vec(fan_in, fan_out, weight).expect("sized"),
                    bias: Tensor::from_vec(1, fan_out, bias).expect("sized"),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Validates that layer shapes chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::InvalidConfig(alloc::format!("layer {i}: bias shape")));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::InvalidConfig(alloc::format!(
                    "layer {i}: input width does not match previous output"
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.weight.cols()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.data().len()).sum()
    }

    /// Weights and biases in layer order: `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn on_tape(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            layers: self.layers.iter().map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone()))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Network parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    layers: Vec<(Var, Var)>,
}

impl ParamVars {
    /// `(weight, bias)` pairs already on a tape, in layer order.
    pub fn from_vars(layers: Vec<(Var, Var)>) -> Self {
        Self { layers }
    }

    fn outputs(&self, tape: &Tape) -> usize {
        let (_, b) = self.layers[self.layers.len() - 1];
        tape.value(b).cols()
    }

    /// Gradients in the order of [`NetworkParams::tensors`].
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.layers.iter().flat_map(|(w, b)| [grads.get(*w), grads.get(*b)]).collect()
    }
}

/// Log-softmax network output for every input row.
pub fn log_probs(tape: &mut Tape, params: &ParamVars, inputs: &Tensor) -> Result<Var> {
    let mut h = tape.constant(inputs.clone());
    let last = params.layers.len() - 1;
    for (i, (w, b)) in params.layers.iter().enumerate() {
        let lin = tape.matmul(h, *w)?;
        let lin = tape.add_row(lin, *b)?;
        h = if i < last { tape.relu(lin) } else { lin };
    }
    let lse = tape.logsumexp_rows(h)?;
    tape.sub_col(h, lse)
}

/// Square score matrix: one log-softmax row per observation slot.
pub fn predict_scores(tape: &mut Tape, params: &ParamVars, inputs: &Tensor) -> Result<Var> {
    let outputs = params.outputs(tape);
    if inputs.rows() != outputs {
        return Err(Error::ShapeMismatch { op: "predict_scores", left: inputs.shape(), right: (outputs, outputs) });
    }
    log_probs(tape, params, inputs)
}

/// Forward-only [`predict_scores`].
pub fn scores_matrix(params: &NetworkParams, inputs: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let vars = params.on_tape(&mut tape);
    let x = predict_scores(&mut tape, &vars, inputs)?;
    Ok(tape.value(x).clone())
}

/// Builds the per-slot input rows for one step.
pub fn make_inputs(z: &Tensor, context: Option<&Tensor>, mode: InputMode) -> Result<Tensor> {
    match mode {
        InputMode::Positional => Ok(z.clone()),
        InputMode::Contextual => {
            let c = context.ok_or(Error::MissingContext)?;
            if c.rows() != z.rows() {
                return Err(Error::ShapeMismatch { op: "make_inputs", left: z.shape(), right: c.shape() });
            }
            Ok(c.clone())
        }
        InputMode::Both => z.hcat(context.ok_or(Error::MissingContext)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_scheme_zero_biases_and_determinism() {
        let a = NetworkParams::init(3, &DEFAULT_HIDDEN, 4, 11, InitScheme::Scaled).unwrap();
        for l in &a.layers {
            assert!(l.bias.data().iter().all(|b| *b == 0.0));
        }
        let b = NetworkParams::init(3, &DEFAULT_HIDDEN, 4, 11, InitScheme::Scaled).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameter_count(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn log_softmax_rows_normalized() {
        let p = NetworkParams::init(2, &DEFAULT_HIDDEN, 3, 5, InitScheme::PaperLiteral).unwrap();
        let x = Tensor::from_rows(&[[0.1, -2.0], [1.0, 0.5], [3.0, 3.0]]);
        let s = scores_matrix(&p, &x).unwrap();
        for r in 0..3 {
            let total: f64 = s.row(r).iter().map(|v| libm::exp(*v)).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_rows_identical_scores() {
        let p = NetworkParams::init(2, &DEFAULT_HIDDEN, 2, 6, InitScheme::Scaled).unwrap();
        let x = Tensor::from_rows(&[[0.3, 0.7], [0.3, 0.7]]);
        let s = scores_matrix(&p, &x).unwrap();
        assert_eq!(s.row(0), s.row(1));
    }

    #[test]
    fn input_modes() {
        let z = Tensor::zeros(4, 2);
        let c = Tensor::zeros(4, 8);
        assert_eq!(make_inputs(&z, None, InputMode::Positional).unwrap().cols(), 2);
        assert_eq!(make_inputs(&z, Some(&c), InputMode::Contextual).unwrap().cols(), 8);
        assert_eq!(make_inputs(&z, Some(&c), InputMode::Both).unwrap().cols(), 10);
        assert_eq!(make_inputs(&z, None, InputMode::Contextual), Err(Error::MissingContext));
        assert_eq!(InputMode::Both.input_dim(2, Some(8)).unwrap(), 10);
    }

    #[test]
    fn wrong_row_count_rejected() {
        let p = NetworkParams::init(2, &DEFAULT_HIDDEN, 4, 1, InitScheme::Scaled).unwrap();
        assert!(scores_matrix(&p, &Tensor::zeros(3, 2)).is_err());
        assert!(scores_matrix(&p, &Tensor::zeros(4, 3)).is_err());
    }
}
