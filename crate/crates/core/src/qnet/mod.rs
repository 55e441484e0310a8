//! Next-goal Q-function approximator: one LSTM layer over a dynamic-length
//! window, two relu dense layers and a three-way softmax (Home, Away, Neither).

mod checkpoint;
mod gradcheck;
mod net;

pub use checkpoint::{load_checkpoint, load_checkpoint_with_vocab, save_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use net::{backward, forward, softmax, ForwardCache, Scalar, Weights, TENSOR_NAMES};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event_model::{FeatureScaler, Terminal, Vocabulary};
use crate::ingestion::{Sequence, MAX_TRACE};
use net::{head, LstmState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub lstm_hidden: usize,
    pub dense_widths: [usize; 2],
    pub max_trace: usize,
}

impl NetworkConfig {
    /// Full-size widths: 1000 units in every hidden layer.
    pub fn reference_scale(input_width: usize) -> Self {
        NetworkConfig {
            input_width,
            lstm_hidden: 1000,
            dense_widths: [1000, 1000],
            max_trace: MAX_TRACE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.lstm_hidden == 0 || self.dense_widths.contains(&0) {
            return Err(Error::Invalid(format!("network widths must be >= 1: {self:?}")));
        }
        if self.max_trace == 0 || self.max_trace > MAX_TRACE {
            return Err(Error::Invalid(format!(
                "max_trace must be in 1..={MAX_TRACE}, got {}",
                self.max_trace
            )));
        }
        Ok(())
    }

    pub fn tensor_sizes(&self) -> [usize; 8] {
        let (i, h) = (self.input_width, self.lstm_hidden);
        let [d1, d2] = self.dense_widths;
        [4 * h * (i + h), 4 * h, d1 * h, d1, d2 * d1, d2, 3 * d2, 3]
    }

    pub fn n_params(&self) -> usize {
        self.tensor_sizes().iter().sum()
    }
}

/// Normalized next-goal probabilities `(home, away, neither)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QOutput(pub [f64; 3]);

impl QOutput {
    pub const UNIFORM: QOutput = QOutput([1.0 / 3.0; 3]);

    pub fn home(&self) -> f64 {
        self.0[0]
    }

    pub fn away(&self) -> f64 {
        self.0[1]
    }

    pub fn neither(&self) -> f64 {
        self.0[2]
    }

    pub fn get(&self, t: Terminal) -> f64 {
        self.0[t.index()]
    }
}

/// Trained weights together with the scaler and vocabulary that produced their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub vocab: Vocabulary,
    pub scaler: FeatureScaler,
    pub weights: Weights<f32>,
}

fn uniform_fill(rng: &mut ChaCha8Rng, v: &mut [f32], fan_in: usize) {
    let lim = 1.0 / (fan_in as f64).sqrt();
    for x in v.iter_mut() {
        *x = rng.random_range(-lim..lim) as f32;
    }
}

/// Fan-in scaled uniform weights, zero biases except the forget gate (1).
pub fn init_params(
    config: NetworkConfig,
    vocab: Vocabulary,
    scaler: FeatureScaler,
    seed: u64,
) -> Result<NetworkParams> {
    config.validate()?;
    if config.input_width != vocab.encoded_width() {
        return Err(Error::Invalid(format!(
            "input width {} does not match vocabulary encoding width {}",
            config.input_width,
            vocab.encoded_width()
        )));
    }
    Ok(NetworkParams {
        config,
        vocab,
        scaler,
        weights: init_weights(&config, seed),
    })
}

/// Weight initialization without a vocabulary binding (used for synthetic shapes).
pub fn init_weights(config: &NetworkConfig, seed: u64) -> Weights<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::<f32>::zeros(config);
    let (i, h) = (config.input_width, config.lstm_hidden);
    let [d1, d2] = config.dense_widths;
    uniform_fill(&mut rng, &mut w.lstm_w, i + h);
    uniform_fill(&mut rng, &mut w.dense1_w, h);
    uniform_fill(&mut rng, &mut w.dense2_w, d1);
    uniform_fill(&mut rng, &mut w.out_w, d2);
    w.lstm_b[h..2 * h].fill(1.0);
    w
}

pub(crate) fn check_window(config: &NetworkConfig, len: usize) -> Result<()> {
    if len == 0 || len % config.input_width != 0 {
        return Err(Error::Invalid(format!(
            "window of {len} values is not a whole number of {}-wide steps",
            config.input_width
        )));
    }
    let steps = len / config.input_width;
    if steps > config.max_trace {
        return Err(Error::Invalid(format!(
            "window of {steps} steps exceeds max_trace {}",
            config.max_trace
        )));
    }
    Ok(())
}

fn to_output<T: Scalar>(q: [T; 3]) -> QOutput {
    QOutput([
        q[0].to_f64().unwrap(),
        q[1].to_f64().unwrap(),
        q[2].to_f64().unwrap(),
    ])
}

/// Shape-checked forward pass for arbitrary float type.
pub fn forward_checked<T: Scalar>(
    weights: &Weights<T>,
    config: &NetworkConfig,
    window: &[T],
    cache: &mut ForwardCache<T>,
) -> Result<QOutput> {
    check_window(config, window.len())?;
    Ok(to_output(forward(weights, config, window, cache)))
}

impl NetworkParams {
    pub fn forward(&self, window: &[f32]) -> Result<QOutput> {
        let mut cache = ForwardCache::default();
        forward_checked(&self.weights, &self.config, window, &mut cache)
    }

    pub fn forward_cached(&self, window: &[f32], cache: &mut ForwardCache<f32>) -> Result<QOutput> {
        forward_checked(&self.weights, &self.config, window, cache)
    }

    /// Gradient of `sum_k upstream[k] * Q_k(window)` with respect to every weight.
    pub fn backward(&self, window: &[f32], upstream: &[f32; 3]) -> Result<Weights<f32>> {
        let mut cache = ForwardCache::default();
        forward_checked(&self.weights, &self.config, window, &mut cache)?;
        let mut grad = Weights::zeros(&self.config);
        backward(&self.weights, &self.config, &cache, upstream, &mut grad);
        Ok(grad)
    }

    /// Q for every step of an episode, each from its own trace window.
    ///
    /// Consecutive windows inside one play share a prefix, so the LSTM state is
    /// carried forward instead of replaying the window; results are bitwise
    /// identical to calling [`NetworkParams::forward`] per step.
    pub fn predict_sequence(&self, seq: &Sequence) -> Result<Vec<QOutput>> {
        if seq.width != self.config.input_width {
            return Err(Error::Invalid(format!(
                "sequence width {} does not match network input width {}",
                seq.width, self.config.input_width
            )));
        }
        let cfg = &self.config;
        let mut state = LstmState::<f32>::new(cfg);
        let (mut a1, mut a2) = (Vec::new(), Vec::new());
        let mut prev_tl = 0usize;
        let mut out = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            let tl = seq.trace_length(t, cfg.max_trace);
            if t > 0 && tl == prev_tl + 1 {
                state.step(&self.weights, cfg, seq.step(t));
            } else {
                state.reset();
                for s in t + 1 - tl..=t {
                    state.step(&self.weights, cfg, seq.step(s));
                }
            }
            prev_tl = tl;
            out.push(to_output(head(&self.weights, cfg, &state.h, &mut a1, &mut a2)));
        }
        Ok(out)
    }
}
