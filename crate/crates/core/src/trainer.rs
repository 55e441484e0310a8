//! On-policy Sarsa prediction of the next-goal Q-function.
//!
//! Every step of every episode yields one transition. The TD target is the
//! network's own output on the following window, or the episode's goal vector
//! on its last step. Targets are held constant while differentiating unless
//! `full_gradient` is set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::GoalVector;
use crate::ingestion::Sequence;
use crate::qnet::{backward, check_window, forward, ForwardCache, NetworkConfig, NetworkParams, Scalar, Weights};

/// Step `t` of sequence `sequence` paired with its successor in the same episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub sequence: usize,
    pub t: usize,
    /// Last step of its episode: no successor, target is the goal vector.
    pub terminal: bool,
}

impl Transition {
    pub fn window<'a>(&self, seqs: &'a [Sequence], max_trace: usize) -> &'a [f32] {
        seqs[self.sequence].window(self.t, max_trace)
    }

    pub fn next_window<'a>(&self, seqs: &'a [Sequence], max_trace: usize) -> Option<&'a [f32]> {
        (!self.terminal).then(|| seqs[self.sequence].window(self.t + 1, max_trace))
    }

    pub fn trace_length(&self, seqs: &[Sequence], max_trace: usize) -> usize {
        seqs[self.sequence].trace_length(self.t, max_trace)
    }

    pub fn goal(&self, seqs: &[Sequence]) -> GoalVector {
        seqs[self.sequence].goal(self.t)
    }
}

pub fn make_transitions(seqs: &[Sequence]) -> Vec<Transition> {
    let mut out = Vec::with_capacity(seqs.iter().map(Sequence::len).sum());
    for (i, s) in seqs.iter().enumerate() {
        for t in 0..s.len() {
            out.push(Transition {
                sequence: i,
                t,
                terminal: t + 1 == s.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// When set, the rate decays geometrically to this value at `max_steps`.
    pub final_learning_rate: Option<f64>,
    pub max_steps: u64,
    /// TD-error evaluation interval in steps; 0 disables evaluation.
    pub eval_every: u64,
    /// Transitions in the fixed evaluation subset (all when larger than the data).
    pub eval_size: usize,
    pub seed: u64,
    /// Cap on the L2 norm of the batch gradient; 0 disables clipping.
    pub gradient_clip: f64,
    pub optimizer: Optimizer,
    /// Differentiate through the TD target as well.
    pub full_gradient: bool,
    /// Stop after this many evaluations without improvement; 0 disables.
    pub patience: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 5e-4,
            final_learning_rate: Some(1e-5),
            max_steps: 60_000,
            eval_every: 1000,
            eval_size: 4096,
            seed: 0,
            gradient_clip: 10.0,
            optimizer: Optimizer::Adam,
            full_gradient: false,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let Some(f) = self.final_learning_rate {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Invalid(format!("final_learning_rate must be finite and positive, got {f}")));
            }
        }
        if !(self.gradient_clip >= 0.0) {
            return Err(Error::Invalid("gradient_clip must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate used for the update that follows `step` completed steps.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        match self.final_learning_rate {
            Some(f) if self.learning_rate > 0.0 && self.max_steps > 0 => {
                let frac = step.min(self.max_steps) as f64 / self.max_steps as f64;
                self.learning_rate * (f / self.learning_rate).powf(frac)
            }
            _ => self.learning_rate,
        }
    }
}

fn cast_window<T: Scalar>(w: &[f32], buf: &mut Vec<T>) {
    buf.clear();
    buf.extend(w.iter().map(|&v| T::from(v).unwrap()));
}

/// TD target: the goal vector on terminal steps, else Q of the successor window.
pub fn sarsa_target(params: &NetworkParams, seqs: &[Sequence], tr: &Transition) -> Result<[f64; 3]> {
    match tr.next_window(seqs, params.config.max_trace) {
        None => Ok(tr.goal(seqs).0),
        Some(next) => Ok(params.forward(next)?.0),
    }
}

/// Examples per partial gradient. The batch gradient is the in-order sum of
/// partials, so results do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// Mean batch loss and its gradient. Each example's loss is the squared error
/// summed over the three outputs.
pub fn batch_gradient<T: Scalar>(
    w: &Weights<T>,
    cfg: &NetworkConfig,
    seqs: &[Sequence],
    batch: &[Transition],
    full_gradient: bool,
) -> Result<(T, Weights<T>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inv_b = T::one() / T::from(batch.len()).unwrap();
    let two = T::one() + T::one();
    let partials: Vec<(T, Weights<T>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = Weights::zeros(cfg);
            let mut loss = T::zero();
            let mut cache = ForwardCache::default();
            let mut next_cache = ForwardCache::default();
            let mut buf = Vec::new();
            for tr in chunk {
                let target = match tr.next_window(seqs, cfg.max_trace) {
                    None => tr.goal(seqs).0.map(|v| T::from(v).unwrap()),
                    Some(next) => {
                        cast_window(next, &mut buf);
                        forward(w, cfg, &buf, &mut next_cache)
                    }
                };
                cast_window(tr.window(seqs, cfg.max_trace), &mut buf);
                let q = forward(w, cfg, &buf, &mut cache);
                let mut up = [T::zero(); 3];
                for k in 0..3 {
                    let d = q[k] - target[k];
                    loss = loss + d * d;
                    up[k] = two * d * inv_b;
                }
                backward(w, cfg, &cache, &up, &mut grad);
                if full_gradient && !tr.terminal {
                    backward(w, cfg, &next_cache, &up.map(|v| -v), &mut grad);
                }
            }
            (loss, grad)
        })
        .collect();
    let mut it = partials.into_iter();
    let (mut loss, mut grad) = it.next().unwrap();
    for (l, g) in it {
        loss = loss + l;
        grad.add_assign(&g);
    }
    Ok((loss * inv_b, grad))
}

/// Optimizer state for one set of weights.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    kind: Optimizer,
    step: u64,
    m: Option<Weights<T>>,
    v: Option<Weights<T>>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: Optimizer, cfg: &NetworkConfig) -> Self {
        let adam = kind == Optimizer::Adam;
        OptimizerState {
            kind,
            step: 0,
            m: adam.then(|| Weights::zeros(cfg)),
            v: adam.then(|| Weights::zeros(cfg)),
        }
    }

    fn apply(&mut self, w: &mut Weights<T>, grad: &Weights<T>, lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                let a = T::from(lr).unwrap();
                for (p, g) in w.tensors_mut().into_iter().zip(grad.tensors()) {
                    for (x, &d) in p.iter_mut().zip(g) {
                        *x = *x - a * d;
                    }
                }
            }
            Optimizer::Adam => {
                let (b1, b2) = (T::from(ADAM_B1).unwrap(), T::from(ADAM_B2).unwrap());
                let one = T::one();
                let n = self.step as i32;
                let a = T::from(lr * (1.0 - ADAM_B2.powi(n)).sqrt() / (1.0 - ADAM_B1.powi(n))).unwrap();
                let eps = T::from(ADAM_EPS).unwrap();
                let (m, v) = (self.m.as_mut().unwrap(), self.v.as_mut().unwrap());
                for (((p, g), mt), vt) in w
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                {
                    for i in 0..p.len() {
                        let d = g[i];
                        mt[i] = b1 * mt[i] + (one - b1) * d;
                        vt[i] = b2 * vt[i] + (one - b2) * d * d;
                        p[i] = p[i] - a * mt[i] / (vt[i].sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// One optimizer step on `batch`; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    w: &mut Weights<T>,
    cfg: &NetworkConfig,
    seqs: &[Sequence],
    batch: &[Transition],
    tcfg: &TrainConfig,
    opt: &mut OptimizerState<T>,
) -> Result<f64> {
    let (loss, mut grad) = batch_gradient(w, cfg, seqs, batch, tcfg.full_gradient)?;
    let loss = loss.to_f64().unwrap();
    if !loss.is_finite() {
        let tr = batch[0];
        return Err(Error::Numerical(format!(
            "non-finite loss {loss} (batch starting at sequence {} step {})",
            tr.sequence, tr.t
        )));
    }
    let norm = grad.l2_norm().to_f64().unwrap();
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient norm at loss {loss}")));
    }
    if tcfg.gradient_clip > 0.0 && norm > tcfg.gradient_clip {
        grad.scale(T::from(tcfg.gradient_clip / norm).unwrap());
    }
    if tcfg.learning_rate > 0.0 {
        opt.apply(w, &grad, tcfg.learning_rate);
    }
    Ok(loss)
}

/// Mean over `transitions` of the squared TD error summed over outputs.
pub fn td_error_eval(params: &NetworkParams, seqs: &[Sequence], transitions: &[Transition]) -> Result<f64> {
    if transitions.is_empty() {
        return Err(Error::Invalid("TD-error evaluation on an empty transition set".into()));
    }
    let cfg = &params.config;
    let per: Vec<f64> = transitions
        .par_iter()
        .map_init(ForwardCache::default, |cache, tr| {
            let target = match tr.next_window(seqs, cfg.max_trace) {
                None => tr.goal(seqs).0.map(|v| v as f32),
                Some(next) => forward(&params.weights, cfg, next, cache),
            };
            let q = forward(&params.weights, cfg, tr.window(seqs, cfg.max_trace), cache);
            (0..3).map(|k| ((q[k] - target[k]) as f64).powi(2)).sum()
        })
        .collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub batch_loss: f64,
    pub eval_td_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<LogRow>,
    pub stopped_early: bool,
}

/// Writes the training log as `step,batch_loss,eval_td_error`.
pub fn write_log<W: std::io::Write>(mut w: W, log: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "step,batch_loss,eval_td_error")?;
    for r in log {
        match r.eval_td_error {
            Some(e) => writeln!(w, "{},{},{}", r.step, r.batch_loss, e)?,
            None => writeln!(w, "{},{},", r.step, r.batch_loss)?,
        }
    }
    Ok(())
}

/// Stateful training loop over a fixed transition set.
pub struct Trainer<'a> {
    pub params: NetworkParams,
    pub config: TrainConfig,
    seqs: &'a [Sequence],
    transitions: Vec<Transition>,
    eval_set: Vec<Transition>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    opt: OptimizerState<f32>,
    pub step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(params: NetworkParams, seqs: &'a [Sequence], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        params.config.validate()?;
        let transitions = make_transitions(seqs);
        if transitions.is_empty() {
            return Err(Error::Degenerate("no transitions to train on".into()));
        }
        if let Some(s) = seqs.iter().find(|s| s.width != params.config.input_width) {
            return Err(Error::Invalid(format!(
                "sequence width {} does not match network input width {}",
                s.width, params.config.input_width
            )));
        }
        check_window(&params.config, params.config.input_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut eval_idx: Vec<usize> = (0..transitions.len()).collect();
        eval_idx.shuffle(&mut rng);
        eval_idx.truncate(config.eval_size.max(1));
        eval_idx.sort_unstable();
        let eval_set = eval_idx.iter().map(|&i| transitions[i]).collect();
        let opt = OptimizerState::new(config.optimizer, &params.config);
        let order = (0..transitions.len()).collect();
        Ok(Trainer {
            params,
            config,
            seqs,
            transitions,
            eval_set,
            order,
            cursor: usize::MAX,
            rng,
            opt,
            step: 0,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    fn next_batch(&mut self) -> Vec<Transition> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].iter().map(|&i| self.transitions[i]).collect();
        self.cursor = end;
        batch
    }

    /// One minibatch update; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let config = TrainConfig {
            learning_rate: self.config.learning_rate_at(self.step),
            ..self.config
        };
        let loss = train_step(
            &mut self.params.weights,
            &self.params.config,
            self.seqs,
            &batch,
            &config,
            &mut self.opt,
        )?;
        self.step += 1;
        Ok(loss)
    }

    pub fn evaluate(&self) -> Result<f64> {
        td_error_eval(&self.params, self.seqs, &self.eval_set)
    }

    /// Runs to `max_steps` or a plateau. `on_eval` sees the step, the current
    /// parameters and the evaluation TD error after each evaluation.
    pub fn run(mut self, mut on_eval: impl FnMut(u64, &NetworkParams, f64) -> Result<()>) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let mut best = f64::INFINITY;
        let mut stale = 0u32;
        let mut stopped_early = false;
        while self.step < self.config.max_steps {
            let loss = self.step()?;
            let mut row = LogRow {
                step: self.step,
                batch_loss: loss,
                eval_td_error: None,
            };
            let due = self.config.eval_every > 0 && self.step % self.config.eval_every == 0;
            if due || self.step == self.config.max_steps {
                let e = self.evaluate()?;
                row.eval_td_error = Some(e);
                on_eval(self.step, &self.params, e)?;
                if e < best {
                    best = e;
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            log.push(row);
            if self.config.patience > 0 && stale >= self.config.patience {
                stopped_early = true;
                break;
            }
        }
        Ok(TrainOutcome {
            params: self.params,
            log,
            stopped_early,
        })
    }
}

/// Trains `init` on `seqs`.
pub fn train(init: NetworkParams, seqs: &[Sequence], config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(init, seqs, *config)?.run(|_, _, _| Ok(()))
}
