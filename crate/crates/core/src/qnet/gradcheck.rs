use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{backward, forward, ForwardCache, Weights, TENSOR_NAMES};
use super::{init_weights, NetworkConfig};
use crate::error::Result;

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub trace_length: usize,
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares [`backward`] against central finite differences for a randomly
/// initialized network of this shape, on a random window of `config.max_trace`
/// steps and random upstream weights on the three outputs. Runs in `f64`.
pub fn grad_check(config: &NetworkConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut w: Weights<f64> = init_weights(config, seed).cast();
    // non-zero biases so every code path carries signal
    for b in [&mut w.lstm_b, &mut w.dense1_b, &mut w.dense2_b, &mut w.out_b] {
        for v in b.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let steps = config.max_trace;
    let window: Vec<f64> = (0..steps * config.input_width)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let upstream: [f64; 3] = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];

    let mut cache = ForwardCache::default();
    forward(&w, config, &window, &mut cache);
    let mut grad = Weights::zeros(config);
    backward(&w, config, &cache, &upstream, &mut grad);

    let objective = |w: &Weights<f64>, cache: &mut ForwardCache<f64>| {
        let q = forward(w, config, &window, cache);
        upstream[0] * q[0] + upstream[1] * q[1] + upstream[2] * q[2]
    };

    let mut report = GradCheckReport {
        n_params: w.n_params(),
        trace_length: steps,
        max_rel_error: 0.0,
        worst_tensor: TENSOR_NAMES[0],
        worst_index: 0,
        tolerance,
        passed: true,
    };
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        for idx in 0..analytic[ti].len() {
            let orig = w.tensors()[ti][idx];
            w.tensors_mut()[ti][idx] = orig + FD_EPSILON;
            let up = objective(&w, &mut cache);
            w.tensors_mut()[ti][idx] = orig - FD_EPSILON;
            let down = objective(&w, &mut cache);
            w.tensors_mut()[ti][idx] = orig;
            let numeric = (up - down) / (2.0 * FD_EPSILON);
            let a = analytic[ti][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_tensor = name;
                report.worst_index = idx;
            }
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::MAX_TRACE;

    fn cfg(hidden: usize, tl: usize) -> NetworkConfig {
        NetworkConfig {
            input_width: 6,
            lstm_hidden: hidden,
            dense_widths: [8, 8],
            max_trace: tl,
        }
    }

    #[test]
    fn single_step() {
        let r = grad_check(&cfg(8, 1), 1, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn full_trace_exercises_bptt() {
        let r = grad_check(&cfg(8, MAX_TRACE), 2, 1e-4).unwrap();
        assert!(r.n_params <= 2000);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn infinite_tolerance_always_passes() {
        assert!(grad_check(&cfg(3, 4), 3, f64::INFINITY).unwrap().passed);
    }
}
