//! Forward pass and reverse-mode gradients for the LSTM -> dense -> dense ->
//! softmax stack. Generic over the float type so the same code runs in `f32`
//! for training and in `f64` for finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use super::NetworkConfig;

pub trait Scalar: Float + Sum + Default + Debug + Send + Sync + 'static {}

impl<T: Float + Sum + Default + Debug + Send + Sync + 'static> Scalar for T {}

/// All trainable tensors, row-major.
///
/// The LSTM matrix has `4 * hidden` rows ordered input, forget, cell and
/// output gate, and `input_width + hidden` columns (`[x_t; h_{t-1}]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub lstm_w: Vec<T>,
    pub lstm_b: Vec<T>,
    pub dense1_w: Vec<T>,
    pub dense1_b: Vec<T>,
    pub dense2_w: Vec<T>,
    pub dense2_b: Vec<T>,
    pub out_w: Vec<T>,
    pub out_b: Vec<T>,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "lstm_w", "lstm_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b", "out_w", "out_b",
];

impl<T: Scalar> Weights<T> {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let s = cfg.tensor_sizes();
        Weights {
            lstm_w: vec![T::zero(); s[0]],
            lstm_b: vec![T::zero(); s[1]],
            dense1_w: vec![T::zero(); s[2]],
            dense1_b: vec![T::zero(); s[3]],
            dense2_w: vec![T::zero(); s[4]],
            dense2_b: vec![T::zero(); s[5]],
            out_w: vec![T::zero(); s[6]],
            out_b: vec![T::zero(); s[7]],
        }
    }

    pub fn tensors(&self) -> [&[T]; 8] {
        [
            &self.lstm_w,
            &self.lstm_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.lstm_w,
            &mut self.lstm_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    /// `self += other`, element by element in storage order.
    pub fn add_assign(&mut self, other: &Weights<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x * k;
            }
        }
    }

    pub fn l2_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect::<Vec<U>>();
        Weights {
            lstm_w: conv(&self.lstm_w),
            lstm_b: conv(&self.lstm_b),
            dense1_w: conv(&self.dense1_w),
            dense1_b: conv(&self.dense1_b),
            dense2_w: conv(&self.dense2_w),
            dense2_b: conv(&self.dense2_b),
            out_w: conv(&self.out_w),
            out_b: conv(&self.out_b),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out = W v + b` for a row-major `W` with `out.len()` rows.
#[inline]
fn affine<T: Scalar>(w: &[T], b: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for ((o, row), &bias) in out.iter_mut().zip(w.chunks_exact(cols)).zip(b) {
        *o = dot(row, v) + bias;
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn softmax<T: Scalar>(logits: &[T; 3]) -> [T; 3] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = [
        (logits[0] - m).exp(),
        (logits[1] - m).exp(),
        (logits[2] - m).exp(),
    ];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Activations retained by [`forward`] for [`backward`]. Reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    pub steps: usize,
    /// Per step `[x_t; h_{t-1}]`.
    xh: Vec<T>,
    /// Per step activated gates `[i, f, g, o]`.
    gates: Vec<T>,
    /// Per step cell state `c_t`.
    cells: Vec<T>,
    /// Per step `tanh(c_t)`.
    tanh_c: Vec<T>,
    h_last: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
    pub q: [T; 3],
}

/// Incremental LSTM state for sequential evaluation.
#[derive(Debug, Clone)]
pub(crate) struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    xh: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let h = cfg.lstm_hidden;
        LstmState {
            h: vec![T::zero(); h],
            c: vec![T::zero(); h],
            xh: vec![T::zero(); cfg.input_width + h],
            z: vec![T::zero(); 4 * h],
        }
    }

    pub fn reset(&mut self) {
        self.h.fill(T::zero());
        self.c.fill(T::zero());
    }

    /// Advances one step; matches the arithmetic of [`forward`] exactly.
    pub fn step(&mut self, w: &Weights<T>, cfg: &NetworkConfig, x: &[T]) {
        let (iw, hd) = (cfg.input_width, cfg.lstm_hidden);
        self.xh[..iw].copy_from_slice(x);
        self.xh[iw..].copy_from_slice(&self.h);
        affine(&w.lstm_w, &w.lstm_b, &self.xh, &mut self.z);
        for j in 0..hd {
            let i = sigmoid(self.z[j]);
            let f = sigmoid(self.z[hd + j]);
            let g = self.z[2 * hd + j].tanh();
            let o = sigmoid(self.z[3 * hd + j]);
            let c = f * self.c[j] + i * g;
            self.c[j] = c;
            self.h[j] = o * c.tanh();
        }
    }
}

/// Dense head on top of a final LSTM output.
pub(crate) fn head<T: Scalar>(w: &Weights<T>, cfg: &NetworkConfig, h: &[T], a1: &mut Vec<T>, a2: &mut Vec<T>) -> [T; 3] {
    let [d1, d2] = cfg.dense_widths;
    a1.resize(d1, T::zero());
    a2.resize(d2, T::zero());
    affine(&w.dense1_w, &w.dense1_b, h, a1);
    for v in a1.iter_mut() {
        *v = v.max(T::zero());
    }
    affine(&w.dense2_w, &w.dense2_b, a1, a2);
    for v in a2.iter_mut() {
        *v = v.max(T::zero());
    }
    let mut logits = [T::zero(); 3];
    affine(&w.out_w, &w.out_b, a2, &mut logits);
    softmax(&logits)
}

/// Runs the window (row-major, `steps x input_width`) from a zero state.
/// The caller validates shapes.
pub fn forward<T: Scalar>(w: &Weights<T>, cfg: &NetworkConfig, window: &[T], cache: &mut ForwardCache<T>) -> [T; 3] {
    let (iw, hd) = (cfg.input_width, cfg.lstm_hidden);
    let steps = window.len() / iw;
    let xw = iw + hd;
    cache.steps = steps;
    cache.xh.resize(steps * xw, T::zero());
    cache.gates.resize(steps * 4 * hd, T::zero());
    cache.cells.resize(steps * hd, T::zero());
    cache.tanh_c.resize(steps * hd, T::zero());
    cache.h_last.resize(hd, T::zero());

    let mut z = vec![T::zero(); 4 * hd];
    for t in 0..steps {
        let xh = &mut cache.xh[t * xw..(t + 1) * xw];
        xh[..iw].copy_from_slice(&window[t * iw..(t + 1) * iw]);
        if t == 0 {
            xh[iw..].fill(T::zero());
        } else {
            let (prev_tc, prev_g) = (
                &cache.tanh_c[(t - 1) * hd..t * hd],
                &cache.gates[(t - 1) * 4 * hd..t * 4 * hd],
            );
            for j in 0..hd {
                xh[iw + j] = prev_g[3 * hd + j] * prev_tc[j];
            }
        }
        affine(&w.lstm_w, &w.lstm_b, xh, &mut z);
        let gates = &mut cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
        for j in 0..hd {
            gates[j] = sigmoid(z[j]);
            gates[hd + j] = sigmoid(z[hd + j]);
            gates[2 * hd + j] = z[2 * hd + j].tanh();
            gates[3 * hd + j] = sigmoid(z[3 * hd + j]);
        }
        for j in 0..hd {
            let c_prev = if t == 0 { T::zero() } else { cache.cells[(t - 1) * hd + j] };
            let c = gates[hd + j] * c_prev + gates[j] * gates[2 * hd + j];
            cache.cells[t * hd + j] = c;
            cache.tanh_c[t * hd + j] = c.tanh();
        }
    }
    let last = steps - 1;
    for j in 0..hd {
        cache.h_last[j] = cache.gates[last * 4 * hd + 3 * hd + j] * cache.tanh_c[last * hd + j];
    }
    let h_last = std::mem::take(&mut cache.h_last);
    let q = head(w, cfg, &h_last, &mut cache.a1, &mut cache.a2);
    cache.h_last = h_last;
    cache.q = q;
    q
}

/// Accumulates into `grad` the gradient of `sum_k upstream[k] * q_k` for the
/// window cached by the last [`forward`] call.
pub fn backward<T: Scalar>(
    w: &Weights<T>,
    cfg: &NetworkConfig,
    cache: &ForwardCache<T>,
    upstream: &[T; 3],
    grad: &mut Weights<T>,
) {
    let (iw, hd) = (cfg.input_width, cfg.lstm_hidden);
    let [d1, d2] = cfg.dense_widths;
    let xw = iw + hd;
    let q = cache.q;

    // softmax Jacobian
    let s = upstream[0] * q[0] + upstream[1] * q[1] + upstream[2] * q[2];
    let dlogit = [
        q[0] * (upstream[0] - s),
        q[1] * (upstream[1] - s),
        q[2] * (upstream[2] - s),
    ];

    let mut da2 = vec![T::zero(); d2];
    for k in 0..3 {
        axpy(dlogit[k], &cache.a2, &mut grad.out_w[k * d2..(k + 1) * d2]);
        grad.out_b[k] = grad.out_b[k] + dlogit[k];
        axpy(dlogit[k], &w.out_w[k * d2..(k + 1) * d2], &mut da2);
    }

    let mut da1 = vec![T::zero(); d1];
    for r in 0..d2 {
        if cache.a2[r] > T::zero() {
            let du = da2[r];
            axpy(du, &cache.a1, &mut grad.dense2_w[r * d1..(r + 1) * d1]);
            grad.dense2_b[r] = grad.dense2_b[r] + du;
            axpy(du, &w.dense2_w[r * d1..(r + 1) * d1], &mut da1);
        }
    }

    let mut dh = vec![T::zero(); hd];
    for r in 0..d1 {
        if cache.a1[r] > T::zero() {
            let du = da1[r];
            axpy(du, &cache.h_last, &mut grad.dense1_w[r * hd..(r + 1) * hd]);
            grad.dense1_b[r] = grad.dense1_b[r] + du;
            axpy(du, &w.dense1_w[r * hd..(r + 1) * hd], &mut dh);
        }
    }

    let mut dc = vec![T::zero(); hd];
    let mut dz = vec![T::zero(); 4 * hd];
    let mut dxh = vec![T::zero(); xw];
    let one = T::one();
    for t in (0..cache.steps).rev() {
        let gates = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
        let tc = &cache.tanh_c[t * hd..(t + 1) * hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            let c_prev = if t == 0 { T::zero() } else { cache.cells[(t - 1) * hd + j] };
            let d_o = dh[j] * tc[j];
            let dcj = dc[j] + dh[j] * o * (one - tc[j] * tc[j]);
            dz[j] = dcj * g * i * (one - i);
            dz[hd + j] = dcj * c_prev * f * (one - f);
            dz[2 * hd + j] = dcj * i * (one - g * g);
            dz[3 * hd + j] = d_o * o * (one - o);
            dc[j] = dcj * f;
        }
        let xh = &cache.xh[t * xw..(t + 1) * xw];
        dxh.fill(T::zero());
        for r in 0..4 * hd {
            let d = dz[r];
            axpy(d, xh, &mut grad.lstm_w[r * xw..(r + 1) * xw]);
            grad.lstm_b[r] = grad.lstm_b[r] + d;
            if t > 0 {
                axpy(d, &w.lstm_w[r * xw..(r + 1) * xw], &mut dxh);
            }
        }
        dh.copy_from_slice(&dxh[iw..]);
    }
}
