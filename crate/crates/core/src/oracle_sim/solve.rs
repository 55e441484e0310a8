use nalgebra::DMatrix;

use super::SimModel;
use crate::error::{Error, Result};

/// Residual bound for the linear solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Exact next-goal probabilities `(home, away, neither)` per
/// (state, action, outcome) cell.
#[derive(Debug, Clone)]
pub struct OracleQ {
    pub n_cells: usize,
    pub ticks: usize,
    /// Without a clock: only goals and explicit game-end entries terminate.
    pub stationary: Vec<[f64; 3]>,
    /// `finite[(k - 1) * n_cells + cell]`: the event is followed by `k - 1` more ticks.
    finite: Vec<[f64; 3]>,
    /// Max residual of the stationary linear system.
    pub residual: f64,
}

impl OracleQ {
    /// Q for an event with `remaining` ticks left in the game, itself included.
    pub fn at(&self, cell: usize, remaining: usize) -> [f64; 3] {
        let k = remaining.clamp(1, self.ticks);
        self.finite[(k - 1) * self.n_cells + cell]
    }

    /// Outcome-averaged stationary Q of (state, action).
    pub fn state_action(&self, model: &SimModel, state: usize, action: usize) -> [f64; 3] {
        let p = model.mean_success[state * model.n_actions() + action];
        let c = (state * model.n_actions() + action) * 2;
        let (s, f) = (self.stationary[c], self.stationary[c + 1]);
        [0, 1, 2].map(|k| p * s[k] + (1.0 - p) * f[k])
    }
}

/// `Q = row[..n] . V + absorption`
fn backup(model: &SimModel, v: &[[f64; 3]], out: &mut [[f64; 3]]) {
    let n = model.n_states();
    for (cell, q) in out.iter_mut().enumerate() {
        let r = model.row(cell);
        let mut acc = [r[n], r[n + 1], r[n + 2]];
        for (p, vs) in r[..n].iter().zip(v) {
            if *p != 0.0 {
                for k in 0..3 {
                    acc[k] += p * vs[k];
                }
            }
        }
        *q = acc;
    }
}

/// `V(s) = sum_a pi(a|s) sum_o P(o|s,a) Q(s,a,o)`
fn state_values(model: &SimModel, q: &[[f64; 3]], v: &mut [[f64; 3]]) {
    let na = model.n_actions();
    for (s, vs) in v.iter_mut().enumerate() {
        let mut acc = [0.0; 3];
        for a in 0..na {
            let pi = model.policy[s * na + a];
            if pi == 0.0 {
                continue;
            }
            let ps = model.mean_success[s * na + a];
            let c = (s * na + a) * 2;
            for k in 0..3 {
                acc[k] += pi * (ps * q[c][k] + (1.0 - ps) * q[c + 1][k]);
            }
        }
        *vs = acc;
    }
}

/// Exact oracle by direct solve of the absorbing chain, plus backward
/// induction over the game clock.
pub fn solve_oracle_q(model: &SimModel) -> Result<OracleQ> {
    let n = model.n_states();
    let na = model.n_actions();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut c = DMatrix::<f64>::zeros(n, 3);
    for s in 0..n {
        for a in 0..na {
            let pi = model.policy[s * na + a];
            if pi == 0.0 {
                continue;
            }
            let ps = model.mean_success[s * na + a];
            for (o, po) in [(0, ps), (1, 1.0 - ps)] {
                let w = pi * po;
                let r = model.row((s * na + a) * 2 + o);
                for s2 in 0..n {
                    m[(s, s2)] -= w * r[s2];
                }
                for k in 0..3 {
                    c[(s, k)] += w * r[n + k];
                }
            }
        }
    }
    let lu = m.clone().lu();
    let v = lu.solve(&c).ok_or_else(|| {
        Error::Degenerate("simulator chain has states that never reach a goal or game end".into())
    })?;
    let residual = (&m * &v - &c).abs().max();
    if !(residual < SOLVER_TOLERANCE) {
        return Err(Error::Numerical(format!(
            "oracle solve residual {residual:e} exceeds {SOLVER_TOLERANCE:e}"
        )));
    }
    let vs: Vec<[f64; 3]> = (0..n).map(|s| [v[(s, 0)], v[(s, 1)], v[(s, 2)]]).collect();
    let n_cells = model.n_cells();
    let mut stationary = vec![[0.0; 3]; n_cells];
    backup(model, &vs, &mut stationary);

    let ticks = model.ticks_per_game;
    let mut finite = vec![[0.0; 3]; ticks * n_cells];
    let mut v_prev = vec![[0.0, 0.0, 1.0]; n];
    for k in 1..=ticks {
        let q = &mut finite[(k - 1) * n_cells..k * n_cells];
        backup(model, &v_prev, q);
        state_values(model, q, &mut v_prev);
    }
    Ok(OracleQ {
        n_cells,
        ticks,
        stationary,
        finite,
        residual,
    })
}

/// Stationary Q by repeated backups until the largest change is below `tol`.
pub fn value_iteration(model: &SimModel, tol: f64, max_iter: usize) -> Result<Vec<[f64; 3]>> {
    let n = model.n_states();
    let mut v = vec![[0.0; 3]; n];
    let mut q = vec![[0.0; 3]; model.n_cells()];
    let mut v_next = v.clone();
    for _ in 0..max_iter {
        backup(model, &v, &mut q);
        state_values(model, &q, &mut v_next);
        let delta = v
            .iter()
            .zip(&v_next)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut v_next);
        if delta < tol {
            backup(model, &v, &mut q);
            return Ok(q);
        }
    }
    Err(Error::Numerical(format!("value iteration did not converge in {max_iter} sweeps")))
}

/// Dense `(I - M)` for tests that want to inspect the system.
#[cfg(test)]
pub(crate) fn transient_matrix(model: &SimModel) -> DMatrix<f64> {
    let n = model.n_states();
    let na = model.n_actions();
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..na {
            let pi = model.policy[s * na + a];
            let ps = model.mean_success[s * na + a];
            for (o, po) in [(0, ps), (1, 1.0 - ps)] {
                let r = model.row((s * na + a) * 2 + o);
                for s2 in 0..n {
                    m[(s, s2)] -= pi * po * r[s2];
                }
            }
        }
    }
    m
}
