use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::QModel;
use crate::error::{Error, Result};
use crate::event_model::{goal_vector, Event};
use crate::ingestion::{Episode, Ingested, Sequence, GAME_SECONDS};

/// Convergence threshold on the largest per-sweep change of any cell value.
pub const TABULAR_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Bin counts for the tabular baseline. A count of 0 (or `false`) drops that dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub x_bins: u32,
    pub y_bins: u32,
    pub time_bins: u32,
    pub manpower: bool,
    /// Odd count; score differentials are clamped to `±(score_bins / 2)`.
    pub score_bins: u32,
    pub action: bool,
    pub side: bool,
    pub outcome: bool,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            x_bins: 10,
            y_bins: 5,
            time_bins: 12,
            manpower: true,
            score_bins: 5,
            action: true,
            side: false,
            outcome: false,
        }
    }
}

fn bin(v: f64, lo: f64, hi: f64, n: u32) -> u32 {
    if n == 0 {
        return 0;
    }
    let b = ((v - lo) / (hi - lo) * n as f64).floor();
    b.clamp(0.0, (n - 1) as f64) as u32
}

impl Discretization {
    /// Everything in one cell.
    pub fn single_cell() -> Self {
        Discretization {
            x_bins: 0,
            y_bins: 0,
            time_bins: 0,
            manpower: false,
            score_bins: 0,
            action: false,
            side: false,
            outcome: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.score_bins != 0 && self.score_bins % 2 == 0 {
            return Err(Error::Invalid(format!("score_bins must be odd, got {}", self.score_bins)));
        }
        Ok(())
    }

    pub fn cell(&self, ev: &Event) -> CellKey {
        let o = &ev.obs;
        let score = if self.score_bins == 0 {
            0
        } else {
            let cap = (self.score_bins / 2) as i64;
            ((o.score_diff as i64).clamp(-cap, cap) + cap) as u32
        };
        CellKey([
            bin(o.x, -100.0, 100.0, self.x_bins),
            bin(o.y, -42.5, 42.5, self.y_bins),
            bin(o.time_remain, 0.0, GAME_SECONDS, self.time_bins),
            if self.manpower { o.manpower.index() as u32 } else { 0 },
            score,
            if self.action { ev.action.index() as u32 } else { 0 },
            if self.side { o.side.index() as u32 } else { 0 },
            if self.outcome { o.outcome as u32 } else { 0 },
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey(pub [u32; 8]);

#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub discretization: Discretization,
    pub cells: BTreeMap<CellKey, ([f64; 3], u64)>,
}

impl TabularQ {
    pub fn lookup(&self, ev: &Event) -> [f64; 3] {
        self.cells
            .get(&self.discretization.cell(ev))
            .map_or([1.0 / 3.0; 3], |c| c.0)
    }

    pub fn visits(&self, ev: &Event) -> u64 {
        self.cells.get(&self.discretization.cell(ev)).map_or(0, |c| c.1)
    }
}

impl QModel for TabularQ {
    fn episode_q(&self, episode: &Episode, _seq: &Sequence) -> Result<Vec<[f64; 3]>> {
        Ok(episode.events.iter().map(|e| self.lookup(e)).collect())
    }
}

/// Fixed point of tabular Sarsa on the whole dataset: each cell value equals the
/// mean over its visits of the next cell's value, or of the goal vector on the
/// final event of an episode.
pub fn train_tabular_si(data: &Ingested, disc: Discretization) -> Result<TabularQ> {
    disc.validate()?;
    let mut index: BTreeMap<CellKey, usize> = BTreeMap::new();
    let ids: Vec<Vec<usize>> = data
        .episodes
        .iter()
        .map(|ep| {
            ep.events
                .iter()
                .map(|e| {
                    let n = index.len();
                    *index.entry(disc.cell(e)).or_insert(n)
                })
                .collect()
        })
        .collect();
    let n = index.len();
    let mut visits = vec![0u64; n];
    let mut self_loops = vec![0u64; n];
    let mut terminal = vec![[0.0f64; 3]; n];
    let mut succ: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
    for (ep, cells) in data.episodes.iter().zip(&ids) {
        for (t, &c) in cells.iter().enumerate() {
            visits[c] += 1;
            match cells.get(t + 1) {
                Some(&next) if next == c => self_loops[c] += 1,
                Some(&next) => *succ[c].entry(next).or_insert(0) += 1,
                None => {
                    let g = goal_vector(Some(ep.terminal)).0;
                    for k in 0..3 {
                        terminal[c][k] += g[k];
                    }
                }
            }
        }
    }
    let succ: Vec<Vec<(usize, f64)>> = succ
        .into_iter()
        .map(|m| m.into_iter().map(|(k, v)| (k, v as f64)).collect())
        .collect();
    let mut q = vec![[1.0 / 3.0; 3]; n];
    let mut converged = n == 0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut delta = 0.0f64;
        for c in 0..n {
            let denom = (visits[c] - self_loops[c]) as f64;
            if denom == 0.0 {
                return Err(Error::Numerical("tabular cell never leaves itself".into()));
            }
            let mut acc = terminal[c];
            for &(next, w) in &succ[c] {
                for k in 0..3 {
                    acc[k] += w * q[next][k];
                }
            }
            for k in 0..3 {
                let v = acc[k] / denom;
                delta = delta.max((v - q[c][k]).abs());
                q[c][k] = v;
            }
        }
        converged = delta < TABULAR_TOLERANCE;
    }
    if !converged {
        return Err(Error::Numerical(format!("tabular values did not converge in {MAX_SWEEPS} sweeps")));
    }
    Ok(TabularQ {
        discretization: disc,
        cells: index.into_iter().map(|(k, i)| (k, (q[i], visits[i]))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{FeatureScaler, Vocabulary};
    use crate::ingestion::ingest;
    use crate::oracle_sim::{default_spec, simulate_season, SimModel};
    use crate::valuation::{compute_gim, si_gim};

    fn data(n: usize, seed: u64) -> Ingested {
        let m = SimModel::new(&default_spec(), &Vocabulary::default()).unwrap();
        ingest(simulate_season(&m, n, seed).games, &Vocabulary::default(), None).unwrap()
    }

    #[test]
    fn one_cell_recovers_episode_outcome_frequencies() {
        let mut d = data(3, 11);
        // Relabel terminals to a 2:1:1 mix, keeping episode lengths as simulated.
        let mix = [crate::event_model::Terminal::Home, crate::event_model::Terminal::Home,
            crate::event_model::Terminal::Away, crate::event_model::Terminal::Neither];
        d.episodes.truncate(d.episodes.len() / 4 * 4);
        for (i, ep) in d.episodes.iter_mut().enumerate() {
            ep.terminal = mix[i % 4];
        }
        let t = train_tabular_si(&d, Discretization::single_cell()).unwrap();
        assert_eq!(t.cells.len(), 1);
        let (q, n) = t.cells.values().next().unwrap();
        assert_eq!(*n as usize, d.episodes.iter().map(|e| e.events.len()).sum::<usize>());
        for (got, want) in q.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-9, "{q:?}");
        }
    }

    #[test]
    fn chained_cells_propagate_the_terminal() {
        let d = data(1, 3);
        let disc = Discretization::default();
        let t = train_tabular_si(&d, disc).unwrap();
        let total: u64 = t.cells.values().map(|c| c.1).sum();
        assert_eq!(total as usize, d.episodes.iter().map(|e| e.events.len()).sum::<usize>());
        for (q, _) in t.cells.values() {
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(q.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn unvisited_cells_are_uniform() {
        let d = data(1, 3);
        let t = train_tabular_si(&d, Discretization::default()).unwrap();
        let mut ev = d.episodes[0].events[0].clone();
        ev.obs.score_diff = 40;
        ev.obs.time_remain = -5.0;
        let key = t.discretization.cell(&ev);
        if !t.cells.contains_key(&key) {
            assert_eq!(t.lookup(&ev), [1.0 / 3.0; 3]);
            assert_eq!(t.visits(&ev), 0);
        }
        let empty = TabularQ { discretization: Discretization::default(), cells: BTreeMap::new() };
        assert_eq!(empty.lookup(&ev), [1.0 / 3.0; 3]);
    }

    #[test]
    fn bins_clamp_and_score_bins_must_be_odd() {
        assert_eq!(bin(-500.0, -100.0, 100.0, 10), 0);
        assert_eq!(bin(100.0, -100.0, 100.0, 10), 9);
        assert_eq!(bin(0.0, -100.0, 100.0, 10), 5);
        let bad = Discretization { score_bins: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(toml::from_str::<Discretization>("x_bins = 3\nspeed = 1").is_err());
        let d: Discretization = toml::from_str("x_bins = 3").unwrap();
        assert_eq!(d.y_bins, 5);
    }

    #[test]
    fn si_gim_matches_compute_gim_and_is_additive() {
        let m = SimModel::new(&default_spec(), &Vocabulary::default()).unwrap();
        let games = simulate_season(&m, 4, 8).games;
        let vocab = Vocabulary::default();
        let s = Some(FeatureScaler::identity());
        let all = ingest(games.clone(), &vocab, s).unwrap();
        let t = train_tabular_si(&all, Discretization::default()).unwrap();
        assert_eq!(si_gim(&t, &all).unwrap(), compute_gim(&t, &all).unwrap());
        let a = si_gim(&t, &ingest(games[..1].to_vec(), &vocab, s).unwrap()).unwrap();
        let b = si_gim(&t, &ingest(games[1..].to_vec(), &vocab, s).unwrap()).unwrap();
        for (&id, e) in &si_gim(&t, &all).unwrap().players {
            assert!((e.gim - a.gim(id) - b.gim(id)).abs() < 1e-9);
        }
    }
}
