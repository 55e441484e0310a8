//! Synthetic Markov-game hockey with exactly solvable next-goal probabilities.
//!
//! A state is (zone, manpower, possessing side), with zone and manpower seen
//! from the possessing team. Each tick one player of the possessing team acts:
//! the action is drawn from the state's policy, succeeds with probability
//! `success * skill`, and the next state (or a goal, or the end of the game) is
//! drawn from the row for (state, action, outcome). Goals are recorded as an
//! extra `goal` event at the shot's time and position and are followed by a
//! faceoff state.
//!
//! # Spec file
//!
//! TOML with these keys:
//!
//! ```text
//! ticks_per_game = 750              # events per game, goals excluded
//! actions = ["pass", "carry", ...]  # action names, all in the vocabulary
//! faceoff = [...]                   # distribution over states after a goal and at puck drop
//!
//! [[state]]                         # one per state, in index order
//! zone = "N"                        # D, N or O for the possessing team
//! manpower = "EV"                   # EV, SH or PP for the possessing team
//! possession = "H"                  # H or A
//! policy = [...]                    # probability of each action
//! success = [...]                   # base success probability of each action
//!
//! [[transition]]                    # one per (state, action, outcome)
//! state = 0
//! action = "pass"
//! outcome = "S"
//! next = [...]                      # one entry per state, then home goal, away goal, game end
//!
//! [[team]]
//! id = 1
//! skills = [0.7, 0.85, 1.0, 1.15, 1.3]   # one multiplier per player
//! ```
//!
//! Every team must carry the same multiset of skills so that the
//! player-averaged dynamics, and therefore the oracle, are the same whoever
//! has the puck.

mod default_spec;
mod simulate;
mod solve;

pub use simulate::{
    locate_event, read_stats_csv, schedule, simulate_season, write_stats_csv, EventTruth, PlayerStats, Season,
};
pub use solve::{solve_oracle_q, value_iteration, OracleQ, SOLVER_TOLERANCE};

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{ActionId, Manpower, Outcome, TeamSide, Vocabulary};

/// Row sums and policy sums must be within this of 1.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    Defensive,
    Neutral,
    Offensive,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Defensive, Zone::Neutral, Zone::Offensive];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The same ice seen from the other team.
    pub fn mirrored(self) -> Zone {
        Zone::ALL[2 - self.index()]
    }

    pub fn code(self) -> &'static str {
        match self {
            Zone::Defensive => "D",
            Zone::Neutral => "N",
            Zone::Offensive => "O",
        }
    }

    /// Adjusted x range used for synthetic coordinates, kept clear of the zone lines.
    pub fn x_range(self) -> (f64, f64) {
        match self {
            Zone::Defensive => (-99.0, -26.0),
            Zone::Neutral => (-24.0, 24.0),
            Zone::Offensive => (26.0, 99.0),
        }
    }

    /// Zone containing an adjusted x coordinate (blue lines at +/-25).
    pub fn of_x(x: f64) -> Zone {
        if x < -25.0 {
            Zone::Defensive
        } else if x > 25.0 {
            Zone::Offensive
        } else {
            Zone::Neutral
        }
    }
}

impl FromStr for Zone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d" | "defensive" => Ok(Zone::Defensive),
            "n" | "neutral" => Ok(Zone::Neutral),
            "o" | "offensive" => Ok(Zone::Offensive),
            other => Err(format!("invalid zone `{other}`")),
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimState {
    pub zone: Zone,
    pub manpower: Manpower,
    pub possession: TeamSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub zone: String,
    pub manpower: String,
    pub possession: String,
    pub policy: Vec<f64>,
    pub success: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub state: usize,
    pub action: String,
    pub outcome: String,
    pub next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamSpec {
    pub id: u64,
    pub skills: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub ticks_per_game: usize,
    pub actions: Vec<String>,
    pub faceoff: Vec<f64>,
    #[serde(rename = "state")]
    pub states: Vec<StateSpec>,
    #[serde(rename = "transition")]
    pub transitions: Vec<TransitionSpec>,
    #[serde(rename = "team")]
    pub teams: Vec<TeamSpec>,
}

impl SimSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// A validated spec in dense form.
///
/// Rows are indexed `(state * n_actions + action) * 2 + outcome` with
/// outcome 0 for success; each row has `n_states + 3` entries.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub ticks_per_game: usize,
    pub states: Vec<SimState>,
    pub action_names: Vec<String>,
    pub action_ids: Vec<ActionId>,
    pub goal_action: ActionId,
    pub policy: Vec<f64>,
    pub success: Vec<f64>,
    pub rows: Vec<f64>,
    pub faceoff: Vec<f64>,
    pub teams: Vec<(u64, Vec<f64>)>,
    /// `success * skill` clamped to [0, 1] and averaged over one roster.
    pub mean_success: Vec<f64>,
    state_index: HashMap<SimState, usize>,
}

pub fn outcome_index(o: Outcome) -> usize {
    match o {
        Outcome::Success => 0,
        Outcome::Failure => 1,
    }
}

fn check_distribution(what: &str, v: &[f64]) -> Result<()> {
    if let Some(p) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidSpec(format!("{what}: probability {p} outside [0, 1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(Error::InvalidSpec(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

impl SimModel {
    pub fn new(spec: &SimSpec, vocab: &Vocabulary) -> Result<Self> {
        let bad = |m: String| Error::InvalidSpec(m);
        if spec.ticks_per_game == 0 {
            return Err(bad("ticks_per_game must be >= 1".into()));
        }
        let n_actions = spec.actions.len();
        if n_actions == 0 {
            return Err(bad("no actions".into()));
        }
        let goal_action = vocab
            .goal()
            .ok_or_else(|| bad("vocabulary has no `goal` action".into()))?;
        let mut action_ids = Vec::with_capacity(n_actions);
        for name in &spec.actions {
            let id = vocab.lookup(name).map_err(|_| bad(format!("action `{name}` not in vocabulary")))?;
            if id == goal_action {
                return Err(bad("`goal` is recorded automatically and cannot be a simulator action".into()));
            }
            if action_ids.contains(&id) {
                return Err(bad(format!("duplicate action `{name}`")));
            }
            action_ids.push(id);
        }

        let n_states = spec.states.len();
        if n_states == 0 {
            return Err(bad("no states".into()));
        }
        let mut states = Vec::with_capacity(n_states);
        let mut state_index = HashMap::new();
        let mut policy = Vec::with_capacity(n_states * n_actions);
        let mut success = Vec::with_capacity(n_states * n_actions);
        for (i, st) in spec.states.iter().enumerate() {
            let s = SimState {
                zone: st.zone.parse().map_err(|e| bad(format!("state {i}: {e}")))?,
                manpower: st.manpower.parse().map_err(|e| bad(format!("state {i}: {e}")))?,
                possession: st.possession.parse().map_err(|e| bad(format!("state {i}: {e}")))?,
            };
            if state_index.insert(s, i).is_some() {
                return Err(bad(format!("state {i} duplicates an earlier state")));
            }
            states.push(s);
            if st.policy.len() != n_actions || st.success.len() != n_actions {
                return Err(bad(format!("state {i}: policy and success need {n_actions} entries")));
            }
            check_distribution(&format!("state {i} policy"), &st.policy)?;
            if let Some(p) = st.success.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(bad(format!("state {i}: success probability {p} outside [0, 1]")));
            }
            policy.extend_from_slice(&st.policy);
            success.extend_from_slice(&st.success);
        }

        if spec.faceoff.len() != n_states {
            return Err(bad(format!("faceoff needs {n_states} entries")));
        }
        check_distribution("faceoff", &spec.faceoff)?;

        let width = n_states + 3;
        let n_rows = n_states * n_actions * 2;
        let mut rows = vec![f64::NAN; n_rows * width];
        let mut seen = vec![false; n_rows];
        for (k, tr) in spec.transitions.iter().enumerate() {
            let what = format!("transition {k}");
            if tr.state >= n_states {
                return Err(bad(format!("{what}: state {} out of range", tr.state)));
            }
            let a = spec
                .actions
                .iter()
                .position(|n| n == &tr.action)
                .ok_or_else(|| bad(format!("{what}: unknown action `{}`", tr.action)))?;
            let o: Outcome = tr.outcome.parse().map_err(|e| bad(format!("{what}: {e}")))?;
            if tr.next.len() != width {
                return Err(bad(format!("{what}: next needs {width} entries")));
            }
            check_distribution(&what, &tr.next)?;
            let r = (tr.state * n_actions + a) * 2 + outcome_index(o);
            if std::mem::replace(&mut seen[r], true) {
                return Err(bad(format!("{what}: duplicate row")));
            }
            rows[r * width..(r + 1) * width].copy_from_slice(&tr.next);
        }
        if let Some(r) = seen.iter().position(|s| !s) {
            let (s, a, o) = (r / (2 * n_actions), (r / 2) % n_actions, r % 2);
            return Err(bad(format!(
                "missing transition for state {s}, action `{}`, outcome {}",
                spec.actions[a],
                ["S", "F"][o]
            )));
        }

        if spec.teams.len() < 2 {
            return Err(bad("need at least two teams".into()));
        }
        let mut teams = Vec::new();
        let mut reference: Option<Vec<f64>> = None;
        for t in &spec.teams {
            if t.skills.is_empty() {
                return Err(bad(format!("team {} has no players", t.id)));
            }
            if let Some(s) = t.skills.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                return Err(bad(format!("team {}: skill {s} must be positive", t.id)));
            }
            if teams.iter().any(|(id, _): &(u64, Vec<f64>)| *id == t.id) {
                return Err(bad(format!("duplicate team id {}", t.id)));
            }
            let mut sorted = t.skills.clone();
            sorted.sort_by(f64::total_cmp);
            match &reference {
                None => reference = Some(sorted),
                Some(r) if *r != sorted => {
                    return Err(bad(format!(
                        "team {} has a different skill multiset; rosters must match for an exact oracle",
                        t.id
                    )))
                }
                Some(_) => {}
            }
            teams.push((t.id, t.skills.clone()));
        }
        let roster = reference.unwrap();
        let mean_success = success
            .iter()
            .map(|&b| roster.iter().map(|&k| (b * k).clamp(0.0, 1.0)).sum::<f64>() / roster.len() as f64)
            .collect();

        Ok(SimModel {
            ticks_per_game: spec.ticks_per_game,
            states,
            action_names: spec.actions.clone(),
            action_ids,
            goal_action,
            policy,
            success,
            rows,
            faceoff: spec.faceoff.clone(),
            teams,
            mean_success,
            state_index,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    /// Number of (state, action, outcome) cells.
    pub fn n_cells(&self) -> usize {
        self.n_states() * self.n_actions() * 2
    }

    pub fn cell(&self, state: usize, action: usize, outcome: Outcome) -> usize {
        (state * self.n_actions() + action) * 2 + outcome_index(outcome)
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        let w = self.n_states() + 3;
        &self.rows[cell * w..(cell + 1) * w]
    }

    pub fn state_of(&self, s: &SimState) -> Option<usize> {
        self.state_index.get(s).copied()
    }

    pub fn action_of(&self, id: ActionId) -> Option<usize> {
        self.action_ids.iter().position(|&a| a == id)
    }

    pub fn players_per_team(&self) -> usize {
        self.teams[0].1.len()
    }

    /// Player ids are `team_id * 100 + slot + 1`.
    pub fn player_id(&self, team: usize, slot: usize) -> u64 {
        self.teams[team].0 * 100 + slot as u64 + 1
    }
}

pub use default_spec::default_spec;
