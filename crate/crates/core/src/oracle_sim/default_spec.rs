use super::{SimSpec, StateSpec, TeamSpec, TransitionSpec, Zone};
use crate::event_model::{Manpower, TeamSide};

const ACTIONS: [&str; 6] = ["pass", "carry", "shot", "dump-in", "dump-out", "puck-protection"];
const PASS: usize = 0;
const CARRY: usize = 1;
const SHOT: usize = 2;
const DUMP_IN: usize = 3;
const DUMP_OUT: usize = 4;
const PROTECT: usize = 5;

const BASE_SUCCESS: [f64; 6] = [0.75, 0.7, 0.45, 0.6, 0.65, 0.8];
const SKILLS: [f64; 5] = [0.7, 0.85, 1.0, 1.15, 1.3];
const N_TEAMS: u64 = 8;
const TICKS: usize = 750;
const HOME_EDGE: f64 = 1.05;

fn policy(zone: Zone) -> [f64; 6] {
    match zone {
        Zone::Defensive => [0.45, 0.25, 0.0, 0.0, 0.2, 0.1],
        Zone::Neutral => [0.4, 0.3, 0.0, 0.2, 0.0, 0.1],
        Zone::Offensive => [0.35, 0.1, 0.35, 0.0, 0.0, 0.2],
    }
}

/// Per-tick manpower change for the team in possession.
fn manpower_step(m: Manpower) -> [(Manpower, f64); 3] {
    match m {
        Manpower::Even => [
            (Manpower::Even, 0.99),
            (Manpower::PowerPlay, 0.005),
            (Manpower::ShortHanded, 0.005),
        ],
        Manpower::PowerPlay => [
            (Manpower::Even, 0.04),
            (Manpower::PowerPlay, 0.96),
            (Manpower::ShortHanded, 0.0),
        ],
        Manpower::ShortHanded => [
            (Manpower::Even, 0.04),
            (Manpower::ShortHanded, 0.96),
            (Manpower::PowerPlay, 0.0),
        ],
    }
}

fn goal_probability(zone: Zone, m: Manpower, side: TeamSide) -> f64 {
    let base = match m {
        Manpower::Even => 0.12,
        Manpower::PowerPlay => 0.2,
        Manpower::ShortHanded => 0.09,
    };
    let reach = match zone {
        Zone::Offensive => 1.0,
        Zone::Neutral => 0.2,
        Zone::Defensive => 0.05,
    };
    let edge = match side {
        TeamSide::Home => HOME_EDGE,
        TeamSide::Away => 1.0 / HOME_EDGE,
    };
    base * reach * edge
}

fn all_states() -> Vec<(Zone, Manpower, TeamSide)> {
    let mut v = Vec::new();
    for side in [TeamSide::Home, TeamSide::Away] {
        for m in Manpower::ALL {
            for z in Zone::ALL {
                v.push((z, m, side));
            }
        }
    }
    v
}

struct RowBuilder<'a> {
    states: &'a [(Zone, Manpower, TeamSide)],
    from: (Zone, Manpower, TeamSide),
    next: Vec<f64>,
}

impl RowBuilder<'_> {
    /// Puck ends in `zone` (seen by its new holder), possession kept or lost.
    fn to(&mut self, zone: Zone, keep: bool, p: f64) {
        let (_, m, side) = self.from;
        for (m2, pm) in manpower_step(m) {
            if pm == 0.0 {
                continue;
            }
            let target = if keep { (zone, m2, side) } else { (zone, m2.mirrored(), side.opponent()) };
            let i = self.states.iter().position(|s| *s == target).unwrap();
            self.next[i] += p * pm;
        }
    }

    fn goal(&mut self, side: TeamSide, p: f64) {
        self.next[self.states.len() + side.index()] += p;
    }
}

fn row(states: &[(Zone, Manpower, TeamSide)], from: (Zone, Manpower, TeamSide), action: usize, ok: bool) -> Vec<f64> {
    let (z, m, side) = from;
    let mut b = RowBuilder {
        states,
        from,
        next: vec![0.0; states.len() + 3],
    };
    let up = Zone::ALL[(z.index() + 1).min(2)];
    let down = Zone::ALL[z.index().saturating_sub(1)];
    match (action, ok) {
        (PASS, true) => {
            b.to(z, true, 0.6);
            b.to(up, true, 0.3);
            b.to(down, true, 0.1);
        }
        (CARRY, true) => {
            b.to(up, true, 0.6);
            b.to(z, true, 0.4);
        }
        (SHOT, true) => {
            let g = goal_probability(z, m, side);
            b.goal(side, g);
            b.to(z, true, 0.25 * (1.0 - g));
            b.to(z.mirrored(), false, 0.75 * (1.0 - g));
        }
        (SHOT, false) => {
            b.to(z, true, 0.4);
            b.to(z.mirrored(), false, 0.6);
        }
        (DUMP_IN, true) => b.to(Zone::Offensive, true, 1.0),
        (DUMP_IN, false) => b.to(Zone::Defensive, false, 1.0),
        (DUMP_OUT, true) => b.to(Zone::Neutral, true, 1.0),
        (DUMP_OUT, false) => b.to(Zone::Offensive, false, 1.0),
        (PROTECT, true) => b.to(z, true, 1.0),
        (_, false) => b.to(z.mirrored(), false, 1.0),
        _ => unreachable!(),
    }
    b.next
}

/// Default spec: 18 states, 6 actions, 8 teams of 5, 750 ticks per game.
pub fn default_spec() -> SimSpec {
    let states = all_states();
    let state_specs = states
        .iter()
        .map(|&(z, m, side)| StateSpec {
            zone: z.code().into(),
            manpower: m.code().into(),
            possession: side.code().into(),
            policy: policy(z).to_vec(),
            success: BASE_SUCCESS.to_vec(),
        })
        .collect();
    let mut transitions = Vec::new();
    for (si, &st) in states.iter().enumerate() {
        for (a, name) in ACTIONS.iter().enumerate() {
            for (ok, code) in [(true, "S"), (false, "F")] {
                transitions.push(TransitionSpec {
                    state: si,
                    action: (*name).into(),
                    outcome: code.into(),
                    next: row(&states, st, a, ok),
                });
            }
        }
    }
    let faceoff = states
        .iter()
        .map(|&(z, m, _)| if z == Zone::Neutral && m == Manpower::Even { 0.5 } else { 0.0 })
        .collect();
    SimSpec {
        ticks_per_game: TICKS,
        actions: ACTIONS.iter().map(|s| s.to_string()).collect(),
        faceoff,
        states: state_specs,
        transitions,
        teams: (1..=N_TEAMS)
            .map(|id| TeamSpec {
                id,
                skills: SKILLS.to_vec(),
            })
            .collect(),
    }
}
