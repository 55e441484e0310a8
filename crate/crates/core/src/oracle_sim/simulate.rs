use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{OracleQ, SimModel, SimState, Zone};
use crate::error::{Error, Result};
use crate::event_model::{Event, Observation, Outcome, TeamSide};
use crate::ingestion::{Game, GAME_SECONDS};

/// Ground truth for one simulated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventTruth {
    Action { cell: usize, remaining: usize },
    Goal(TeamSide),
}

impl EventTruth {
    pub fn oracle_q(&self, oracle: &OracleQ) -> [f64; 3] {
        match *self {
            EventTruth::Action { cell, remaining } => oracle.at(cell, remaining),
            EventTruth::Goal(side) => {
                let mut g = [0.0; 3];
                g[side.index()] = 1.0;
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerStats {
    pub player_id: u64,
    pub team_id: u64,
    pub skill: f64,
    pub goals: u32,
    pub assists: u32,
    pub points: u32,
    pub games: u32,
}

#[derive(Debug, Clone)]
pub struct Season {
    pub games: Vec<Game>,
    /// Per game, aligned with its events.
    pub truth: Vec<Vec<EventTruth>>,
    pub stats: Vec<PlayerStats>,
}

/// Round-robin pairings `(home, away)` by team index, `n_games` long. Rounds
/// come from the circle method; home and away swap on alternate cycles.
pub fn schedule(n_teams: usize, n_games: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_games);
    if n_teams < 2 {
        return out;
    }
    let slots = n_teams + n_teams % 2;
    let rounds = slots - 1;
    let mut ring: Vec<usize> = (1..slots).collect();
    let mut cycle = 0;
    while out.len() < n_games {
        for r in 0..rounds {
            for i in 0..slots / 2 {
                let a = if i == 0 { 0 } else { ring[i - 1] };
                let b = ring[slots - 2 - i];
                if a >= n_teams || b >= n_teams {
                    continue;
                }
                let flip = (cycle + r + i) % 2 == 1;
                out.push(if flip { (b, a) } else { (a, b) });
                if out.len() == n_games {
                    return out;
                }
            }
            ring.rotate_right(1);
        }
        cycle += 1;
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: last entry with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

struct GameOutput {
    events: Vec<Event>,
    truth: Vec<EventTruth>,
    goals: Vec<(usize, usize)>,
    assists: Vec<(usize, usize)>,
}

fn simulate_game(model: &SimModel, game_id: u64, teams: (usize, usize), seed: u64) -> GameOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = model.n_actions();
    let ns = model.n_states();
    let tick_secs = GAME_SECONDS / model.ticks_per_game as f64;
    let team_of = |side: TeamSide| match side {
        TeamSide::Home => teams.0,
        TeamSide::Away => teams.1,
    };
    let mut out = GameOutput {
        events: Vec::with_capacity(model.ticks_per_game + 16),
        truth: Vec::with_capacity(model.ticks_per_game + 16),
        goals: Vec::new(),
        assists: Vec::new(),
    };
    let mut score = [0i32; 2];
    let mut state = draw(&mut rng, &model.faceoff);
    let mut last_pass: Option<usize> = None;

    for tick in 0..model.ticks_per_game {
        let st: SimState = model.states[state];
        let side = st.possession;
        let team = team_of(side);
        let slot = rng.random_range(0..model.players_per_team());
        let skill = model.teams[team].1[slot];
        let a = draw(&mut rng, &model.policy[state * na..(state + 1) * na]);
        let p_ok = (model.success[state * na + a] * skill).clamp(0.0, 1.0);
        let outcome = if rng.random::<f64>() < p_ok {
            Outcome::Success
        } else {
            Outcome::Failure
        };
        let (lo, hi) = st.zone.x_range();
        let x = round_to(rng.random_range(lo..hi), 0.1);
        let y = round_to(rng.random_range(-42.0..42.0), 0.1);
        let game_time = round_to((tick as f64 + rng.random_range(0.1..0.9)) * tick_secs, 0.01);
        let diff = score[side.index()] - score[side.opponent().index()];
        let event = Event {
            game_id,
            player_id: model.player_id(team, slot),
            team_id: model.teams[team].0,
            game_time,
            action: model.action_ids[a],
            obs: Observation {
                x,
                y,
                vx: 0.0,
                vy: 0.0,
                time_remain: 0.0,
                score_diff: diff,
                manpower: st.manpower,
                duration: 0.0,
                outcome,
                angle: 0.0,
                side,
            },
            possession: side,
            play_number: 0,
            goal_flag: None,
        };
        out.events.push(event.clone());
        let cell = model.cell(state, a, outcome);
        out.truth.push(EventTruth::Action {
            cell,
            remaining: model.ticks_per_game - tick,
        });
        if model.action_names[a] == "pass" && outcome == Outcome::Success {
            last_pass = Some(slot);
        }

        let next = draw(&mut rng, model.row(cell));
        if next < ns {
            if model.states[next].possession != side {
                last_pass = None;
            }
            state = next;
            continue;
        }
        if next == ns + 2 {
            break;
        }
        let scorer_side = if next == ns { TeamSide::Home } else { TeamSide::Away };
        // the shooter scores if their own side is credited; otherwise a
        // random skater of the credited side does
        let (s_team, s_slot) = if scorer_side == side {
            (team, slot)
        } else {
            (team_of(scorer_side), rng.random_range(0..model.players_per_team()))
        };
        let mut goal = event;
        goal.player_id = model.player_id(s_team, s_slot);
        goal.team_id = model.teams[s_team].0;
        goal.action = model.goal_action;
        goal.obs.outcome = Outcome::Success;
        goal.obs.side = scorer_side;
        goal.obs.score_diff = score[scorer_side.index()] - score[scorer_side.opponent().index()];
        goal.possession = scorer_side;
        goal.goal_flag = Some(scorer_side);
        if scorer_side != side {
            goal.obs.x = -goal.obs.x;
            goal.obs.y = -goal.obs.y;
            goal.obs.manpower = goal.obs.manpower.mirrored();
        }
        out.events.push(goal);
        out.truth.push(EventTruth::Goal(scorer_side));
        out.goals.push((s_team, s_slot));
        if scorer_side == side {
            if let Some(p) = last_pass.filter(|&p| p != s_slot) {
                out.assists.push((team, p));
            }
        }
        score[scorer_side.index()] += 1;
        last_pass = None;
        state = draw(&mut rng, &model.faceoff);
    }
    out
}

/// Simulates `n_games` of the round-robin schedule. Game `g` (0-based) gets
/// id `g + 1` and its own generator seeded with `seed + g`.
pub fn simulate_season(model: &SimModel, n_games: usize, seed: u64) -> Season {
    let pairs = schedule(model.teams.len(), n_games);
    let outputs: Vec<GameOutput> = pairs
        .par_iter()
        .enumerate()
        .map(|(g, &teams)| simulate_game(model, g as u64 + 1, teams, seed.wrapping_add(g as u64)))
        .collect();

    let per_team = model.players_per_team();
    let mut stats: Vec<PlayerStats> = (0..model.teams.len())
        .flat_map(|t| {
            (0..per_team).map(move |s| (t, s))
        })
        .map(|(t, s)| PlayerStats {
            player_id: model.player_id(t, s),
            team_id: model.teams[t].0,
            skill: model.teams[t].1[s],
            goals: 0,
            assists: 0,
            points: 0,
            games: 0,
        })
        .collect();
    for (&(h, a), o) in pairs.iter().zip(&outputs) {
        for t in [h, a] {
            for s in 0..per_team {
                stats[t * per_team + s].games += 1;
            }
        }
        for &(t, s) in &o.goals {
            stats[t * per_team + s].goals += 1;
        }
        for &(t, s) in &o.assists {
            stats[t * per_team + s].assists += 1;
        }
    }
    for p in &mut stats {
        p.points = p.goals + p.assists;
    }

    let (games, truth) = outputs
        .into_iter()
        .enumerate()
        .map(|(g, o)| {
            (
                Game {
                    game_id: g as u64 + 1,
                    events: o.events,
                },
                o.truth,
            )
        })
        .unzip();
    Season { games, truth, stats }
}

/// Recovers an event's oracle cell from its recorded columns. `None` for
/// events the model could not have produced.
pub fn locate_event(model: &SimModel, ev: &Event) -> Option<EventTruth> {
    if ev.action == model.goal_action {
        return Some(EventTruth::Goal(ev.obs.side));
    }
    let a = model.action_of(ev.action)?;
    let state = model.state_of(&SimState {
        zone: Zone::of_x(ev.obs.x),
        manpower: ev.obs.manpower,
        possession: ev.possession,
    })?;
    let tick_secs = GAME_SECONDS / model.ticks_per_game as f64;
    let tick = (ev.game_time / tick_secs).floor() as usize;
    if tick >= model.ticks_per_game {
        return None;
    }
    Some(EventTruth::Action {
        cell: model.cell(state, a, ev.obs.outcome),
        remaining: model.ticks_per_game - tick,
    })
}

/// `player_id,skill,goals,assists,points,games`
pub fn write_stats_csv<W: Write>(w: W, stats: &[PlayerStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Invalid(format!("writing stats CSV: {e}"));
    w.write_record(["player_id", "skill", "goals", "assists", "points", "games"])
        .map_err(err)?;
    for p in stats {
        w.write_record([
            p.player_id.to_string(),
            p.skill.to_string(),
            p.goals.to_string(),
            p.assists.to_string(),
            p.points.to_string(),
            p.games.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing stats CSV: {e}")))
}

/// Reads a stats CSV; `team_id` is not stored and comes back as 0.
pub fn read_stats_csv<R: Read>(r: R, source: &str) -> Result<Vec<PlayerStats>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| Error::Row {
            path: source.into(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            path: source.into(),
            column: name.into(),
        })
    };
    let cols = [
        col("player_id")?,
        col("skill")?,
        col("goals")?,
        col("assists")?,
        col("points")?,
        col("games")?,
    ];
    let mut out = Vec::new();
    for rec in rdr.records() {
        let row_err = |line: u64, message: String| Error::Row {
            path: source.into(),
            line,
            message,
        };
        let rec = rec.map_err(|e| row_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(cols[i]).unwrap_or("");
        let num = |i: usize| -> Result<u32> {
            get(i)
                .parse()
                .map_err(|e| row_err(line, format!("column {}: {e}", ["player_id", "skill", "goals", "assists", "points", "games"][i])))
        };
        out.push(PlayerStats {
            player_id: get(0).parse().map_err(|e| row_err(line, format!("column player_id: {e}")))?,
            team_id: 0,
            skill: get(1).parse().map_err(|e| row_err(line, format!("column skill: {e}")))?,
            goals: num(2)?,
            assists: num(3)?,
            points: num(4)?,
            games: num(5)?,
        });
    }
    Ok(out)
}
