//! Play-by-play ingestion: CSV parsing, derived features, play numbering,
//! goal-scoring episodes and the trace-length windows fed to the Q-network.

pub(crate) mod seqfile;

pub use seqfile::{read_sequences, write_sequences, ProcessedData, SEQ_MAGIC, SEQ_VERSION};

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event_model::{
    encode_into, goal_vector, ActionId, Event, FeatureScaler, GoalVector, Observation, Terminal,
    TeamSide, Vocabulary,
};

/// Regulation length of a game in seconds.
pub const GAME_SECONDS: f64 = 3600.0;
/// Adjusted x coordinate of the attacked goal line.
pub const GOAL_LINE_X: f64 = 89.0;
/// Upper bound on a trace length.
pub const MAX_TRACE: usize = 10;

/// Column headers for each field. Defaults follow the `GID, PID, GT, ...` naming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub game_id: String,
    pub player_id: String,
    pub game_time: String,
    pub team_id: String,
    pub x: String,
    pub y: String,
    pub manpower: String,
    pub score_diff: String,
    pub action: String,
    pub outcome: String,
    pub possession: String,
    pub side: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            game_id: "GID".into(),
            player_id: "PID".into(),
            game_time: "GT".into(),
            team_id: "TID".into(),
            x: "X".into(),
            y: "Y".into(),
            manpower: "MP".into(),
            score_diff: "GD".into(),
            action: "Action".into(),
            outcome: "OC".into(),
            possession: "P".into(),
            side: "H/A".into(),
        }
    }
}

impl Schema {
    pub const FIELDS: [&'static str; 12] = [
        "game_id",
        "player_id",
        "game_time",
        "team_id",
        "x",
        "y",
        "manpower",
        "score_diff",
        "action",
        "outcome",
        "possession",
        "side",
    ];

    fn headers(&self) -> [&str; 12] {
        [
            &self.game_id,
            &self.player_id,
            &self.game_time,
            &self.team_id,
            &self.x,
            &self.y,
            &self.manpower,
            &self.score_diff,
            &self.action,
            &self.outcome,
            &self.possession,
            &self.side,
        ]
    }

    /// Renames the column used for `field` (one of [`Schema::FIELDS`]).
    pub fn set(&mut self, field: &str, header: &str) -> Result<()> {
        let slot = match field {
            "game_id" => &mut self.game_id,
            "player_id" => &mut self.player_id,
            "game_time" => &mut self.game_time,
            "team_id" => &mut self.team_id,
            "x" => &mut self.x,
            "y" => &mut self.y,
            "manpower" => &mut self.manpower,
            "score_diff" => &mut self.score_diff,
            "action" => &mut self.action,
            "outcome" => &mut self.outcome,
            "possession" => &mut self.possession,
            "side" => &mut self.side,
            other => return Err(Error::Invalid(format!("unknown schema field `{other}`"))),
        };
        *slot = header.to_string();
        Ok(())
    }
}

/// All events of one game, sorted by game time.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub game_id: u64,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedEvents {
    /// Games in ascending `game_id` order.
    pub games: Vec<Game>,
    /// Rows skipped in lenient mode, as `source:line: message`.
    pub warnings: Vec<String>,
}

impl ParsedEvents {
    pub fn n_events(&self) -> usize {
        self.games.iter().map(|g| g.events.len()).sum()
    }
}

pub fn parse_events(
    path: &Path,
    schema: &Schema,
    vocab: &Vocabulary,
    lenient: bool,
) -> Result<ParsedEvents> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events_from_reader(file, &path.display().to_string(), schema, vocab, lenient)
}

pub fn parse_events_from_reader<R: Read>(
    reader: R,
    source: &str,
    schema: &Schema,
    vocab: &Vocabulary,
    lenient: bool,
) -> Result<ParsedEvents> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Row {
            path: source.into(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(schema.headers()) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                path: source.into(),
                column: name.to_string(),
            })?;
    }

    let goal = vocab.goal();
    let mut by_game: BTreeMap<u64, Vec<Event>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for record in rdr.records() {
        let (line, parsed) = match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                (line, parse_row(&rec, &cols, vocab, goal))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                (line, Err(e.to_string()))
            }
        };
        match parsed {
            Ok(ev) => by_game.entry(ev.game_id).or_default().push(ev),
            Err(message) if lenient => warnings.push(format!("{source}:{line}: {message}")),
            Err(message) => {
                return Err(Error::Row {
                    path: source.into(),
                    line,
                    message,
                })
            }
        }
    }

    let games = by_game
        .into_iter()
        .map(|(game_id, mut events)| {
            // stable: equal times keep file order
            events.sort_by(|a, b| a.game_time.total_cmp(&b.game_time));
            Game { game_id, events }
        })
        .collect();
    Ok(ParsedEvents { games, warnings })
}

fn field<'r, T: std::str::FromStr>(rec: &'r csv::StringRecord, idx: usize, name: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<T>()
        .map_err(|e| format!("column {name}: cannot parse `{raw}`: {e}"))
}

fn finite(v: f64, name: &str) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("column {name}: non-finite value"))
    }
}

fn parse_row(
    rec: &csv::StringRecord,
    cols: &[usize; 12],
    vocab: &Vocabulary,
    goal: Option<ActionId>,
) -> Result<Event, String> {
    let names = Schema::FIELDS;
    let action_raw = rec.get(cols[8]).unwrap_or("");
    let action = vocab
        .lookup(action_raw)
        .map_err(|_| format!("column action: unknown action `{action_raw}`"))?;
    let side: TeamSide = field(rec, cols[11], names[11])?;
    let game_time = finite(field(rec, cols[2], names[2])?, names[2])?;
    if game_time < 0.0 {
        return Err(format!("column game_time: negative value {game_time}"));
    }
    Ok(Event {
        game_id: field(rec, cols[0], names[0])?,
        player_id: field(rec, cols[1], names[1])?,
        team_id: field(rec, cols[3], names[3])?,
        game_time,
        action,
        obs: Observation {
            x: finite(field(rec, cols[4], names[4])?, names[4])?,
            y: finite(field(rec, cols[5], names[5])?, names[5])?,
            vx: 0.0,
            vy: 0.0,
            time_remain: 0.0,
            score_diff: field(rec, cols[7], names[7])?,
            manpower: field(rec, cols[6], names[6])?,
            duration: 0.0,
            outcome: field(rec, cols[9], names[9])?,
            angle: 0.0,
            side,
        },
        possession: field(rec, cols[10], names[10])?,
        play_number: 0,
        goal_flag: (Some(action) == goal).then_some(side),
    })
}

/// Writes events in the raw input schema (derived columns are not written).
pub fn write_events_csv<W: Write>(
    writer: W,
    schema: &Schema,
    vocab: &Vocabulary,
    events: &[Event],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Invalid(format!("writing events CSV: {e}"));
    w.write_record(schema.headers()).map_err(to_err)?;
    for ev in events {
        w.write_record([
            ev.game_id.to_string(),
            ev.player_id.to_string(),
            ev.game_time.to_string(),
            ev.team_id.to_string(),
            ev.obs.x.to_string(),
            ev.obs.y.to_string(),
            ev.obs.manpower.code().to_string(),
            ev.obs.score_diff.to_string(),
            vocab.name(ev.action).to_string(),
            ev.obs.outcome.code().to_string(),
            ev.possession.code().to_string(),
            ev.obs.side.code().to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("writing events CSV: {e}")))?;
    Ok(())
}

/// Shot angle to the attacked goal, from the actor's adjusted coordinates.
pub fn shot_angle(x: f64, y: f64) -> f64 {
    if x >= GOAL_LINE_X {
        FRAC_PI_2 * y.signum()
    } else {
        (y.abs() / (GOAL_LINE_X - x)).atan()
    }
}

/// Puck velocity between two events. `prev` is expressed in the previous
/// actor's frame and rotated into the current actor's frame when sides differ.
pub fn puck_velocity(
    prev: (f64, f64),
    prev_side: TeamSide,
    cur: (f64, f64),
    cur_side: TeamSide,
    duration: f64,
) -> (f64, f64) {
    if duration <= 0.0 {
        return (0.0, 0.0);
    }
    let (px, py) = if prev_side == cur_side {
        prev
    } else {
        (-prev.0, -prev.1)
    };
    ((cur.0 - px) / duration, (cur.1 - py) / duration)
}

/// Fills time remaining, duration, angle and velocity for one time-sorted game.
pub fn derive_features(events: &mut [Event]) {
    let mut prev: Option<(f64, (f64, f64), TeamSide)> = None;
    for ev in events.iter_mut() {
        let o = &mut ev.obs;
        o.time_remain = (GAME_SECONDS - ev.game_time).max(0.0);
        o.angle = shot_angle(o.x, o.y);
        match prev {
            None => {
                o.duration = 0.0;
                o.vx = 0.0;
                o.vy = 0.0;
            }
            Some((t, xy, side)) => {
                o.duration = (ev.game_time - t).max(0.0);
                let (vx, vy) = puck_velocity(xy, side, (o.x, o.y), o.side, o.duration);
                o.vx = vx;
                o.vy = vy;
            }
        }
        prev = Some((ev.game_time, (o.x, o.y), o.side));
    }
}

/// Numbers plays from 1, starting a new play whenever possession changes.
pub fn assign_play_numbers(events: &mut [Event]) {
    let mut play = 0u32;
    let mut last: Option<TeamSide> = None;
    for ev in events.iter_mut() {
        if last != Some(ev.possession) {
            play += 1;
            last = Some(ev.possession);
        }
        ev.play_number = play;
    }
}

/// A goal-scoring episode: from game start or just after a goal, through the
/// next goal (inclusive) or the end of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub game_id: u64,
    /// Index of the first event within its game.
    pub start_index: usize,
    pub events: Vec<Event>,
    pub terminal: Terminal,
}

pub fn segment_episodes(game_id: u64, events: &[Event]) -> Vec<Episode> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, ev) in events.iter().enumerate() {
        if let Some(side) = ev.goal_flag {
            out.push(Episode {
                game_id,
                start_index: start,
                events: events[start..=i].to_vec(),
                terminal: side.into(),
            });
            start = i + 1;
        }
    }
    if start < events.len() {
        out.push(Episode {
            game_id,
            start_index: start,
            events: events[start..].to_vec(),
            terminal: Terminal::Neither,
        });
    }
    out
}

/// Steps back to the start of the current play, capped at [`MAX_TRACE`] and
/// reset at the episode start.
pub fn compute_trace_lengths(episode: &Episode) -> Vec<u8> {
    let mut out = Vec::with_capacity(episode.events.len());
    let mut prev_play = None;
    let mut run = 0usize;
    for ev in &episode.events {
        if prev_play == Some(ev.play_number) {
            run += 1;
        } else {
            run = 1;
            prev_play = Some(ev.play_number);
        }
        out.push(run.min(MAX_TRACE) as u8);
    }
    out
}

/// Per-step bookkeeping carried alongside the encoded features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub event_index: u32,
    pub player_id: u64,
    pub team_id: u64,
    pub side: TeamSide,
    pub action: ActionId,
    pub game_time: f64,
    pub play_number: u32,
}

/// One episode in network-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub game_id: u64,
    pub terminal: Terminal,
    pub width: usize,
    /// Row-major `len() x width` encoded steps.
    pub features: Vec<f32>,
    pub trace_lengths: Vec<u8>,
    pub steps: Vec<StepInfo>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> &[f32] {
        &self.features[t * self.width..(t + 1) * self.width]
    }

    /// Trace length at `t` after applying a model's cap.
    pub fn trace_length(&self, t: usize, max_trace: usize) -> usize {
        (self.trace_lengths[t] as usize).min(max_trace).max(1)
    }

    /// Encoded steps `t - tl + 1 ..= t` in chronological order.
    pub fn window(&self, t: usize, max_trace: usize) -> &[f32] {
        let tl = self.trace_length(t, max_trace);
        &self.features[(t + 1 - tl) * self.width..(t + 1) * self.width]
    }

    pub fn goal(&self, t: usize) -> GoalVector {
        if t + 1 == self.len() {
            goal_vector(Some(self.terminal))
        } else {
            GoalVector::ZERO
        }
    }
}

pub fn build_sequence(episode: &Episode, scaler: &FeatureScaler, vocab: &Vocabulary) -> Result<Sequence> {
    let width = vocab.encoded_width();
    let mut features = vec![0.0f32; width * episode.events.len()];
    for (ev, out) in episode.events.iter().zip(features.chunks_exact_mut(width)) {
        encode_into(ev, scaler, vocab, out)?;
    }
    Ok(Sequence {
        game_id: episode.game_id,
        terminal: episode.terminal,
        width,
        features,
        trace_lengths: compute_trace_lengths(episode),
        steps: episode
            .events
            .iter()
            .enumerate()
            .map(|(i, ev)| StepInfo {
                event_index: (episode.start_index + i) as u32,
                player_id: ev.player_id,
                team_id: ev.team_id,
                side: ev.obs.side,
                action: ev.action,
                game_time: ev.game_time,
                play_number: ev.play_number,
            })
            .collect(),
    })
}

pub fn build_sequences(
    episodes: &[Episode],
    scaler: &FeatureScaler,
    vocab: &Vocabulary,
) -> Result<Vec<Sequence>> {
    episodes
        .iter()
        .map(|ep| build_sequence(ep, scaler, vocab))
        .collect()
}

/// Derived features and play numbers for every game, in place.
pub fn prepare_games(games: &mut [Game]) {
    for g in games.iter_mut() {
        derive_features(&mut g.events);
        assign_play_numbers(&mut g.events);
    }
}

pub fn episodes_of(games: &[Game]) -> Vec<Episode> {
    games
        .iter()
        .flat_map(|g| segment_episodes(g.game_id, &g.events))
        .collect()
}

/// Prepared games plus their episodes and sequences.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub games: Vec<Game>,
    pub episodes: Vec<Episode>,
    pub sequences: Vec<Sequence>,
    pub scaler: FeatureScaler,
}

/// Full ingestion of parsed games. Fits a scaler on these games unless one is given.
pub fn ingest(mut games: Vec<Game>, vocab: &Vocabulary, scaler: Option<FeatureScaler>) -> Result<Ingested> {
    prepare_games(&mut games);
    let scaler = match scaler {
        Some(s) => s,
        None => crate::event_model::fit_scaler(games.iter().flat_map(|g| g.events.iter()))?,
    };
    let episodes = episodes_of(&games);
    let sequences = build_sequences(&episodes, &scaler, vocab)?;
    Ok(Ingested {
        games,
        episodes,
        sequences,
        scaler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{Manpower, Outcome};

    const SAMPLE_CSV: &str = "\
GID,PID,GT,TID,X,Y,MP,GD,Action,OC,P,H/A
1365,126,14.3,6,-11.0,25.5,Even,0,Lpr,S,A,A
1365,126,17.5,6,-23.5,-36.5,Even,0,Carry,S,A,A
1365,270,17.8,23,14.5,35.5,Even,0,Block,S,A,H
1365,126,17.8,6,-18.5,-37.0,Even,0,Pass,F,A,A
1365,609,19.3,23,-28.0,25.5,Even,0,Lpr,S,H,H
1365,609,19.3,23,-28.0,25.5,Even,0,Pass,S,H,H
";

    fn sample_events() -> Vec<Event> {
        let vocab = Vocabulary::default();
        let mut parsed =
            parse_events_from_reader(SAMPLE_CSV.as_bytes(), "sample", &Schema::default(), &vocab, false)
                .unwrap();
        assert_eq!(parsed.games.len(), 1);
        let mut events = parsed.games.remove(0).events;
        derive_features(&mut events);
        assign_play_numbers(&mut events);
        events
    }

    #[test]
    fn parses_first_row() {
        let vocab = Vocabulary::default();
        let e = &sample_events()[0];
        assert_eq!((e.game_id, e.player_id, e.team_id), (1365, 126, 6));
        assert_eq!(e.game_time, 14.3);
        assert_eq!((e.obs.x, e.obs.y), (-11.0, 25.5));
        assert_eq!(e.action, vocab.lookup("lpr").unwrap());
        assert_eq!(e.obs.outcome, Outcome::Success);
        assert_eq!(e.obs.side, TeamSide::Away);
        assert_eq!(e.obs.manpower, Manpower::Even);
    }

    #[test]
    fn derived_columns_match_table() {
        let ev = sample_events();
        let angles = [0.250, 0.314, 0.445, 0.331, 0.214, 0.214];
        for (e, a) in ev.iter().zip(angles) {
            assert!((e.obs.angle - a).abs() <= 1e-3, "{} vs {a}", e.obs.angle);
        }
        assert_eq!(ev[0].obs.time_remain, 3585.7);
        assert_eq!(ev[1].obs.time_remain, 3582.5);
        assert_eq!(ev[2].obs.time_remain, 3582.2);
        // zero-duration rows
        assert_eq!(ev[3].obs.duration, 0.0);
        assert_eq!((ev[3].obs.vx, ev[3].obs.vy), (0.0, 0.0));
        assert_eq!((ev[5].obs.vx, ev[5].obs.vy), (0.0, 0.0));
        assert_eq!(ev[0].obs.duration, 0.0);
        let pn: Vec<u32> = ev.iter().map(|e| e.play_number).collect();
        assert_eq!(pn, [1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn velocity_x_component_uses_adjusted_frame() {
        // row 2 relative to row 1 over the tabulated 3.1 s
        let (vx, _) = puck_velocity((-11.0, 25.5), TeamSide::Away, (-23.5, -36.5), TeamSide::Away, 3.1);
        assert!((vx - -4.0).abs() < 0.05, "{vx}");
        // opposite sides rotate the previous point by 180 degrees
        let (vx, vy) = puck_velocity((10.0, 5.0), TeamSide::Home, (-10.0, -5.0), TeamSide::Away, 2.0);
        assert_eq!((vx, vy), (0.0, 0.0));
    }

    #[test]
    fn angle_at_or_beyond_goal_line() {
        assert_eq!(shot_angle(89.0, 3.0), FRAC_PI_2);
        assert_eq!(shot_angle(95.0, -3.0), -FRAC_PI_2);
    }

    #[test]
    fn empty_file_with_header() {
        let vocab = Vocabulary::default();
        let header = SAMPLE_CSV.lines().next().unwrap();
        let parsed =
            parse_events_from_reader(header.as_bytes(), "empty", &Schema::default(), &vocab, false).unwrap();
        assert!(parsed.games.is_empty());
    }

    #[test]
    fn malformed_numeric_reports_line() {
        let vocab = Vocabulary::default();
        let bad = SAMPLE_CSV.replace("1365,126,17.5", "1365,126,abc");
        let err = parse_events_from_reader(bad.as_bytes(), "bad.csv", &Schema::default(), &vocab, false)
            .unwrap_err();
        match err {
            Error::Row { path, line, message } => {
                assert_eq!(path, "bad.csv");
                assert_eq!(line, 3);
                assert!(message.contains("abc"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let lenient =
            parse_events_from_reader(bad.as_bytes(), "bad.csv", &Schema::default(), &vocab, true).unwrap();
        assert_eq!(lenient.n_events(), 5);
        assert_eq!(lenient.warnings.len(), 1);
        assert!(lenient.warnings[0].starts_with("bad.csv:3:"));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let vocab = Vocabulary::default();
        let text = SAMPLE_CSV.replace("H/A", "Side");
        let err = parse_events_from_reader(text.as_bytes(), "x.csv", &Schema::default(), &vocab, false)
            .unwrap_err();
        assert!(matches!(err, Error::Schema { ref column, .. } if column == "H/A"), "{err}");
        let mut schema = Schema::default();
        schema.set("side", "Side").unwrap();
        assert!(parse_events_from_reader(text.as_bytes(), "x.csv", &schema, &vocab, false).is_ok());
    }

    #[test]
    fn unknown_action_names_value() {
        let vocab = Vocabulary::default();
        let text = SAMPLE_CSV.replace("Carry", "Wraparound");
        let err = parse_events_from_reader(text.as_bytes(), "x.csv", &Schema::default(), &vocab, false)
            .unwrap_err();
        assert!(err.to_string().contains("Wraparound"));
    }

    fn with_possession(ps: &[TeamSide]) -> Vec<Event> {
        let vocab = Vocabulary::default();
        ps.iter()
            .enumerate()
            .map(|(i, &p)| {
                let mut e = crate::event_model::tests::event(vocab.lookup("pass").unwrap());
                e.game_time = i as f64;
                e.possession = p;
                e
            })
            .collect()
    }

    #[test]
    fn play_numbers() {
        use TeamSide::*;
        let mut ev = with_possession(&[Away, Away, Away, Away, Home, Home]);
        assign_play_numbers(&mut ev);
        assert_eq!(ev.iter().map(|e| e.play_number).collect::<Vec<_>>(), [1, 1, 1, 1, 2, 2]);

        let mut single = with_possession(&[Home]);
        assign_play_numbers(&mut single);
        assert_eq!(single[0].play_number, 1);

        let mut alt = with_possession(&[Home, Away, Home, Away, Home, Away]);
        assign_play_numbers(&mut alt);
        assert_eq!(alt.iter().map(|e| e.play_number).collect::<Vec<_>>(), [1, 2, 3, 4, 5, 6]);
    }

    fn game_with_goals(n: usize, goals: &[(usize, TeamSide)]) -> Vec<Event> {
        let mut ev = with_possession(&vec![TeamSide::Home; n]);
        for &(i, side) in goals {
            ev[i].goal_flag = Some(side);
        }
        ev
    }

    #[test]
    fn episodes_partition_the_game() {
        let ev = game_with_goals(40, &[(9, TeamSide::Home), (24, TeamSide::Away)]);
        let eps = segment_episodes(1, &ev);
        let lens: Vec<usize> = eps.iter().map(|e| e.events.len()).collect();
        assert_eq!(lens, [10, 15, 15]);
        let terms: Vec<Terminal> = eps.iter().map(|e| e.terminal).collect();
        assert_eq!(terms, [Terminal::Home, Terminal::Away, Terminal::Neither]);
        assert_eq!(eps[2].start_index, 25);

        let none = segment_episodes(1, &game_with_goals(5, &[]));
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].terminal, Terminal::Neither);

        let last = segment_episodes(1, &game_with_goals(5, &[(4, TeamSide::Home)]));
        assert_eq!(last.len(), 1);
        assert_eq!(last[0].terminal, Terminal::Home);
    }

    #[test]
    fn trace_lengths_cap_and_reset() {
        let mut ev = with_possession(&vec![TeamSide::Home; 15]);
        assign_play_numbers(&mut ev);
        let ep = &segment_episodes(1, &ev)[0];
        let tl = compute_trace_lengths(ep);
        assert_eq!(tl, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 10, 10, 10, 10, 10]);

        let mut ev = with_possession(&[TeamSide::Home, TeamSide::Home, TeamSide::Away, TeamSide::Away]);
        assign_play_numbers(&mut ev);
        assert_eq!(compute_trace_lengths(&segment_episodes(1, &ev)[0]), [1, 2, 1, 2]);

        let mut one = with_possession(&[TeamSide::Home]);
        assign_play_numbers(&mut one);
        assert_eq!(compute_trace_lengths(&segment_episodes(1, &one)[0]), [1]);
    }

    #[test]
    fn trace_resets_at_episode_start_within_a_play() {
        let mut ev = game_with_goals(6, &[(2, TeamSide::Home)]);
        assign_play_numbers(&mut ev);
        let eps = segment_episodes(1, &ev);
        assert_eq!(compute_trace_lengths(&eps[1]), [1, 2, 3]);
    }

    #[test]
    fn sequence_windows_reconstruct_raw_events() {
        let vocab = Vocabulary::default();
        let mut ev = game_with_goals(8, &[(7, TeamSide::Home)]);
        for (i, e) in ev.iter_mut().enumerate() {
            e.obs.x = i as f64 * 3.0 - 10.0;
        }
        derive_features(&mut ev);
        assign_play_numbers(&mut ev);
        let ep = &segment_episodes(1, &ev)[0];
        let scaler = FeatureScaler::identity();
        let seq = build_sequence(ep, &scaler, &vocab).unwrap();
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.trace_lengths.len(), 8);
        assert_eq!(seq.goal(7).0, [1.0, 0.0, 0.0]);
        assert_eq!(seq.goal(6).0, [0.0, 0.0, 0.0]);
        assert_eq!(seq.trace_length(5, MAX_TRACE), 6);
        let w = seq.window(5, 3);
        let mut expected = Vec::new();
        for e in &ev[3..=5] {
            expected.extend(crate::event_model::encode_step(e, &scaler, &vocab).unwrap().0);
        }
        assert_eq!(w, expected.as_slice());
    }

    #[test]
    fn csv_writer_round_trips_raw_columns() {
        let vocab = Vocabulary::default();
        let parsed =
            parse_events_from_reader(SAMPLE_CSV.as_bytes(), "t", &Schema::default(), &vocab, false).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &Schema::default(), &vocab, &parsed.games[0].events).unwrap();
        let again =
            parse_events_from_reader(buf.as_slice(), "t", &Schema::default(), &vocab, false).unwrap();
        assert_eq!(again.games, parsed.games);
    }
}
