//! Event records, the action vocabulary, goal vectors and the fixed-width
//! numeric encoding shared by ingestion, training and valuation.
//!
//! Encoded step layout (width `ENCODED_FIXED_WIDTH + vocabulary.len()`):
//!
//! | slots   | content                                                        |
//! |---------|----------------------------------------------------------------|
//! | 0..8    | z-scored x, y, vx, vy, time_remain, score_diff, duration, angle |
//! | 8..11   | manpower one-hot (EV, SH, PP)                                  |
//! | 11      | outcome: successful +1, failure -1                             |
//! | 12      | acting side: Home +1, Away -1                                  |
//! | 13..    | action one-hot                                                 |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The 13 action types used when no vocabulary file is supplied.
pub const DEFAULT_ACTIONS: [&str; 13] = [
    "shot",
    "block",
    "assist",
    "pass",
    "carry",
    "lpr",
    "check",
    "goal",
    "dump-in",
    "dump-out",
    "reception",
    "faceoff",
    "puck-protection",
];

pub const GOAL_ACTION: &str = "goal";

/// Number of z-scored continuous features.
pub const N_CONTINUOUS: usize = 8;
/// Slots before the action one-hot: continuous, manpower (3), outcome, side.
pub const ENCODED_FIXED_WIDTH: usize = N_CONTINUOUS + 3 + 2;

pub const CONTINUOUS_NAMES: [&str; N_CONTINUOUS] = [
    "x",
    "y",
    "vx",
    "vy",
    "time_remain",
    "score_diff",
    "duration",
    "angle",
];

/// Index of an action in a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub u16);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered list of action names. The index of a name is its one-hot slot and is
/// persisted with every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            names: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Case and punctuation insensitive key: "Dump-In", "dump_in" and "DUMPIN" match.
fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

impl Vocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Invalid("action vocabulary is empty".into()));
        }
        if names.len() > u16::MAX as usize {
            return Err(Error::Invalid("action vocabulary too large".into()));
        }
        for (i, a) in names.iter().enumerate() {
            if a.trim().is_empty() {
                return Err(Error::Invalid(format!("empty action name at index {i}")));
            }
            if names[..i].iter().any(|b| normalize(a) == normalize(b)) {
                return Err(Error::Invalid(format!("duplicate action name `{a}`")));
            }
        }
        Ok(Vocabulary { names })
    }

    /// One name per line; the line number (from 0) is the index. Blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        Vocabulary::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ActionId) -> &str {
        &self.names[id.index()]
    }

    pub fn lookup(&self, name: &str) -> Result<ActionId> {
        let key = normalize(name);
        self.names
            .iter()
            .position(|n| normalize(n) == key)
            .map(|i| ActionId(i as u16))
            .ok_or_else(|| Error::UnknownAction(name.to_string()))
    }

    pub fn goal(&self) -> Option<ActionId> {
        self.lookup(GOAL_ACTION).ok()
    }

    pub fn encoded_width(&self) -> usize {
        ENCODED_FIXED_WIDTH + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TeamSide {
    Home,
    Away,
}

impl TeamSide {
    pub fn opponent(self) -> TeamSide {
        match self {
            TeamSide::Home => TeamSide::Away,
            TeamSide::Away => TeamSide::Home,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            TeamSide::Home => 1.0,
            TeamSide::Away => -1.0,
        }
    }

    /// Index of this side's component in a (Home, Away, Neither) triple.
    pub fn index(self) -> usize {
        match self {
            TeamSide::Home => 0,
            TeamSide::Away => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            TeamSide::Home => "H",
            TeamSide::Away => "A",
        }
    }
}

impl FromStr for TeamSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" | "home" => Ok(TeamSide::Home),
            "a" | "away" => Ok(TeamSide::Away),
            other => Err(format!("invalid team side `{other}`")),
        }
    }
}

/// Manpower from the acting team's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Manpower {
    Even,
    ShortHanded,
    PowerPlay,
}

impl Manpower {
    pub const ALL: [Manpower; 3] = [Manpower::Even, Manpower::ShortHanded, Manpower::PowerPlay];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The same situation seen by the other team.
    pub fn mirrored(self) -> Manpower {
        match self {
            Manpower::Even => Manpower::Even,
            Manpower::ShortHanded => Manpower::PowerPlay,
            Manpower::PowerPlay => Manpower::ShortHanded,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Manpower::Even => "EV",
            Manpower::ShortHanded => "SH",
            Manpower::PowerPlay => "PP",
        }
    }
}

impl FromStr for Manpower {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ev" | "even" | "evenstrength" => Ok(Manpower::Even),
            "sh" | "shorthanded" | "short-handed" => Ok(Manpower::ShortHanded),
            "pp" | "powerplay" | "power-play" => Ok(Manpower::PowerPlay),
            other => Err(format!("invalid manpower `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn code(self) -> &'static str {
        match self {
            Outcome::Success => "S",
            Outcome::Failure => "F",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "successful" | "success" | "succeed" => Ok(Outcome::Success),
            "f" | "failure" | "fail" | "failed" => Ok(Outcome::Failure),
            other => Err(format!("invalid outcome `{other}`")),
        }
    }
}

/// Per-event features. Coordinates are in the acting player's adjusted frame:
/// negative x is that player's defensive zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub time_remain: f64,
    pub score_diff: i32,
    pub manpower: Manpower,
    pub duration: f64,
    pub outcome: Outcome,
    pub angle: f64,
    pub side: TeamSide,
}

impl Observation {
    fn continuous(&self) -> [f64; N_CONTINUOUS] {
        [
            self.x,
            self.y,
            self.vx,
            self.vy,
            self.time_remain,
            self.score_diff as f64,
            self.duration,
            self.angle,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub game_id: u64,
    pub player_id: u64,
    pub team_id: u64,
    pub game_time: f64,
    pub action: ActionId,
    pub obs: Observation,
    /// Team in possession of the puck (the `P` column).
    pub possession: TeamSide,
    pub play_number: u32,
    /// Scoring side when this event is a goal.
    pub goal_flag: Option<TeamSide>,
}

/// How a goal-scoring episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Home,
    Away,
    Neither,
}

impl Terminal {
    pub fn index(self) -> usize {
        match self {
            Terminal::Home => 0,
            Terminal::Away => 1,
            Terminal::Neither => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Terminal> {
        match i {
            0 => Some(Terminal::Home),
            1 => Some(Terminal::Away),
            2 => Some(Terminal::Neither),
            _ => None,
        }
    }
}

impl From<TeamSide> for Terminal {
    fn from(side: TeamSide) -> Self {
        match side {
            TeamSide::Home => Terminal::Home,
            TeamSide::Away => Terminal::Away,
        }
    }
}

/// Reward signal ordered (Home, Away, Neither): one-hot on the terminal step of
/// an episode, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GoalVector(pub [f64; 3]);

impl GoalVector {
    pub const ZERO: GoalVector = GoalVector([0.0; 3]);

    pub fn is_terminal(&self) -> bool {
        self.0.iter().any(|&v| v != 0.0)
    }

    pub fn terminal(&self) -> Option<Terminal> {
        self.0
            .iter()
            .position(|&v| v == 1.0)
            .and_then(Terminal::from_index)
    }
}

pub fn goal_vector(terminal: Option<Terminal>) -> GoalVector {
    let mut g = [0.0; 3];
    if let Some(t) = terminal {
        g[t.index()] = 1.0;
    }
    GoalVector(g)
}

/// Population mean/variance accumulator (Welford), mergeable across partitions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }

    pub fn population_std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

/// Per-feature z-score parameters for the continuous slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaler {
    pub mean: [f64; N_CONTINUOUS],
    pub std: [f64; N_CONTINUOUS],
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler {
            mean: [0.0; N_CONTINUOUS],
            std: [1.0; N_CONTINUOUS],
        }
    }

    pub fn from_moments(moments: &[Moments; N_CONTINUOUS]) -> Self {
        let mut scaler = FeatureScaler::identity();
        for (i, m) in moments.iter().enumerate() {
            scaler.mean[i] = m.mean;
            let sd = m.population_std();
            // zero-variance features would otherwise divide by zero
            scaler.std[i] = if sd > 1e-12 { sd } else { 1.0 };
        }
        scaler
    }
}

pub fn fit_scaler<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<FeatureScaler> {
    let mut moments = [Moments::default(); N_CONTINUOUS];
    for ev in events {
        for (m, v) in moments.iter_mut().zip(ev.obs.continuous()) {
            m.push(v);
        }
    }
    if moments[0].count == 0 {
        return Err(Error::Invalid("cannot fit a feature scaler on zero events".into()));
    }
    Ok(FeatureScaler::from_moments(&moments))
}

/// One encoded time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStep(pub Vec<f32>);

impl EncodedStep {
    pub fn width(&self) -> usize {
        self.0.len()
    }
}

/// Encodes into a caller-provided buffer of exactly `vocab.encoded_width()` slots.
pub fn encode_into(
    event: &Event,
    scaler: &FeatureScaler,
    vocab: &Vocabulary,
    out: &mut [f32],
) -> Result<()> {
    if event.action.index() >= vocab.len() {
        return Err(Error::UnknownAction(format!(
            "action index {} (vocabulary has {} entries)",
            event.action.0,
            vocab.len()
        )));
    }
    assert_eq!(out.len(), vocab.encoded_width(), "encode buffer width");
    out.fill(0.0);
    for (i, v) in event.obs.continuous().into_iter().enumerate() {
        out[i] = ((v - scaler.mean[i]) / scaler.std[i]) as f32;
    }
    out[N_CONTINUOUS + event.obs.manpower.index()] = 1.0;
    out[N_CONTINUOUS + 3] = match event.obs.outcome {
        Outcome::Success => 1.0,
        Outcome::Failure => -1.0,
    };
    out[N_CONTINUOUS + 4] = event.obs.side.sign() as f32;
    out[ENCODED_FIXED_WIDTH + event.action.index()] = 1.0;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!(
            "non-finite feature in game {} at t={}",
            event.game_id, event.game_time
        )));
    }
    Ok(())
}

pub fn encode_step(event: &Event, scaler: &FeatureScaler, vocab: &Vocabulary) -> Result<EncodedStep> {
    let mut v = vec![0.0; vocab.encoded_width()];
    encode_into(event, scaler, vocab, &mut v)?;
    Ok(EncodedStep(v))
}

impl fmt::Display for TeamSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn event(action: ActionId) -> Event {
        Event {
            game_id: 1,
            player_id: 7,
            team_id: 3,
            game_time: 0.0,
            action,
            obs: Observation {
                x: 0.0,
                y: 0.0,
                vx: 0.0,
                vy: 0.0,
                time_remain: 0.0,
                score_diff: 0,
                manpower: Manpower::Even,
                duration: 0.0,
                outcome: Outcome::Success,
                angle: 0.0,
                side: TeamSide::Home,
            },
            possession: TeamSide::Home,
            play_number: 1,
            goal_flag: None,
        }
    }

    #[test]
    fn degenerate_feature_gets_unit_std() {
        let vocab = Vocabulary::default();
        let mut e = event(vocab.lookup("shot").unwrap());
        e.obs.x = 5.0;
        let s = fit_scaler(&[e.clone(), e.clone(), e]).unwrap();
        assert_eq!(s.mean[0], 5.0);
        assert_eq!(s.std[0], 1.0);
    }

    #[test]
    fn population_std_of_two_points() {
        let vocab = Vocabulary::default();
        let mut a = event(vocab.lookup("shot").unwrap());
        let mut b = a.clone();
        a.obs.x = 0.0;
        b.obs.x = 2.0;
        let s = fit_scaler(&[a, b]).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.std[0], 1.0);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(fit_scaler(std::iter::empty()).is_err());
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs = [1.0, 4.0, -2.5, 7.0, 3.25, 0.5];
        let mut whole = Moments::default();
        let (mut a, mut b) = (Moments::default(), Moments::default());
        for (i, &x) in xs.iter().enumerate() {
            whole.push(x);
            if i < 2 { a.push(x) } else { b.push(x) }
        }
        let merged = a.merge(&b);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.population_std() - whole.population_std()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_layout() {
        let vocab = Vocabulary::default();
        let shot = vocab.lookup("shot").unwrap();
        let enc = encode_step(&event(shot), &FeatureScaler::identity(), &vocab).unwrap();
        let v = &enc.0;
        assert_eq!(v.len(), 26);
        assert_eq!(&v[8..11], &[1.0, 0.0, 0.0]);
        assert_eq!(v[11], 1.0);
        assert_eq!(v[12], 1.0);
        for (i, &slot) in v[13..].iter().enumerate() {
            assert_eq!(slot, if i == shot.index() { 1.0 } else { 0.0 });
        }
        let again = encode_step(&event(shot), &FeatureScaler::identity(), &vocab).unwrap();
        assert_eq!(enc, again);
    }

    #[test]
    fn out_of_vocabulary_action_is_rejected() {
        let vocab = Vocabulary::new(["pass", "shot"]).unwrap();
        let err = encode_step(&event(ActionId(5)), &FeatureScaler::identity(), &vocab).unwrap_err();
        assert!(err.to_string().contains("action index 5"));
        assert!(matches!(vocab.lookup("Wraparound"), Err(Error::UnknownAction(n)) if n == "Wraparound"));
    }

    #[test]
    fn lookup_ignores_case_and_punctuation() {
        let vocab = Vocabulary::default();
        assert_eq!(vocab.lookup("Lpr").unwrap(), vocab.lookup("lpr").unwrap());
        assert_eq!(vocab.lookup("Dump_In").unwrap(), vocab.lookup("dump-in").unwrap());
        assert!(Vocabulary::new(["pass", "PASS"]).is_err());
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let vocab = Vocabulary::default();
        assert_eq!(Vocabulary::from_text(&vocab.to_text()).unwrap(), vocab);
    }

    #[test]
    fn goal_vectors() {
        assert_eq!(goal_vector(None).0, [0.0, 0.0, 0.0]);
        assert_eq!(goal_vector(Some(Terminal::Home)).0, [1.0, 0.0, 0.0]);
        assert_eq!(goal_vector(Some(Terminal::Away)).0, [0.0, 1.0, 0.0]);
        assert_eq!(goal_vector(Some(Terminal::Neither)).0, [0.0, 0.0, 1.0]);
        assert_eq!(goal_vector(Some(Terminal::Away)).terminal(), Some(Terminal::Away));
        assert!(!goal_vector(None).is_terminal());
    }
}
