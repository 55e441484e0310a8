//! Action impacts, player GIM, rankings and value tickers for any Q source.

mod tabular;

pub use tabular::{train_tabular_si, Discretization, TabularQ, TABULAR_TOLERANCE};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_model::{ActionId, TeamSide, Terminal};
use crate::ingestion::{Episode, Ingested, Sequence, GAME_SECONDS};
use crate::oracle_sim::{locate_event, EventTruth, OracleQ, PlayerStats, SimModel};
use crate::qnet::NetworkParams;

/// Anything that assigns `(home, away, neither)` to every step of an episode.
pub trait QModel: Sync {
    fn episode_q(&self, episode: &Episode, seq: &Sequence) -> Result<Vec<[f64; 3]>>;
}

impl QModel for NetworkParams {
    fn episode_q(&self, _episode: &Episode, seq: &Sequence) -> Result<Vec<[f64; 3]>> {
        Ok(self.predict_sequence(seq)?.into_iter().map(|q| q.0).collect())
    }
}

/// Exact Q from the simulator that generated the data.
pub struct OracleModel<'a> {
    pub model: &'a SimModel,
    pub oracle: &'a OracleQ,
}

impl QModel for OracleModel<'_> {
    fn episode_q(&self, episode: &Episode, _seq: &Sequence) -> Result<Vec<[f64; 3]>> {
        episode
            .events
            .iter()
            .enumerate()
            .map(|(i, ev)| {
                locate_event(self.model, ev)
                    .map(|t| t.oracle_q(self.oracle))
                    .ok_or_else(|| {
                        Error::Invalid(format!(
                            "game {} event {} does not belong to the simulator spec",
                            episode.game_id,
                            episode.start_index + i
                        ))
                    })
            })
            .collect()
    }
}

/// `Q_side(t) - Q_side(t - 1)`, and 0 at the first step of an episode.
pub fn impact(qs: &[[f64; 3]], t: usize, side: TeamSide) -> f64 {
    if t == 0 {
        0.0
    } else {
        qs[t][side.index()] - qs[t - 1][side.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRecord {
    pub game_id: u64,
    pub event_index: u32,
    pub player_id: u64,
    pub team_id: u64,
    pub side: TeamSide,
    pub action: ActionId,
    pub impact: f64,
}

/// Per-episode Q values for a whole dataset, in episode order.
pub fn dataset_q<M: QModel + ?Sized>(model: &M, data: &Ingested) -> Result<Vec<Vec<[f64; 3]>>> {
    data.episodes
        .par_iter()
        .zip(&data.sequences)
        .map(|(ep, seq)| model.episode_q(ep, seq))
        .collect()
}

/// Impact of every event, measured in the acting player's team head.
pub fn impacts<M: QModel + ?Sized>(model: &M, data: &Ingested) -> Result<Vec<ImpactRecord>> {
    let qs = dataset_q(model, data)?;
    let mut out = Vec::with_capacity(qs.iter().map(Vec::len).sum());
    for (seq, q) in data.sequences.iter().zip(&qs) {
        for (t, st) in seq.steps.iter().enumerate() {
            let v = impact(q, t, st.side);
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite impact in game {} event {}",
                    seq.game_id, st.event_index
                )));
            }
            out.push(ImpactRecord {
                game_id: seq.game_id,
                event_index: st.event_index,
                player_id: st.player_id,
                team_id: st.team_id,
                side: st.side,
                action: st.action,
                impact: v,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlayerEntry {
    pub player_id: u64,
    pub team_id: u64,
    pub gim: f64,
    pub action_counts: BTreeMap<ActionId, u32>,
    pub games: u32,
}

/// Per-player totals keyed by player id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlayerLedger {
    pub players: BTreeMap<u64, PlayerEntry>,
}

impl PlayerLedger {
    /// Sums impacts in record order.
    pub fn from_impacts(records: &[ImpactRecord]) -> Self {
        let mut players: BTreeMap<u64, PlayerEntry> = BTreeMap::new();
        let mut seen: BTreeSet<(u64, u64)> = BTreeSet::new();
        for r in records {
            let e = players.entry(r.player_id).or_insert_with(|| PlayerEntry {
                player_id: r.player_id,
                team_id: r.team_id,
                ..PlayerEntry::default()
            });
            e.gim += r.impact;
            *e.action_counts.entry(r.action).or_insert(0) += 1;
            if seen.insert((r.player_id, r.game_id)) {
                e.games += 1;
            }
        }
        PlayerLedger { players }
    }

    pub fn gim(&self, player: u64) -> f64 {
        self.players.get(&player).map_or(0.0, |e| e.gim)
    }

    /// Descending GIM, ties by ascending player id.
    pub fn sorted(&self) -> Vec<&PlayerEntry> {
        let mut v: Vec<&PlayerEntry> = self.players.values().collect();
        v.sort_by(|a, b| b.gim.total_cmp(&a.gim).then(a.player_id.cmp(&b.player_id)));
        v
    }

    pub fn values(&self) -> BTreeMap<u64, f64> {
        self.players.iter().map(|(&k, e)| (k, e.gim)).collect()
    }
}

pub fn compute_gim<M: QModel + ?Sized>(model: &M, data: &Ingested) -> Result<PlayerLedger> {
    Ok(PlayerLedger::from_impacts(&impacts(model, data)?))
}

/// GIM with a tabular Q.
pub fn si_gim(table: &TabularQ, data: &Ingested) -> Result<PlayerLedger> {
    compute_gim(table, data)
}

pub fn oracle_gim(model: &SimModel, oracle: &OracleQ, data: &Ingested) -> Result<PlayerLedger> {
    compute_gim(&OracleModel { model, oracle }, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub rank: usize,
    pub player_id: u64,
    pub gim: f64,
    pub goals: Option<u32>,
    pub assists: Option<u32>,
    pub points: Option<u32>,
    pub games: u32,
}

/// Ranking table; stats, when given, supply goals, assists, points and games.
pub fn rank_players(ledger: &PlayerLedger, stats: Option<&[PlayerStats]>) -> Vec<RankRow> {
    let by_id: BTreeMap<u64, &PlayerStats> = stats
        .unwrap_or(&[])
        .iter()
        .map(|s| (s.player_id, s))
        .collect();
    ledger
        .sorted()
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let s = by_id.get(&e.player_id);
            RankRow {
                rank: i + 1,
                player_id: e.player_id,
                gim: e.gim,
                goals: s.map(|s| s.goals),
                assists: s.map(|s| s.assists),
                points: s.map(|s| s.points),
                games: s.map_or(e.games, |s| s.games),
            }
        })
        .collect()
}

fn opt(v: Option<u32>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `rank,player_id,gim,goals,assists,points,games`
pub fn write_rankings_csv<W: Write>(mut w: W, rows: &[RankRow]) -> std::io::Result<()> {
    writeln!(w, "rank,player_id,gim,goals,assists,points,games")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rank,
            r.player_id,
            r.gim,
            opt(r.goals),
            opt(r.assists),
            opt(r.points),
            r.games
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickerRow {
    pub game_time: f64,
    pub q: [f64; 3],
}

/// Q for every event of one game, in time order.
pub fn value_ticker<M: QModel + ?Sized>(model: &M, data: &Ingested, game_id: u64) -> Result<Vec<TickerRow>> {
    let mut rows = Vec::new();
    let mut found = false;
    for (ep, seq) in data.episodes.iter().zip(&data.sequences) {
        if ep.game_id != game_id {
            continue;
        }
        found = true;
        let q = model.episode_q(ep, seq)?;
        rows.extend(seq.steps.iter().zip(q).map(|(st, q)| TickerRow {
            game_time: st.game_time,
            q,
        }));
    }
    if !found {
        return Err(Error::Invalid(format!("game {game_id} not found in the data")));
    }
    Ok(rows)
}

/// `game_time,q_home,q_away,q_neither`
pub fn write_ticker_csv<W: Write>(mut w: W, rows: &[TickerRow]) -> std::io::Result<()> {
    writeln!(w, "game_time,q_home,q_away,q_neither")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.game_time, r.q[0], r.q[1], r.q[2])?;
    }
    Ok(())
}

/// Mean `q_neither` over the first and last `fraction` of regulation time.
/// `None` when either window has no events.
pub fn neither_open_close(rows: &[TickerRow], fraction: f64) -> Option<(f64, f64)> {
    let mean = |pred: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = rows.iter().filter(|r| pred(r.game_time)).map(|r| r.q[Terminal::Neither.index()]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let open = mean(&|t| t <= fraction * GAME_SECONDS)?;
    let close = mean(&|t| t >= (1.0 - fraction) * GAME_SECONDS)?;
    Some((open, close))
}

/// Learned-vs-exact error for one simulator (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellError {
    pub state: usize,
    pub action: usize,
    pub visits: u64,
    /// Mean over visits of the largest per-component `|q - q*|`.
    pub mean_error: f64,
}

/// Compares `learned` with the exact simulator Q on every non-goal event,
/// grouped by (state, action). Cells come back in index order.
pub fn oracle_cell_errors<M: QModel + ?Sized>(
    model: &SimModel,
    oracle: &OracleQ,
    data: &Ingested,
    learned: &M,
) -> Result<Vec<CellError>> {
    let exact = dataset_q(&OracleModel { model, oracle }, data)?;
    let got = dataset_q(learned, data)?;
    let mut acc: BTreeMap<(usize, usize), (f64, u64)> = BTreeMap::new();
    for (ep, (want, have)) in data.episodes.iter().zip(exact.iter().zip(&got)) {
        for (ev, (w, h)) in ep.events.iter().zip(want.iter().zip(have)) {
            if let Some(EventTruth::Action { cell, .. }) = locate_event(model, ev) {
                let err = (0..3).map(|k| (w[k] - h[k]).abs()).fold(0.0, f64::max);
                let sa = cell / 2;
                let e = acc.entry((sa / model.n_actions(), sa % model.n_actions())).or_insert((0.0, 0));
                e.0 += err;
                e.1 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((state, action), (sum, visits))| CellError {
            state,
            action,
            visits,
            mean_error: sum / visits as f64,
        })
        .collect())
}

/// Mean of `mean_error` over cells with at least `min_visits` visits, and that cell count.
pub fn mean_cell_error(cells: &[CellError], min_visits: u64) -> (f64, usize) {
    let kept: Vec<f64> = cells.iter().filter(|c| c.visits >= min_visits).map(|c| c.mean_error).collect();
    if kept.is_empty() {
        return (f64::NAN, 0);
    }
    (kept.iter().sum::<f64>() / kept.len() as f64, kept.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{FeatureScaler, Vocabulary};
    use crate::ingestion::{ingest, parse_events_from_reader, Game, Schema};
    use crate::oracle_sim::{default_spec, simulate_season, solve_oracle_q};
    use crate::qnet::{init_params, NetworkConfig, Weights};
    use proptest::prelude::*;

    /// Fixed per-event Q chosen by a closure of (game, event index).
    struct Scripted<F>(F);

    impl<F: Fn(u64, u32) -> [f64; 3] + Sync> QModel for Scripted<F> {
        fn episode_q(&self, _: &Episode, seq: &Sequence) -> Result<Vec<[f64; 3]>> {
            Ok(seq.steps.iter().map(|s| (self.0)(seq.game_id, s.event_index)).collect())
        }
    }

    fn pseudo_q(g: u64, i: u32) -> [f64; 3] {
        let h = ((g * 31 + i as u64 * 17) % 97) as f64 / 97.0;
        let a = (1.0 - h) * (((g + i as u64 * 7) % 13) as f64 / 13.0);
        [h, a, 1.0 - h - a]
    }

    fn season(n: usize, seed: u64) -> (Vec<Game>, SimModel) {
        let m = SimModel::new(&default_spec(), &Vocabulary::default()).unwrap();
        (simulate_season(&m, n, seed).games, m)
    }

    const SMALL: &str = "GID,PID,GT,TID,X,Y,MP,GD,Action,OC,P,H/A\n\
        1,10,1,1,0,0,EV,0,pass,S,H,H\n\
        1,11,2,1,30,5,EV,0,shot,S,H,H\n\
        1,11,2,1,30,5,EV,0,goal,S,H,H\n\
        1,20,3,2,0,0,EV,-1,carry,S,A,A\n\
        1,10,4,1,10,0,EV,1,pass,F,H,H\n";

    fn small() -> Ingested {
        let vocab = Vocabulary::default();
        let p = parse_events_from_reader(SMALL.as_bytes(), "t", &Schema::default(), &vocab, false).unwrap();
        ingest(p.games, &vocab, None).unwrap()
    }

    #[test]
    fn impact_is_a_difference_and_zero_at_episode_start() {
        let qs = [[0.3, 0.5, 0.2], [0.4, 0.4, 0.2], [0.4, 0.4, 0.2]];
        assert_eq!(impact(&qs, 0, TeamSide::Home), 0.0);
        assert!((impact(&qs, 1, TeamSide::Home) - 0.1).abs() < 1e-15);
        assert!((impact(&qs, 1, TeamSide::Away) + 0.1).abs() < 1e-15);
        assert_eq!(impact(&qs, 2, TeamSide::Home), 0.0);
    }

    #[test]
    fn attribution_on_a_small_game() {
        let data = small();
        assert_eq!(data.episodes.len(), 2);
        let q = |_: u64, i: u32| [[0.3, 0.3, 0.4], [0.6, 0.2, 0.2], [1.0, 0.0, 0.0], [0.3, 0.3, 0.4], [0.25, 0.4, 0.35]][i as usize];
        let recs = impacts(&Scripted(q), &data).unwrap();
        let got: Vec<(u64, f64)> = recs.iter().map(|r| (r.player_id, r.impact)).collect();
        let want = [(10, 0.0), (11, 0.3), (11, 0.4), (20, 0.0), (10, -0.05)];
        for (g, w) in got.iter().zip(want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-12, "{got:?}");
        }
        let ledger = PlayerLedger::from_impacts(&recs);
        assert!((ledger.gim(11) - 0.7).abs() < 1e-12);
        assert_eq!(ledger.gim(99), 0.0);
        assert_eq!(ledger.players[&10].games, 1);
        assert_eq!(ledger.players[&11].action_counts.values().sum::<u32>(), 2);
        let ranks = rank_players(&ledger, None);
        assert_eq!(ranks.iter().map(|r| r.player_id).collect::<Vec<_>>(), vec![11, 20, 10]);
    }

    #[test]
    fn ties_rank_by_player_id_and_empty_ledger_is_empty() {
        let mut l = PlayerLedger::default();
        for id in [7, 3, 5] {
            l.players.insert(id, PlayerEntry { player_id: id, gim: 1.5, ..Default::default() });
        }
        let r = rank_players(&l, None);
        assert_eq!(r.iter().map(|r| r.player_id).collect::<Vec<_>>(), vec![3, 5, 7]);
        assert_eq!(r[0].rank, 1);
        assert!(rank_players(&PlayerLedger::default(), None).is_empty());
        let mut buf = Vec::new();
        write_rankings_csv(&mut buf, &r[..1]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,player_id,gim,goals,assists,points,games\n1,3,1.5,,,,0\n");
    }

    #[test]
    fn single_player_team_collects_all_team_impacts() {
        let (mut games, _) = season(2, 5);
        for g in &mut games {
            for e in &mut g.events {
                if e.obs.side == TeamSide::Home {
                    e.player_id = 1;
                }
            }
        }
        let data = ingest(games, &Vocabulary::default(), None).unwrap();
        let model = Scripted(pseudo_q);
        let recs = impacts(&model, &data).unwrap();
        let team_sum: f64 = recs.iter().filter(|r| r.side == TeamSide::Home).map(|r| r.impact).sum();
        assert!((PlayerLedger::from_impacts(&recs).gim(1) - team_sum).abs() < 1e-9);
    }

    #[test]
    fn telescoping_and_zero_sum_with_a_network() {
        let (games, _) = season(2, 9);
        let vocab = Vocabulary::default();
        let data = ingest(games, &vocab, None).unwrap();
        let cfg = NetworkConfig {
            input_width: vocab.encoded_width(),
            lstm_hidden: 8,
            dense_widths: [8, 8],
            max_trace: 10,
        };
        let p = init_params(cfg, vocab, data.scaler, 3).unwrap();
        let qs = dataset_q(&p, &data).unwrap();
        for q in &qs {
            let t_len = q.len() - 1;
            for side in [TeamSide::Home, TeamSide::Away] {
                let sum: f64 = (1..q.len()).map(|t| impact(q, t, side)).sum();
                let direct = q[t_len][side.index()] - q[0][side.index()];
                assert!((sum - direct).abs() <= 1e-9 * (t_len.max(1) as f64));
            }
            for t in 1..q.len() {
                let z: f64 = (0..3).map(|k| q[t][k] - q[t - 1][k]).sum();
                assert!(z.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gim_is_additive_over_disjoint_datasets() {
        let (games, _) = season(6, 2);
        let vocab = Vocabulary::default();
        let scaler = FeatureScaler::identity();
        let model = Scripted(pseudo_q);
        let all = compute_gim(&model, &ingest(games.clone(), &vocab, Some(scaler)).unwrap()).unwrap();
        let (a, b) = games.split_at(2);
        let la = compute_gim(&model, &ingest(a.to_vec(), &vocab, Some(scaler)).unwrap()).unwrap();
        let lb = compute_gim(&model, &ingest(b.to_vec(), &vocab, Some(scaler)).unwrap()).unwrap();
        for (&id, e) in &all.players {
            assert!((e.gim - la.gim(id) - lb.gim(id)).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_ledger_and_ticker() {
        let (games, m) = season(4, 1);
        let q = solve_oracle_q(&m).unwrap();
        let data = ingest(games, &Vocabulary::default(), None).unwrap();
        let ledger = oracle_gim(&m, &q, &data).unwrap();
        assert_eq!(ledger.players.len(), 4 * 2 * 5);
        let oracle = OracleModel { model: &m, oracle: &q };
        let rows = value_ticker(&oracle, &data, 2).unwrap();
        assert!(rows.windows(2).all(|w| w[0].game_time <= w[1].game_time));
        for r in &rows {
            assert!((r.q.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let (open, close) = neither_open_close(&rows, 0.05).unwrap();
        assert!(close > open);
        assert!(value_ticker(&oracle, &data, 99).unwrap_err().to_string().contains("99"));
    }

    #[test]
    fn oracle_has_zero_cell_error_and_uniform_does_not() {
        let (games, m) = season(3, 6);
        let q = solve_oracle_q(&m).unwrap();
        let data = ingest(games, &Vocabulary::default(), None).unwrap();
        let exact = oracle_cell_errors(&m, &q, &data, &OracleModel { model: &m, oracle: &q }).unwrap();
        assert!(exact.iter().all(|c| c.mean_error == 0.0));
        assert!(exact.windows(2).all(|w| (w[0].state, w[0].action) < (w[1].state, w[1].action)));
        let flat = Scripted(|_, _| [1.0 / 3.0; 3]);
        let cells = oracle_cell_errors(&m, &q, &data, &flat).unwrap();
        let (mean, n) = mean_cell_error(&cells, 50);
        assert!(n > 0 && mean > 0.2, "{mean}");
        assert_eq!(mean_cell_error(&cells, u64::MAX).1, 0);
        let events: u64 = cells.iter().map(|c| c.visits).sum();
        let goals = data.episodes.iter().filter(|e| e.terminal != Terminal::Neither).count() as u64;
        assert_eq!(events + goals, data.episodes.iter().map(|e| e.events.len() as u64).sum::<u64>());
    }

    #[test]
    fn zero_weight_network_gives_a_flat_ticker() {
        let (games, _) = season(1, 4);
        let vocab = Vocabulary::default();
        let data = ingest(games, &vocab, None).unwrap();
        let cfg = NetworkConfig {
            input_width: vocab.encoded_width(),
            lstm_hidden: 4,
            dense_widths: [4, 4],
            max_trace: 10,
        };
        let mut p = init_params(cfg, vocab, data.scaler, 0).unwrap();
        p.weights = Weights::zeros(&cfg);
        for r in value_ticker(&p, &data, 1).unwrap() {
            for v in r.q {
                assert!((v - 1.0 / 3.0).abs() < 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_the_order(exp in -20i32..20, seed in 0u64..1000) {
            // Powers of two scale exactly, so exact ties stay ties.
            let scale = 2f64.powi(exp);
            let recs: Vec<ImpactRecord> = (0..200u64)
                .map(|i| ImpactRecord {
                    game_id: 1,
                    event_index: i as u32,
                    player_id: (i * 7 + seed) % 13,
                    team_id: 1,
                    side: TeamSide::Home,
                    action: ActionId(0),
                    impact: (((i * 2654435761 + seed) % 1000) as f64 - 500.0) / 1000.0,
                })
                .collect();
            let scaled: Vec<ImpactRecord> = recs.iter().cloned().map(|mut r| { r.impact *= scale; r }).collect();
            let a: Vec<u64> = PlayerLedger::from_impacts(&recs).sorted().iter().map(|e| e.player_id).collect();
            let b: Vec<u64> = PlayerLedger::from_impacts(&scaled).sorted().iter().map(|e| e.player_id).collect();
            prop_assert_eq!(a, b);
        }
    }
}
