//! Correlations, paired t-tests, round-by-round curves and report writers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingestion::Game;
use crate::valuation::ImpactRecord;

/// One metric over one slice of data, keyed by player id.
pub type MetricVector = BTreeMap<u64, f64>;

pub const DEFAULT_MIN_GAMES: u32 = 5;

/// Values of both vectors over their common players, in player id order.
pub fn common(a: &MetricVector, b: &MetricVector) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .filter_map(|(k, &x)| b.get(k).map(|&y| (x, y)))
        .unzip()
}

/// Keeps only the listed players.
pub fn restrict(v: &MetricVector, players: &BTreeSet<u64>) -> MetricVector {
    v.iter()
        .filter(|(k, _)| players.contains(k))
        .map(|(&k, &x)| (k, x))
        .collect()
}

/// Players with at least `min_games` games.
pub fn eligible(games: &BTreeMap<u64, u32>, min_games: u32) -> BTreeSet<u64> {
    games
        .iter()
        .filter(|(_, &g)| g >= min_games)
        .map(|(&k, _)| k)
        .collect()
}

fn check_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 common players, got {n}")));
    }
    Ok(())
}

fn centered(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("metric vector has a non-finite value".into()));
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    Ok(x.iter().map(|v| v - m).collect())
}

pub fn pearson_slices(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len());
    check_len(x.len())?;
    let (cx, cy) = (centered(x)?, centered(y)?);
    let sxx: f64 = cx.iter().map(|v| v * v).sum();
    let syy: f64 = cy.iter().map(|v| v * v).sum();
    for (name, s) in [("first", sxx), ("second", syy)] {
        if s == 0.0 {
            return Err(Error::Invalid(format!("{name} vector has zero variance")));
        }
    }
    let sxy: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(a: &MetricVector, b: &MetricVector) -> Result<f64> {
    let (x, y) = common(a, b);
    pearson_slices(&x, &y)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_slices(x: &[f64], y: &[f64]) -> Result<f64> {
    centered(x)?;
    centered(y)?;
    pearson_slices(&average_ranks(x), &average_ranks(y))
}

pub fn spearman(a: &MetricVector, b: &MetricVector) -> Result<f64> {
    let (x, y) = common(a, b);
    spearman_slices(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Two-sided paired t-test on `a - b` over common players. A constant nonzero
/// difference gives `t = ±inf` and `p = 0`. The p value comes from the
/// regularized incomplete beta function and is accurate to about 1e-8.
pub fn paired_t_test(a: &MetricVector, b: &MetricVector) -> Result<TTest> {
    let (x, y) = common(a, b);
    check_len(x.len())?;
    let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
    let n = d.len();
    let c = centered(&d)?;
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = c.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        if mean == 0.0 {
            return Err(Error::Invalid("paired differences are all zero".into()));
        }
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            n,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    Ok(TTest {
        t,
        p: (2.0 * dist.sf(t.abs())).min(1.0),
        n,
    })
}

/// Round of each (game, team): the team's 1-based game count in game id order.
pub fn team_rounds(games: &[Game]) -> BTreeMap<(u64, u64), u32> {
    let mut order: Vec<&Game> = games.iter().collect();
    order.sort_by_key(|g| g.game_id);
    let mut played: BTreeMap<u64, u32> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for g in order {
        let teams: BTreeSet<u64> = g.events.iter().map(|e| e.team_id).collect();
        for t in teams {
            let n = played.entry(t).or_insert(0);
            *n += 1;
            out.insert((g.game_id, t), *n);
        }
    }
    out
}

/// Cumulative per-player impact totals after rounds `1..=n_rounds`. Every player
/// seen anywhere appears in every round, with 0 before their first event.
pub fn metric_by_round(
    records: &[ImpactRecord],
    rounds: &BTreeMap<(u64, u64), u32>,
    n_rounds: u32,
) -> Result<Vec<MetricVector>> {
    let mut per_round = vec![MetricVector::new(); n_rounds as usize];
    let players: BTreeSet<u64> = records.iter().map(|r| r.player_id).collect();
    for r in records {
        let round = *rounds.get(&(r.game_id, r.team_id)).ok_or_else(|| {
            Error::Invalid(format!("game {} team {} has no round", r.game_id, r.team_id))
        })?;
        if round >= 1 && round <= n_rounds {
            *per_round[round as usize - 1].entry(r.player_id).or_insert(0.0) += r.impact;
        }
    }
    let mut acc: MetricVector = players.iter().map(|&p| (p, 0.0)).collect();
    Ok(per_round
        .into_iter()
        .map(|inc| {
            for (p, v) in inc {
                *acc.get_mut(&p).unwrap() += v;
            }
            acc.clone()
        })
        .collect())
}

/// Pearson of each round's cumulative metric with a season-total measure;
/// `None` where fewer than 2 players qualify or a vector is constant.
pub fn round_by_round(per_round: &[MetricVector], season: &MetricVector) -> Vec<Option<f64>> {
    per_round.iter().map(|v| pearson(v, season).ok()).collect()
}

/// Correlation of each round's cumulative metric with its own final total.
pub fn auto_correlation(per_round: &[MetricVector]) -> Vec<Option<f64>> {
    match per_round.last() {
        Some(last) => round_by_round(per_round, last),
        None => Vec::new(),
    }
}

/// `metric,<measure>...` matrix of `corr(metric, measure)`; failed cells are empty.
pub fn write_correlation_matrix<W: Write>(
    mut w: W,
    metrics: &[(&str, &MetricVector)],
    measures: &[(&str, &MetricVector)],
    corr: fn(&MetricVector, &MetricVector) -> Result<f64>,
) -> std::io::Result<()> {
    write!(w, "metric")?;
    for (name, _) in measures {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (name, m) in metrics {
        write!(w, "{name}")?;
        for (_, s) in measures {
            match corr(m, s) {
                Ok(r) => write!(w, ",{r}")?,
                Err(_) => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `round,<curve>...` with empty cells for undefined rounds.
pub fn write_curves<W: Write>(mut w: W, curves: &[(&str, &[Option<f64>])]) -> std::io::Result<()> {
    write!(w, "round")?;
    for (name, _) in curves {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let n = curves.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for i in 0..n {
        write!(w, "{}", i + 1)?;
        for (_, c) in curves {
            match c.get(i).copied().flatten() {
                Some(r) => write!(w, ",{r}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `a,b,n,t,p`
pub fn write_t_tests<W: Write>(mut w: W, rows: &[(&str, &str, TTest)]) -> std::io::Result<()> {
    writeln!(w, "a,b,n,t,p")?;
    for (a, b, r) in rows {
        writeln!(w, "{a},{b},{},{},{}", r.n, r.t, r.p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{ActionId, TeamSide};
    use proptest::prelude::*;

    fn mv(v: &[f64]) -> MetricVector {
        v.iter().enumerate().map(|(i, &x)| (i as u64, x)).collect()
    }

    #[test]
    fn pearson_examples() {
        let a = mv(&[1.0, 2.0, 3.0]);
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &mv(&[-1.0, -2.0, -3.0])).unwrap() + 1.0).abs() < 1e-12);
        // 3 / sqrt(2 * 4.666...)
        let r = pearson(&a, &mv(&[1.0, 2.0, 4.0])).unwrap();
        assert!((r - 3.0 / (2.0f64 * 14.0 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.982).abs() < 1e-3);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let a = mv(&[1.0, 2.0, 3.0]);
        let err = pearson(&a, &mv(&[5.0, 5.0, 5.0])).unwrap_err().to_string();
        assert!(err.contains("second"), "{err}");
        assert!(pearson(&mv(&[1.0]), &mv(&[2.0])).is_err());
        let disjoint: MetricVector = [(10, 1.0), (11, 2.0)].into();
        assert!(pearson(&a, &disjoint).is_err());
        assert!(pearson(&a, &mv(&[1.0, f64::NAN, 2.0])).is_err());
    }

    #[test]
    fn only_common_players_count() {
        let a: MetricVector = [(1, 1.0), (2, 2.0), (3, 3.0), (4, 100.0)].into();
        let b: MetricVector = [(1, 2.0), (2, 4.0), (3, 6.0), (9, -5.0)].into();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        let a = mv(&[1.0, 2.0, 3.0, 4.0]);
        // 1 - 6 * 2 / (4 * 15)
        assert!((spearman(&a, &mv(&[1.0, 3.0, 2.0, 4.0])).unwrap() - 0.8).abs() < 1e-12);
        assert!((spearman(&a, &mv(&[1.0, 8.0, 27.0, 1000.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &mv(&[4.0, 3.0, 2.0, 1.0])).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn t_test_examples() {
        let d = mv(&[1.0, -1.0, 2.0, -2.0, 3.0]);
        let zero = mv(&[0.0; 5]);
        let r = paired_t_test(&d, &zero).unwrap();
        // mean 0.6, sd sqrt(17.2 / 4), t = 0.6 / (sd / sqrt 5)
        let t = 0.6 / ((17.2f64 / 4.0).sqrt() / 5f64.sqrt());
        assert!((r.t - t).abs() < 1e-12);
        assert!((r.t - 0.647).abs() < 1e-3);
        assert!((r.p - 0.55289).abs() < 1e-4, "{}", r.p);
        assert_eq!(r.n, 5);
        assert!(paired_t_test(&d, &d).is_err());
        let shifted: MetricVector = d.iter().map(|(&k, &v)| (k, v - 2.0)).collect();
        let c = paired_t_test(&d, &shifted).unwrap();
        assert_eq!((c.t, c.p), (f64::INFINITY, 0.0));
        assert_eq!(paired_t_test(&shifted, &d).unwrap().t, f64::NEG_INFINITY);
    }

    #[test]
    fn t_test_p_matches_a_known_quantile() {
        // t = 2.776445 is the two-sided 5% point with 4 degrees of freedom.
        let dist = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        assert!((2.0 * dist.sf(2.776445105) - 0.05).abs() < 1e-8);
    }

    fn rec(game: u64, team: u64, player: u64, impact: f64) -> ImpactRecord {
        ImpactRecord {
            game_id: game,
            event_index: 0,
            player_id: player,
            team_id: team,
            side: TeamSide::Home,
            action: ActionId(0),
            impact,
        }
    }

    #[test]
    fn rounds_accumulate_and_end_at_the_season_total() {
        let rounds: BTreeMap<(u64, u64), u32> =
            [((1, 1), 1), ((1, 2), 1), ((2, 1), 2), ((3, 2), 2)].into();
        let recs = [
            rec(1, 1, 10, 1.0),
            rec(1, 2, 20, 0.5),
            rec(2, 1, 10, -2.0),
            rec(3, 2, 20, 1.0),
            rec(3, 2, 21, 3.0),
        ];
        let per = metric_by_round(&recs, &rounds, 2).unwrap();
        assert_eq!(per[0], [(10, 1.0), (20, 0.5), (21, 0.0)].into());
        assert_eq!(per[1], [(10, -1.0), (20, 1.5), (21, 3.0)].into());
        let auto = auto_correlation(&per);
        assert_eq!(auto.len(), 2);
        assert!((auto[1].unwrap() - 1.0).abs() < 1e-12);
        let season = per[1].clone();
        assert_eq!(round_by_round(&per, &season)[1], pearson(&season, &season).ok());
        let flat = vec![mv(&[1.0, 1.0]), mv(&[1.0, 2.0])];
        assert_eq!(auto_correlation(&flat)[0], None);
        assert!(metric_by_round(&[rec(9, 9, 1, 1.0)], &rounds, 2).is_err());
    }

    #[test]
    fn report_writers() {
        let a = mv(&[1.0, 2.0, 3.0]);
        let c = mv(&[1.0, 1.0, 1.0]);
        let mut buf = Vec::new();
        write_correlation_matrix(&mut buf, &[("gim", &a)], &[("ranks", &a), ("flat", &c)], spearman).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,ranks,flat\ngim,1,\n");
        let mut buf = Vec::new();
        write_curves(&mut buf, &[("gim", &[None, Some(0.5)][..])]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "round,gim\n1,\n2,0.5\n");
        let mut buf = Vec::new();
        write_t_tests(&mut buf, &[("x", "y", TTest { t: 1.5, p: 0.25, n: 3 })]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b,n,t,p\nx,y,3,1.5,0.25\n");
    }

    #[test]
    fn eligibility_filter() {
        let games: BTreeMap<u64, u32> = [(1, 4), (2, 5), (3, 9)].into();
        let keep = eligible(&games, DEFAULT_MIN_GAMES);
        assert_eq!(keep, [2, 3].into());
        assert_eq!(restrict(&mv(&[0.0, 1.0, 2.0, 3.0]), &keep), [(2, 2.0), (3, 3.0)].into());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-100.0f64..100.0, n),
                proptest::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn correlations_are_symmetric_bounded_and_affine_invariant(
            (x, y) in vec_pair(), scale in 0.1f64..10.0, shift in -50.0f64..50.0,
        ) {
            let (a, b) = (mv(&x), mv(&y));
            let b2: MetricVector = b.iter().map(|(&k, &v)| (k, scale * v + shift)).collect();
            for corr in [pearson, spearman] {
                let (Ok(r), Ok(s)) = (corr(&a, &b), corr(&b, &a)) else { continue };
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - s).abs() < 1e-12);
                if let Ok(r2) = corr(&a, &b2) {
                    prop_assert!((r - r2).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn t_test_is_antisymmetric((x, y) in vec_pair()) {
            let (a, b) = (mv(&x), mv(&y));
            if let (Ok(r), Ok(s)) = (paired_t_test(&a, &b), paired_t_test(&b, &a)) {
                prop_assert!((r.t + s.t).abs() < 1e-9 * r.t.abs().max(1.0));
                prop_assert!((r.p - s.p).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&r.p));
            }
        }
    }
}
