use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gim_core::eval_harness::{
    auto_correlation, eligible, metric_by_round, paired_t_test, pearson, restrict, round_by_round, spearman,
    team_rounds, write_correlation_matrix, write_curves, write_t_tests, MetricVector,
};
use gim_core::event_model::Vocabulary;
use gim_core::ingestion::{ingest, parse_events, read_sequences, write_events_csv, write_sequences, Ingested};
use gim_core::oracle_sim::{
    default_spec, read_stats_csv, simulate_season, solve_oracle_q, write_stats_csv, PlayerStats, SimModel, SimSpec,
};
use gim_core::qnet::{grad_check, init_params, load_checkpoint, save_checkpoint, NetworkConfig, NetworkParams};
use gim_core::trainer::{write_log, Optimizer, Trainer};
use gim_core::valuation::{
    impacts, rank_players, train_tabular_si, value_ticker, write_rankings_csv, write_ticker_csv, ImpactRecord,
    OracleModel, PlayerLedger,
};

use crate::config::RunConfig;
use crate::{run_dir, Command, NumericalFailure, UsageError};

pub fn dispatch(cmd: Command, mut cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    if let Command::Config(a) = &cmd {
        let text = if a.dump { RunConfig::default().to_toml() } else { cfg.to_toml() };
        print!("{text}");
        return Ok(());
    }
    apply_flags(&cmd, &mut cfg)?;
    check_inputs(&cmd)?;
    let dir = run_dir::prepare(out, &cfg.paths.runs, &cfg.to_toml(), &format!("{cmd:?}"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;
    match cmd {
        Command::Simulate(_) => simulate(&cfg, &dir),
        Command::Ingest(a) => ingest_cmd(&cfg, &a.input.events, a.input.lenient, &dir),
        Command::Train(a) => train(&cfg, &a.data, &dir),
        Command::Rank(a) => rank(&cfg, &a.checkpoint, &a.input.events, a.input.lenient, a.stats.as_deref(), &dir),
        Command::Ticker(a) => ticker(&cfg, &a.checkpoint, &a.input.events, a.input.lenient, a.game_id, &dir),
        Command::Evaluate(a) => evaluate(&cfg, &a, &dir),
        Command::CheckGrad(_) => check_grad(&cfg, &dir),
        Command::Config(_) => unreachable!(),
    }
}

fn apply_flags(cmd: &Command, cfg: &mut RunConfig) -> Result<()> {
    match cmd {
        Command::Simulate(a) => {
            set(&mut cfg.simulate.games, a.games);
            set(&mut cfg.simulate.seed, a.seed);
            if a.spec.is_some() {
                cfg.paths.sim_spec = a.spec.clone();
            }
        }
        Command::Ingest(a) => {
            if a.vocab.is_some() {
                cfg.paths.vocab = a.vocab.clone();
            }
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(&mut t.max_steps, a.max_steps);
            set(&mut t.learning_rate, a.learning_rate);
            if a.final_learning_rate.is_some() {
                t.final_learning_rate = a.final_learning_rate;
            }
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.seed, a.seed);
            set(&mut t.eval_every, a.eval_every);
            if let Some(o) = &a.optimizer {
                t.optimizer = match o.as_str() {
                    "sgd" => Optimizer::Sgd,
                    "adam" => Optimizer::Adam,
                    other => return Err(UsageError(format!("--optimizer: expected sgd or adam, got `{other}`")).into()),
                };
            }
            set(&mut cfg.network.max_trace, a.max_trace);
            set(&mut cfg.network.lstm_hidden, a.hidden);
            set(&mut cfg.network.init_seed, a.init_seed);
            cfg.train.validate().map_err(|e| UsageError(format!("[train] {e}")))?;
        }
        Command::Evaluate(a) => set(&mut cfg.evaluate.min_games, a.min_games),
        Command::CheckGrad(a) => {
            let c = &mut cfg.check_grad;
            set(&mut c.lstm_hidden, a.hidden);
            if let Some(t) = &a.trace_lengths {
                c.trace_lengths = t.clone();
            }
            set(&mut c.seed, a.seed);
            set(&mut c.tolerance, a.tolerance);
        }
        Command::Rank(_) | Command::Ticker(_) | Command::Config(_) => {}
    }
    cfg.discretization.validate().map_err(|e| UsageError(format!("[discretization] {e}")))?;
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn require(flag: &str, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(gim_core::Error::Invalid(format!("{flag}: {} does not exist", p.display())).into());
    }
    Ok(())
}

fn check_inputs(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => a.spec.iter().try_for_each(|p| require("--spec", p)),
        Command::Ingest(a) => {
            require("--events", &a.input.events)?;
            a.vocab.iter().try_for_each(|p| require("--vocab", p))
        }
        Command::Train(a) => require("--data", &a.data),
        Command::Rank(a) => {
            require("--checkpoint", &a.checkpoint)?;
            require("--events", &a.input.events)?;
            a.stats.iter().try_for_each(|p| require("--stats", p))
        }
        Command::Ticker(a) => {
            require("--checkpoint", &a.checkpoint)?;
            require("--events", &a.input.events)
        }
        Command::Evaluate(a) => {
            require("--checkpoint", &a.checkpoint)?;
            require("--events", &a.input.events)?;
            require("--stats", &a.stats)?;
            a.t1_checkpoint.iter().try_for_each(|p| require("--t1-checkpoint", p))
        }
        Command::CheckGrad(_) | Command::Config(_) => Ok(()),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("{}: cannot create", p.display()))?))
}

fn sim_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<SimModel> {
    let spec = match &cfg.paths.sim_spec {
        Some(p) => SimSpec::load(p)?,
        None => default_spec(),
    };
    Ok(SimModel::new(&spec, vocab)?)
}

fn simulate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let vocab = cfg.vocab()?;
    let model = sim_model(cfg, &vocab)?;
    let season = simulate_season(&model, cfg.simulate.games, cfg.simulate.seed);
    let events: Vec<_> = season.games.iter().flat_map(|g| g.events.iter().cloned()).collect();
    write_events_csv(create(dir, "events.csv")?, &cfg.schema()?, &vocab, &events)?;
    write_stats_csv(create(dir, "stats.csv")?, &season.stats)?;
    println!("{} games, {} events -> {}", season.games.len(), events.len(), dir.display());
    Ok(())
}

fn load_events(cfg: &RunConfig, path: &Path, lenient: bool, vocab: &Vocabulary, dir: &Path) -> Result<Vec<gim_core::ingestion::Game>> {
    let parsed = parse_events(path, &cfg.schema()?, vocab, lenient)?;
    if !parsed.warnings.is_empty() {
        let mut w = create(dir, "warnings.txt")?;
        for line in &parsed.warnings {
            writeln!(w, "{line}")?;
        }
        eprintln!("{} rows skipped, see warnings.txt", parsed.warnings.len());
    }
    Ok(parsed.games)
}

fn ingest_cmd(cfg: &RunConfig, events: &Path, lenient: bool, dir: &Path) -> Result<()> {
    let vocab = cfg.vocab()?;
    let games = load_events(cfg, events, lenient, &vocab, dir)?;
    let data = ingest(games, &vocab, None)?;
    write_sequences(&dir.join("sequences.seq"), &vocab, &data.scaler, &data.sequences)?;
    println!("{} episodes -> {}", data.sequences.len(), dir.join("sequences.seq").display());
    Ok(())
}

fn train(cfg: &RunConfig, data: &Path, dir: &Path) -> Result<()> {
    let d = read_sequences(data)?;
    let net: NetworkConfig = cfg.network.config(&d.vocab);
    let init = init_params(net, d.vocab, d.scaler, cfg.network.init_seed)?;
    let ckpts = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpts).with_context(|| format!("{}: cannot create", ckpts.display()))?;
    let outcome = Trainer::new(init, &d.sequences, cfg.train)?.run(|step, p, td| {
        save_checkpoint(p, &ckpts.join(format!("step_{step:08}.bin")))?;
        println!("step {step} eval_td_error {td}");
        Ok(())
    })?;
    save_checkpoint(&outcome.params, &dir.join("checkpoint.bin"))?;
    write_log(create(dir, "train_log.csv")?, &outcome.log)?;
    if outcome.stopped_early {
        println!("stopped early after {} steps", outcome.log.len());
    }
    println!("checkpoint -> {}", dir.join("checkpoint.bin").display());
    Ok(())
}

fn load_model(path: &Path) -> Result<NetworkParams> {
    load_checkpoint(path).with_context(|| format!("--checkpoint {}", path.display()))
}

fn model_data(cfg: &RunConfig, params: &NetworkParams, events: &Path, lenient: bool, dir: &Path) -> Result<Ingested> {
    let games = load_events(cfg, events, lenient, &params.vocab, dir)?;
    Ok(ingest(games, &params.vocab, Some(params.scaler))?)
}

fn load_stats(path: &Path) -> Result<Vec<PlayerStats>> {
    let f = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    Ok(read_stats_csv(f, &path.display().to_string())?)
}

fn rank(cfg: &RunConfig, ckpt: &Path, events: &Path, lenient: bool, stats: Option<&Path>, dir: &Path) -> Result<()> {
    let params = load_model(ckpt)?;
    let data = model_data(cfg, &params, events, lenient, dir)?;
    let stats = stats.map(load_stats).transpose()?;
    let ledger = PlayerLedger::from_impacts(&impacts(&params, &data)?);
    let rows = rank_players(&ledger, stats.as_deref());
    write_rankings_csv(create(dir, "rankings.csv")?, &rows)?;
    println!("{} players -> {}", rows.len(), dir.join("rankings.csv").display());
    Ok(())
}

fn ticker(cfg: &RunConfig, ckpt: &Path, events: &Path, lenient: bool, game_id: u64, dir: &Path) -> Result<()> {
    let params = load_model(ckpt)?;
    let data = model_data(cfg, &params, events, lenient, dir)?;
    let rows = value_ticker(&params, &data, game_id).with_context(|| format!("--game-id {game_id}"))?;
    let name = format!("ticker_{game_id}.csv");
    write_ticker_csv(create(dir, &name)?, &rows)?;
    println!("{} events -> {}", rows.len(), dir.join(name).display());
    Ok(())
}

struct Metric {
    name: &'static str,
    records: Vec<ImpactRecord>,
    season: MetricVector,
}

impl Metric {
    fn new(name: &'static str, records: Vec<ImpactRecord>) -> Self {
        let season = PlayerLedger::from_impacts(&records).values();
        Metric { name, records, season }
    }
}

fn evaluate(cfg: &RunConfig, a: &crate::EvaluateArgs, dir: &Path) -> Result<()> {
    let params = load_model(&a.checkpoint)?;
    let data = model_data(cfg, &params, &a.input.events, a.input.lenient, dir)?;
    let stats = load_stats(&a.stats)?;
    let mut metrics = vec![Metric::new("gim", impacts(&params, &data)?)];
    if let Some(p) = &a.t1_checkpoint {
        let t1 = load_checkpoint(p).with_context(|| format!("--t1-checkpoint {}", p.display()))?;
        if t1.config.max_trace != 1 {
            eprintln!("warning: --t1-checkpoint has max_trace {}", t1.config.max_trace);
        }
        let d1 = model_data(cfg, &t1, &a.input.events, a.input.lenient, dir)?;
        metrics.push(Metric::new("gim_t1", impacts(&t1, &d1)?));
    }
    let table = train_tabular_si(&data, cfg.discretization)?;
    metrics.push(Metric::new("si", impacts(&table, &data)?));
    if a.oracle {
        let model = sim_model(cfg, &params.vocab)?;
        let q = solve_oracle_q(&model)?;
        let om = OracleModel { model: &model, oracle: &q };
        metrics.push(Metric::new("oracle_gim", impacts(&om, &data)?));
    }

    let games: BTreeMap<u64, u32> = stats.iter().map(|s| (s.player_id, s.games)).collect();
    let keep: BTreeSet<u64> = eligible(&games, cfg.evaluate.min_games);
    let measure = |f: fn(&PlayerStats) -> u32| -> MetricVector {
        restrict(&stats.iter().map(|s| (s.player_id, f(s) as f64)).collect(), &keep)
    };
    let measures = [("goals", measure(|s| s.goals)), ("assists", measure(|s| s.assists)), ("points", measure(|s| s.points))];
    let seasons: Vec<(&str, MetricVector)> = metrics.iter().map(|m| (m.name, restrict(&m.season, &keep))).collect();
    let metric_refs: Vec<(&str, &MetricVector)> = seasons.iter().map(|(n, v)| (*n, v)).collect();
    let measure_refs: Vec<(&str, &MetricVector)> = measures.iter().map(|(n, v)| (*n, v)).collect();
    write_correlation_matrix(create(dir, "correlations_pearson.csv")?, &metric_refs, &measure_refs, pearson)?;
    write_correlation_matrix(create(dir, "correlations_spearman.csv")?, &metric_refs, &measure_refs, spearman)?;

    let mut tests = Vec::new();
    for (name, v) in &seasons[1..] {
        if let Ok(t) = paired_t_test(&seasons[0].1, v) {
            tests.push(("gim", *name, t));
        }
    }
    write_t_tests(create(dir, "t_tests.csv")?, &tests)?;

    let rounds = team_rounds(&data.games);
    let n_rounds = rounds.values().copied().max().unwrap_or(0);
    let points = &measures[2].1;
    let mut rbr = Vec::new();
    let mut auto = Vec::new();
    for m in &metrics {
        let per: Vec<MetricVector> = metric_by_round(&m.records, &rounds, n_rounds)?
            .iter()
            .map(|v| restrict(v, &keep))
            .collect();
        rbr.push((m.name, round_by_round(&per, points)));
        auto.push((m.name, auto_correlation(&per)));
    }
    write_curves(create(dir, "round_by_round.csv")?, &curve_refs(&rbr))?;
    write_curves(create(dir, "auto_correlation.csv")?, &curve_refs(&auto))?;

    for (name, v) in &seasons {
        match pearson(v, points) {
            Ok(r) => println!("{name}: pearson with points {r:.4}"),
            Err(e) => println!("{name}: pearson with points undefined ({e})"),
        }
    }
    println!("{} players with >= {} games; reports -> {}", keep.len(), cfg.evaluate.min_games, dir.display());
    Ok(())
}

fn curve_refs<'a>(c: &'a [(&'static str, Vec<Option<f64>>)]) -> Vec<(&'static str, &'a [Option<f64>])> {
    c.iter().map(|(n, v)| (*n, v.as_slice())).collect()
}

fn check_grad(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let c = &cfg.check_grad;
    let vocab = cfg.vocab()?;
    let mut w = create(dir, "grad_check.csv")?;
    writeln!(w, "trace_length,n_params,max_rel_error,worst_tensor,worst_index,tolerance,passed")?;
    let mut failed = Vec::new();
    for &tl in &c.trace_lengths {
        let net = NetworkConfig {
            input_width: vocab.encoded_width(),
            lstm_hidden: c.lstm_hidden,
            dense_widths: c.dense_widths,
            max_trace: tl,
        };
        let r = grad_check(&net, c.seed, c.tolerance)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.trace_length, r.n_params, r.max_rel_error, r.worst_tensor, r.worst_index, r.tolerance, r.passed
        )?;
        println!(
            "trace {tl}: {} params, max relative error {:.3e} ({}[{}]) {}",
            r.n_params,
            r.max_rel_error,
            r.worst_tensor,
            r.worst_index,
            if r.passed { "ok" } else { "FAILED" }
        );
        if !r.passed {
            failed.push(tl);
        }
    }
    w.flush()?;
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("gradient check failed at trace lengths {failed:?}")).into());
    }
    Ok(())
}
