//! The three experiment drivers behind the CLI subcommands.

use std::path::{Path, PathBuf};

use fairgame_core::inference::plug_in_noise_sd;
use fairgame_core::rng::derive_seed;
use fairgame_core::{
    analytic_fisher, banzhaf, build_game, limiting_game, pairs, run, run_stats, shapley_exact, shapley_mc, Attribution,
    CharacteristicFunction, Coalition, DataSet, FairShareConfig, FisherMatrix, PlayerData, PlayerModel, RateLimits,
    RunRecord, ValueOptions,
};
use rayon::prelude::*;

use crate::config::{ConceptSpec, ExperimentConfig, ExperimentKind, Resolved};
use crate::error::{CliError, Result};
use crate::output::{
    record_rows, render_records, render_summary, render_svg, render_synthetic, summary_rows, OutputSet, Series, Style,
    SyntheticRow,
};

const SYNTHETIC_STREAM: u64 = 0x53594e;
const FAIRSHARE_STREAM: u64 = 0x465348;
const VALUATE_STREAM: u64 = 0x56414c;

/// Runs `f` on a pool sized by `FAIRGAME_THREADS`, or on the global pool when unset.
pub fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var("FAIRGAME_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize =
                v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                    CliError::Config(format!("FAIRGAME_THREADS must be a positive integer, got {v:?}"))
                })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

fn noise_sd_for_limit(model: &PlayerModel) -> Option<f64> {
    match model {
        PlayerModel::Linear(m) if !m.noise_known() => Some(m.true_noise_sd()),
        _ => None,
    }
}

fn pair_diffs(phi: &Attribution) -> Vec<f64> {
    pairs(phi.n()).into_iter().map(|(i, j)| phi.values[i] - phi.values[j]).collect()
}

/// Draws `counts[i]` points for every player and evaluates the full game.
fn sampled_game(resolved: &Resolved, counts: &[usize], seed: u64, mc_samples: usize) -> Result<CharacteristicFunction> {
    let n = resolved.players();
    let mut models = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n);
    for (i, &count) in counts.iter().enumerate() {
        let mut source = resolved.source(i, seed)?;
        let points = source
            .draw(count)
            .map_err(|_| CliError::Numerical(fairgame_core::Error::SourceExhausted { player: i, iteration: 0 }))?;
        models.push(source.model().clone());
        data.push(DataSet::new(i, points));
    }
    let noise = models.iter().zip(&data).map(|(m, d)| plug_in_noise_sd(m, d, None)).collect::<Result<Vec<_>, _>>()?;
    let players: Vec<PlayerData<'_>> =
        models.iter().zip(&data).zip(&noise).map(|((m, d), s)| PlayerData::with_noise(m, d, *s)).collect();
    Ok(build_game(&players, &resolved.prior, &ValueOptions { mc_samples, seed: derive_seed(seed, &[u64::MAX]) })?)
}

/// Shapley differences of the limiting game built from each player's analytic Fisher.
pub fn limiting_differences(resolved: &Resolved) -> Result<Vec<f64>> {
    let fishers = (0..resolved.players())
        .map(|i| {
            let source = resolved.source(i, 0)?;
            Ok(analytic_fisher(source.model(), noise_sd_for_limit(source.model()))?)
        })
        .collect::<Result<Vec<FisherMatrix>>>()?;
    Ok(pair_diffs(&shapley_exact(&limiting_game(&fishers)?)?))
}

/// Pairwise Shapley differences over an m-grid and repeated trials.
pub fn synthetic_rows(resolved: &Resolved) -> Result<Vec<SyntheticRow>> {
    let cfg = &resolved.config;
    let sec = &cfg.synthetic;
    if sec.m_grid.is_empty() || sec.trials == 0 {
        return Err(CliError::Config("synthetic: m_grid and trials must be non-empty".into()));
    }
    let n = resolved.players();
    let limit = limiting_differences(resolved)?;
    let jobs: Vec<(usize, usize)> = sec.m_grid.iter().flat_map(|&m| (0..sec.trials).map(move |t| (m, t))).collect();
    let per_job = jobs
        .par_iter()
        .map(|&(m, t)| {
            let seed = derive_seed(cfg.seed, &[SYNTHETIC_STREAM, m as u64, t as u64]);
            let game = sampled_game(resolved, &vec![m; n], seed, sec.mc_samples)?;
            Ok(pair_diffs(&shapley_exact(&game)?))
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut rows = Vec::with_capacity(jobs.len() * limit.len());
    for (&(m, trial), diffs) in jobs.iter().zip(per_job) {
        for ((pair, d), l) in pairs(n).into_iter().zip(diffs).zip(&limit) {
            rows.push(SyntheticRow { m, trial, pair, shapley_diff: d, limit: *l });
        }
    }
    Ok(rows)
}

pub fn synthetic_plot(rows: &[SyntheticRow]) -> Result<Vec<u8>> {
    let mut labels: Vec<(usize, usize)> = rows.iter().map(|r| r.pair).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut series = Vec::new();
    for (c, &pair) in labels.iter().enumerate() {
        let of_pair: Vec<&SyntheticRow> = rows.iter().filter(|r| r.pair == pair).collect();
        series.push(Series {
            name: format!("Δ{}{}", pair.0 + 1, pair.1 + 1),
            points: of_pair.iter().map(|r| ((r.m as f64).log2(), r.shapley_diff)).collect(),
            style: Style::Points,
            colour: c,
        });
        let (lo, hi) = of_pair.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            let x = (r.m as f64).log2();
            (a.min(x), b.max(x))
        });
        series.push(Series {
            name: format!("limit Δ{}{}", pair.0 + 1, pair.1 + 1),
            points: vec![(lo, of_pair[0].limit), (hi, of_pair[0].limit)],
            style: Style::Dashed,
            colour: c,
        });
    }
    render_svg("Pairwise Shapley differences", "log2 m", "φi − φj", &series)
}

pub fn fairshare_config(resolved: &Resolved) -> FairShareConfig {
    let sec = &resolved.config.fairshare;
    let n = resolved.players();
    let initial = sec.initial_counts.clone().unwrap_or_else(|| vec![FairShareConfig::warm_up_count(resolved.dim()); n]);
    let rates = RateLimits { base_rate: sec.base_rate, min_rate: sec.min_rate, max_rate: sec.max_rate };
    let mut fs = FairShareConfig::new(resolved.prior.clone(), initial, rates, sec.iterations, resolved.config.seed);
    fs.burn_in = sec.burn_in;
    fs.delta_threshold = sec.delta_threshold;
    fs.window = sec.window;
    fs.fisher_mode = resolved.fisher_mode();
    fs.mc_samples = sec.mc_samples;
    fs
}

/// Runs the online fair-sharing loop for the configured players.
pub fn fairshare_records(resolved: &Resolved) -> Result<(FairShareConfig, Vec<RunRecord>)> {
    let fs = fairshare_config(resolved);
    fs.validate(resolved.players()).map_err(|e| CliError::Config(e.to_string()))?;
    let stream = derive_seed(resolved.config.seed, &[FAIRSHARE_STREAM]);
    let mut sources = (0..resolved.players()).map(|i| resolved.source(i, stream)).collect::<Result<Vec<_>>>()?;
    let records = run(&fs, &mut sources)?;
    Ok((fs, records))
}

fn per_player_plot(
    records: &[RunRecord],
    title: &str,
    y_label: &str,
    value: impl Fn(&RunRecord, usize) -> f64,
) -> Result<Vec<u8>> {
    let n = records.first().map(|r| r.counts.len()).unwrap_or(0);
    let series: Vec<Series> = (0..n)
        .map(|p| Series {
            name: format!("P{}", p + 1),
            points: records.iter().map(|r| (r.iteration as f64, value(r, p))).collect(),
            style: Style::Line,
            colour: p,
        })
        .collect();
    render_svg(title, "iteration", y_label, &series)
}

pub fn shapley_plot(records: &[RunRecord]) -> Result<Vec<u8>> {
    per_player_plot(records, "Shapley value vs. iteration", "φi", |r, p| r.shapley[p])
}

pub fn counts_plot(records: &[RunRecord]) -> Result<Vec<u8>> {
    per_player_plot(records, "Cumulative count vs. iteration", "mi", |r, p| r.counts[p] as f64)
}

/// One-shot valuation of fixed per-player counts.
pub fn valuation(resolved: &Resolved) -> Result<(CharacteristicFunction, Option<Attribution>, Option<Attribution>)> {
    let sec = &resolved.config.valuate;
    let n = resolved.players();
    let counts = sec.counts.clone().unwrap_or_else(|| vec![100; n]);
    if counts.len() != n {
        return Err(CliError::Config(format!("valuate.counts: {} entries for {n} players", counts.len())));
    }
    let seed = derive_seed(resolved.config.seed, &[VALUATE_STREAM]);
    let game = sampled_game(resolved, &counts, seed, sec.mc_samples)?;
    let shap = matches!(sec.concept, ConceptSpec::Shapley | ConceptSpec::Both)
        .then(|| {
            if n <= fairgame_core::game::MAX_EXACT_PLAYERS {
                shapley_exact(&game)
            } else {
                shapley_mc(&game, sec.permutations, derive_seed(seed, &[1]))
            }
        })
        .transpose()?;
    let banz = matches!(sec.concept, ConceptSpec::Banzhaf | ConceptSpec::Both).then(|| banzhaf(&game)).transpose()?;
    Ok((game, shap, banz))
}

fn render_valuation(
    game: &CharacteristicFunction,
    shap: Option<&Attribution>,
    banz: Option<&Attribution>,
) -> (Vec<u8>, Vec<u8>) {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["coalition", "value", "std_error"]).expect("in-memory write");
    let se = game.std_errors();
    for s in Coalition::all(game.n()) {
        let members: Vec<String> = s.members().map(|i| i.to_string()).collect();
        let e = se.map(|e| e[s.index()]).unwrap_or(0.0);
        w.write_record([members.join(" "), game.value(s).to_string(), e.to_string()]).expect("in-memory write");
    }
    let game_csv = w.into_inner().expect("in-memory writer");

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["player", "shapley", "banzhaf"]).expect("in-memory write");
    for p in 0..game.n() {
        let cell = |a: Option<&Attribution>| a.map(|a| a.values[p].to_string()).unwrap_or_default();
        w.write_record([p.to_string(), cell(shap), cell(banz)]).expect("in-memory write");
    }
    (game_csv, w.into_inner().expect("in-memory writer"))
}

/// Resolves, runs and writes one experiment; returns the written files.
pub fn run_experiment(config: ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let resolved = config.resolve(base_dir)?;
    let kind = resolved.config.experiment;
    let mut outputs = OutputSet::new(out);
    with_threads(|| -> Result<()> {
        match kind {
            ExperimentKind::Synthetic => {
                let rows = synthetic_rows(&resolved)?;
                outputs.add("synthetic.csv", render_synthetic(&rows)?);
                outputs.add("synthetic.svg", synthetic_plot(&rows)?);
            }
            ExperimentKind::Fairshare => {
                let (fs, records) = fairshare_records(&resolved)?;
                outputs.add("records.csv", render_records(&record_rows(&records))?);
                outputs.add("summary.csv", render_summary(&summary_rows(&run_stats(&records, &fs)?))?);
                outputs.add("shapley.svg", shapley_plot(&records)?);
                outputs.add("counts.svg", counts_plot(&records)?);
            }
            ExperimentKind::Valuate => {
                let (game, shap, banz) = valuation(&resolved)?;
                let (game_csv, attribution_csv) = render_valuation(&game, shap.as_ref(), banz.as_ref());
                outputs.add("game.csv", game_csv);
                outputs.add("attribution.csv", attribution_csv);
            }
        }
        Ok(())
    })??;
    outputs.write_with_manifest(kind.name(), resolved.config.seed, &resolved.config, &resolved.inputs)
}
