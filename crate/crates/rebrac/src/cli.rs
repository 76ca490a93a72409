//! The `rebrac` command line: dataset generation, training, evaluation,
//! ablations, expected online performance and depth scans.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rebrac_core::dataset::{episode_outcomes, generate, BehaviorPolicy, OfflineDataset};
use rebrac_core::envs::{AnyEnv, EnvKind, ScriptedPolicy, UniformPolicy};

use crate::ablation::{self, Toggle};
use crate::checkpoint;
use crate::config::{self, default_eval_episodes, read_config_file, Algorithm, RunConfig};
use crate::datafile;
use crate::error::{Error, Result};
use crate::refs;
use crate::runner::{self, RunResult, TrainSpec};
use crate::tables::{self, AblationRow, DepthRow, EvalRow, ScoreRow, ScoreTable};

/// Environment variable that overrides the default output directory.
pub const OUT_ENV: &str = "REBRAC_OUT";

#[derive(Debug, Parser)]
#[command(name = "rebrac", version, about = "Offline RL with behaviour-regularised actor-critic")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a behaviour policy and write an offline dataset.
    GenData(GenDataArgs),
    /// Train one agent per seed, or a β₁×β₂ sweep with --sweep.
    Train(TrainArgs),
    /// Evaluate checkpoints or a scripted policy.
    Eval(EvalArgs),
    /// Train the base configuration and each single-change ablation.
    Ablate(AblateArgs),
    /// Expected online performance table from a sweep's scores.csv.
    Eop(EopArgs),
    /// Sweep actor, critic and joint depth.
    DepthScan(DepthScanArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub env: String,
    /// expert, medium, random or replay.
    #[arg(long)]
    pub policy: String,
    #[arg(long, default_value_t = config::DESK_DATASET_SIZE)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file; defaults to `<out-dir>/data/<env>-<policy>.rbd`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Options shared by every command that trains agents.
#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// reach or maze; may come from the config file instead.
    #[arg(long)]
    pub env: Option<String>,
    /// rebrac or td3bc.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Flat JSON object of dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    /// Parallel training runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Width 256, one million steps, ten seeds.
    #[arg(long)]
    pub paper_protocol: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Train every (β₁, β₂) pair of the sensitivity grid.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Evaluate a scripted policy instead: expert or random.
    #[arg(long, conflicts_with = "checkpoint")]
    pub policy: Option<String>,
    /// Required with --policy.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scores file; defaults to `<out-dir>/eval.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated toggles, `all` or `none`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub toggles: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EopArgs {
    /// scores.csv written by `train --sweep`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 5, 10, 15, 20])]
    pub budgets: Vec<usize>,
    /// Table file; defaults to `eop.csv` next to the scores.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DepthScanArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4, 5, 6])]
    pub depths: Vec<usize>,
    /// Any of actor, critic, both.
    #[arg(long, value_delimiter = ',', default_values_t = ["actor".to_owned(), "critic".to_owned(), "both".to_owned()])]
    pub networks: Vec<String>,
}

/// Output directory: explicit flag, then `REBRAC_OUT`, then `fallback`.
pub fn resolve_out_dir(flag: Option<&Path>, fallback: &Path) -> PathBuf {
    match (flag, std::env::var_os(OUT_ENV)) {
        (Some(p), _) => p.to_owned(),
        (None, Some(v)) if !v.is_empty() => PathBuf::from(v),
        _ => fallback.to_owned(),
    }
}

pub fn parse_env(s: &str) -> Result<EnvKind> {
    EnvKind::parse(s).ok_or_else(|| Error::Config(format!("unknown environment {s:?}; expected reach or maze")))
}

pub fn parse_algorithm(s: &str) -> Result<Algorithm> {
    Algorithm::parse(s).ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}; expected rebrac or td3bc")))
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Eop(a) => eop(&a),
        Command::DepthScan(a) => depth_scan(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let env = parse_env(&a.env)?;
    let policy = BehaviorPolicy::preset(&a.policy)
        .ok_or_else(|| Error::Config(format!("unknown policy {:?}; expected expert, medium, random or replay", a.policy)))?;
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let path = match &a.out {
        Some(p) => p.clone(),
        None => resolve_out_dir(a.out_dir.as_deref(), Path::new("runs"))
            .join("data")
            .join(format!("{}-{}.rbd", env.name(), a.policy)),
    };
    let ds = generate(&mut AnyEnv::new(env), &policy, &a.policy, a.n, a.seed)?;
    datafile::save(&ds, &path)?;
    let (episodes, successes) = episode_outcomes(&ds);
    println!(
        "wrote {} transitions ({episodes} episodes, {successes} reached a terminal) to {}",
        ds.len(),
        path.display()
    );
    Ok(())
}

/// Everything a training command needs once flags, config file and
/// environment are merged.
struct Prepared {
    cfg: RunConfig,
    dataset: OfflineDataset,
    label: String,
    jobs: usize,
}

fn prepare(a: &RunArgs) -> Result<Prepared> {
    let file = a.config.as_deref().map(read_config_file).transpose()?;
    let from_file = |key: &str| file.as_ref().and_then(|m| m.get(key)).and_then(|v| v.as_str()).map(str::to_owned);
    let env = a
        .env
        .clone()
        .or_else(|| from_file("env"))
        .ok_or_else(|| Error::Config("--env is required".into()))?;
    let env = parse_env(&env)?;
    let algorithm = parse_algorithm(&a.algo.clone().or_else(|| from_file("algorithm")).unwrap_or_else(|| "rebrac".into()))?;
    let mut cfg = if a.paper_protocol {
        RunConfig::paper(env, algorithm, PathBuf::new())
    } else {
        RunConfig::desk(env, algorithm, PathBuf::new())
    };
    if let Some(m) = &file {
        cfg.apply_map(m)?;
    }
    for o in &a.overrides {
        cfg.apply_flag(o)?;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(s) = a.steps {
        cfg.train_steps = s;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    if let Some(e) = a.eval_episodes {
        cfg.eval_episodes = e;
    }
    let configured_out = cfg.out_dir.clone();
    cfg.out_dir = resolve_out_dir(a.out_dir.as_deref(), &configured_out);
    if cfg.dataset.as_os_str().is_empty() {
        return Err(Error::Config("--dataset is required".into()));
    }
    cfg.validate()?;
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let dataset = datafile::load(&cfg.dataset)?;
    if dataset.meta.env != env {
        return Err(Error::Config(format!(
            "{} holds {} data, not {}",
            cfg.dataset.display(),
            dataset.meta.env.name(),
            env.name()
        )));
    }
    let label = format!("{}-{}", env.name(), dataset.meta.policy_id);
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let resolved = cfg.out_dir.join("config.json");
    fs::write(&resolved, serde_json::to_string_pretty(&cfg.to_json())? + "\n").map_err(|e| Error::io(&resolved, e))?;
    Ok(Prepared {
        cfg,
        dataset,
        label,
        jobs: a.jobs,
    })
}

/// One training run of a batch: a named variant and a seed.
struct Job {
    dir: PathBuf,
    agent: rebrac_core::AgentConfig,
    seed: u64,
}

/// Trains every job, writes its outputs, and returns results in job order.
fn run_jobs(p: &Prepared, jobs: &[Job]) -> Result<Vec<RunResult>> {
    let refs = refs::pinned(p.cfg.env);
    let results = runner::run_parallel(jobs.len(), p.jobs, |i| {
        let j = &jobs[i];
        let spec = TrainSpec {
            env: p.cfg.env,
            agent: &j.agent,
            dataset: &p.dataset,
            refs: &refs,
            steps: p.cfg.train_steps,
            eval_every: p.cfg.eval_every,
            eval_episodes: p.cfg.eval_episodes,
            record_every_step: true,
        };
        let r = runner::train_seed(&spec, j.seed)?;
        runner::write_run(&j.dir, &r)?;
        eprintln!(
            "{} seed {}: normalized score {:.1}",
            j.dir.display(),
            j.seed,
            r.final_eval.normalized_score
        );
        Ok(r)
    });
    results.into_iter().collect()
}

fn seed_jobs(dir: &Path, agent: &rebrac_core::AgentConfig, seeds: &[u64]) -> Vec<Job> {
    seeds
        .iter()
        .map(|&seed| Job {
            dir: dir.to_owned(),
            agent: agent.clone(),
            seed,
        })
        .collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    let cfg = &p.cfg;
    let alg = cfg.algorithm.name();
    let mut table = ScoreTable::default();
    if a.sweep {
        let grid = config::sweep_grid(cfg.algorithm);
        let mut jobs = Vec::new();
        for &(b1, b2) in &grid {
            let mut agent = cfg.agent.clone();
            agent.beta1_actor = b1;
            agent.beta2_critic = b2;
            jobs.extend(seed_jobs(&cfg.out_dir.join(sweep_label(b1, b2)), &agent, &cfg.seeds));
        }
        let results = run_jobs(&p, &jobs)?;
        for (i, &(b1, b2)) in grid.iter().enumerate() {
            let runs = &results[i * cfg.seeds.len()..(i + 1) * cfg.seeds.len()];
            let (mean, std) = runner::score_summary(runs);
            println!("{:<20} {mean:.1} ± {std:.1}", sweep_label(b1, b2));
            table.insert(alg, &p.label, &sweep_label(b1, b2), mean)?;
        }
    } else {
        let results = run_jobs(&p, &seed_jobs(&cfg.out_dir, &cfg.agent, &cfg.seeds))?;
        for r in &results {
            table.insert(alg, &p.label, &format!("seed_{}", r.seed), r.final_eval.normalized_score)?;
        }
        let (mean, std) = runner::score_summary(&results);
        println!("{alg} on {}: {mean:.1} ± {std:.1}", p.label);
    }
    tables::write_rows(&cfg.out_dir.join("scores.csv"), &table.rows())
}

fn sweep_label(b1: f64, b2: f64) -> String {
    format!("b1={b1},b2={b2}")
}

fn eval(a: &EvalArgs) -> Result<()> {
    let out = match &a.out {
        Some(p) => p.clone(),
        None => resolve_out_dir(a.out_dir.as_deref(), Path::new("runs")).join("eval.csv"),
    };
    let mut rows = Vec::new();
    if let Some(name) = &a.policy {
        let env = parse_env(a.env.as_deref().ok_or_else(|| Error::Config("--policy needs --env".into()))?)?;
        let episodes = a.episodes.unwrap_or_else(|| default_eval_episodes(env, false));
        let r = refs::pinned(env);
        let e = match name.as_str() {
            "expert" => runner::evaluate_policy(env, &mut ScriptedPolicy::expert(), episodes, a.seed, &r)?,
            "random" => runner::evaluate_policy(env, &mut UniformPolicy::new(a.seed), episodes, a.seed, &r)?,
            _ => return Err(Error::Config(format!("unknown policy {name:?}; expected expert or random"))),
        };
        rows.push(EvalRow {
            source: name.clone(),
            env: env.name().into(),
            episodes: e.episodes,
            raw_return: e.mean_return,
            normalized_score: e.normalized_score,
        });
    } else {
        if a.checkpoint.is_empty() {
            return Err(Error::Config("give --checkpoint or --policy".into()));
        }
        for path in &a.checkpoint {
            let ck = checkpoint::load(path)?;
            let episodes = a.episodes.unwrap_or_else(|| default_eval_episodes(ck.env, false));
            let e = runner::evaluate_checkpoint(&ck, episodes, a.seed, &refs::pinned(ck.env))?;
            rows.push(EvalRow {
                source: path.display().to_string(),
                env: ck.env.name().into(),
                episodes: e.episodes,
                raw_return: e.mean_return,
                normalized_score: e.normalized_score,
            });
        }
    }
    for r in &rows {
        println!("{}: return {:.2}, normalized {:.1}", r.source, r.raw_return, r.normalized_score);
    }
    let scores: Vec<f64> = rows.iter().map(|r| r.normalized_score).collect();
    println!(
        "{}",
        tables::format_cell(Some((rebrac_core::evalstats::mean(&scores)?, rebrac_core::evalstats::std_dev(&scores)?)))
    );
    tables::write_rows(&out, &rows)
}

fn parse_toggles(names: &[String]) -> Result<Vec<Toggle>> {
    match names {
        [one] if one == "all" => Ok(Toggle::ALL.to_vec()),
        [one] if one == "none" || one.is_empty() => Ok(Vec::new()),
        _ => names.iter().map(|n| Toggle::parse(n.trim())).collect(),
    }
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let toggles = parse_toggles(&a.toggles)?;
    let p = prepare(&a.run)?;
    let cfg = &p.cfg;
    let mut variants = vec![("base".to_owned(), cfg.agent.clone())];
    for t in &toggles {
        variants.push((t.name().to_owned(), t.apply(&cfg.agent)?));
    }
    let mut jobs = Vec::new();
    for (name, agent) in &variants {
        jobs.extend(seed_jobs(&cfg.out_dir.join(name), agent, &cfg.seeds));
    }
    let results = run_jobs(&p, &jobs)?;
    let n = cfg.seeds.len();
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for (i, (name, _)) in variants.iter().enumerate() {
        let runs = &results[i * n..(i + 1) * n];
        for r in runs {
            scores.push(ScoreRow {
                algorithm: name.clone(),
                dataset: p.label.clone(),
                run: format!("seed_{}", r.seed),
                score: r.final_eval.normalized_score,
            });
        }
        let (mean, std) = runner::score_summary(runs);
        let base = rows.first().map_or(mean, |b: &AblationRow| b.mean_score);
        rows.push(AblationRow {
            variant: name.clone(),
            mean_score: mean,
            std_score: std,
            delta_pct: ablation::percent_delta(base, mean).unwrap_or(f64::NAN),
        });
    }
    for r in &rows {
        let cell = if r.variant == "base" {
            format!("{:.1}", r.mean_score)
        } else {
            ablation::format_row(rows[0].mean_score, r.mean_score)
        };
        println!("{:<20} {cell}", r.variant);
    }
    tables::write_rows(&cfg.out_dir.join("ablation_scores.csv"), &scores)?;
    tables::write_rows(&cfg.out_dir.join("ablation.csv"), &rows)
}

fn eop(a: &EopArgs) -> Result<()> {
    if a.budgets.is_empty() || a.budgets.contains(&0) {
        return Err(Error::Config("budgets must be positive".into()));
    }
    let rows: Vec<ScoreRow> = tables::read_rows(&a.scores)?;
    let table = ScoreTable::from_rows(&rows)?;
    if table.is_empty() {
        return Err(Error::Config(format!("{} holds no scores", a.scores.display())));
    }
    let eop = tables::eop_rows(&table, &a.budgets)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.scores.with_file_name("eop.csv"));
    tables::write_eop(&out, &eop)?;
    let mut stdout = std::io::stdout().lock();
    tables::render_eop(&eop, &mut stdout).map_err(|e| Error::io("<stdout>", e))?;
    stdout.flush().map_err(|e| Error::io("<stdout>", e))
}

fn depth_scan(a: &DepthScanArgs) -> Result<()> {
    if a.depths.is_empty() || a.depths.contains(&0) {
        return Err(Error::Config("depths must be positive".into()));
    }
    for n in &a.networks {
        if !["actor", "critic", "both"].contains(&n.as_str()) {
            return Err(Error::Config(format!("unknown network {n:?}; expected actor, critic or both")));
        }
    }
    let p = prepare(&a.run)?;
    let cfg = &p.cfg;
    let mut labels = Vec::new();
    let mut jobs = Vec::new();
    for net in &a.networks {
        for &d in &a.depths {
            let mut agent = cfg.agent.clone();
            if net != "critic" {
                agent.actor = agent.actor.clone().with_depth(d);
            }
            if net != "actor" {
                agent.critic = agent.critic.clone().with_depth(d);
            }
            for &seed in &cfg.seeds {
                labels.push((net.clone(), d));
                jobs.push(Job {
                    dir: cfg.out_dir.join(format!("{net}_depth_{d}")),
                    agent: agent.clone(),
                    seed,
                });
            }
        }
    }
    let results = run_jobs(&p, &jobs)?;
    let rows: Vec<DepthRow> = labels
        .into_iter()
        .zip(&results)
        .map(|((network, depth), r)| DepthRow {
            network,
            depth,
            seed: r.seed,
            score: r.final_eval.normalized_score,
        })
        .collect();
    for r in &rows {
        println!("{:<7} depth {} seed {}: {:.1}", r.network, r.depth, r.seed, r.score);
    }
    tables::write_rows(&cfg.out_dir.join("depth.csv"), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_lists() {
        assert_eq!(parse_toggles(&["all".into()]).unwrap().len(), Toggle::ALL.len());
        assert!(parse_toggles(&["none".into()]).unwrap().is_empty());
        assert_eq!(
            parse_toggles(&["shallow".into(), "default_gamma".into()]).unwrap(),
            vec![Toggle::Shallow, Toggle::DefaultGamma]
        );
        assert!(parse_toggles(&["wider".into()]).is_err());
    }

    #[test]
    fn flag_beats_fallback() {
        let p = resolve_out_dir(Some(Path::new("/a")), Path::new("/b"));
        assert_eq!(p, PathBuf::from("/a"));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with(["rebrac", "no-such-command"]), 2);
        assert_eq!(main_with(["rebrac", "gen-data", "--env", "reach", "--policy", "oracle"]), 2);
        assert_eq!(main_with(["rebrac", "eval", "--policy", "expert", "--env", "reach", "--episodes", "0"]), 2);
    }
}
