//! Command-line entry point: `bench`, `profile`, `collect`, `dump-episode`, `replay`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{episode_seed, ExecMode, RunConfig, TaskChoice};
use crate::dataset::{collect_gt_samples, read_samples, write_samples, Label, SampleHeader};
use crate::error::{NavError, Result, TokenError};
use crate::executor::{run_blocking_with, run_nonblocking_with, Perception, Rollout};
use crate::memory::{MemoryState, NaiveMemory};
use crate::metrics::{aggregate, outcomes_csv, EpisodeOutcome, MetricsReport};
use crate::policy::{dagger_collect, NoisyExpert, OraclePolicy, Policy, PolicyKind, ReplayBook, UniformRandom};
use crate::streams::FrameStream;
use crate::world::{generate_episode, Episode, EpisodeState, TaskKind};

#[derive(Debug, Parser)]
#[command(name = "streamnav", version, about = "Streaming token memory and navigation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write report.json and episodes.csv.
    Bench(Common),
    /// Drive a synthetic frame stream through merged and naive memories; writes profile.csv.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        stream: Option<String>,
    },
    /// Collect labelled samples into samples.jsonl.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Roll out a noisy student and label visited states with the expert.
        #[arg(long)]
        dagger: bool,
        #[arg(long)]
        successful_only: Option<bool>,
    },
    /// Write one episode and its non-blocking event trace (episode.json, trace.jsonl).
    DumpEpisode {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Re-execute the trajectories recorded in a samples file and score them.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// e.g. `inference=0.2,comm=0.3,action=1.0`
    #[arg(long)]
    latency: Option<String>,
    /// Dotted override, repeatable: `--set merge.tau=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let json = |s: &str| serde_json::to_string(s).expect("string serializes");
        let mut sets: Vec<String> = Vec::new();
        if let Some(v) = &self.task {
            sets.push(format!("task={}", json(v)));
        }
        if let Some(v) = self.episodes {
            sets.push(format!("episodes={v}"));
        }
        if let Some(v) = self.seed {
            sets.push(format!("seed={v}"));
        }
        if let Some(v) = &self.policy {
            sets.push(format!("policy={}", json(v)));
        }
        if let Some(v) = &self.mode {
            sets.push(format!("mode={}", json(v)));
        }
        if let Some(v) = &self.out {
            sets.push(format!("out={}", json(&v.to_string_lossy())));
        }
        sets.extend(self.sets.iter().cloned());
        for s in &sets {
            cfg.set(s)?;
        }
        if let Some(l) = &self.latency {
            cfg.latency = cfg.latency.with_overrides(l)?;
        }
        Ok(cfg)
    }
}

pub fn exit_code(e: &NavError) -> i32 {
    match e {
        NavError::InvalidConfig(_) | NavError::Token(TokenError::InvalidConfig(_)) => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Bench(common) => {
            let cfg = finalize(common.resolve()?)?;
            let report = cmd_bench(&cfg)?;
            print!("{}", report.table());
        }
        Command::Profile {
            common,
            horizon,
            stream,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(h) = horizon {
                cfg.profile.horizon = h;
            }
            if let Some(s) = stream {
                cfg.profile.stream = s.parse().map_err(NavError::InvalidConfig)?;
            }
            let cfg = finalize(cfg)?;
            let rows = cmd_profile(&cfg)?;
            let last = rows.last().expect("horizon >= 1");
            println!(
                "t={} merged={} naive={} compression={:.1}x",
                last.t,
                last.merged_tokens,
                last.naive_tokens,
                last.naive_tokens as f64 / last.merged_tokens as f64
            );
        }
        Command::Collect {
            common,
            dagger,
            successful_only,
        } => {
            let mut cfg = common.resolve()?;
            cfg.collect.dagger |= dagger;
            if let Some(v) = successful_only {
                cfg.collect.successful_only = v;
            }
            let cfg = finalize(cfg)?;
            let n = cmd_collect(&cfg)?;
            println!("wrote {n} samples to {}", cfg.out.join("samples.jsonl").display());
        }
        Command::DumpEpisode { common, index } => {
            let cfg = finalize(common.resolve()?)?;
            let (rollout, events) = cmd_dump_episode(&cfg, index)?;
            println!("{} steps, {} events", rollout.trajectory.steps(), events);
        }
        Command::Replay { common, samples } => {
            let cfg = finalize(common.resolve()?)?;
            let report = cmd_replay(&cfg, &samples)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn finalize(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    Ok(cfg)
}

/// Episodes in task order, then index order.
pub fn episode_list(cfg: &RunConfig) -> Vec<(TaskKind, u64)> {
    cfg.task
        .tasks()
        .into_iter()
        .flat_map(|t| (0..cfg.episodes as u64).map(move |i| (t, episode_seed(cfg.seed, i))))
        .collect()
}

fn generate_all(cfg: &RunConfig) -> Result<Vec<Arc<Episode>>> {
    episode_list(cfg)
        .into_par_iter()
        .map(|(task, seed)| generate_episode(task, &cfg.generation, seed).map(Arc::new))
        .collect()
}

pub fn make_policy(kind: &PolicyKind, ep: &Episode, book: Option<&ReplayBook>) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Oracle => Box::new(OraclePolicy::new()),
        PolicyKind::NoisyExpert => Box::new(NoisyExpert::new(NoisyExpert::DEFAULT_EPSILON, ep.seed)),
        PolicyKind::UniformRandom => Box::new(UniformRandom::new(ep.seed)),
        PolicyKind::Replay(_) => Box::new(book.expect("replay book loaded").policy_for(&ep.id)),
    }
}

fn load_book(kind: &PolicyKind) -> Result<Option<ReplayBook>> {
    match kind {
        PolicyKind::Replay(path) => ReplayBook::load(Path::new(path)).map(Some),
        _ => Ok(None),
    }
}

fn run_one(cfg: &RunConfig, ep: Arc<Episode>, book: Option<&ReplayBook>) -> Result<Rollout> {
    let mut policy = make_policy(&cfg.policy, &ep, book);
    let mut perception = if cfg.perception {
        Some(Perception::new(cfg.features, cfg.merge)?)
    } else {
        None
    };
    match cfg.mode {
        ExecMode::Blocking => run_blocking_with(ep, policy.as_mut(), perception.as_mut()),
        ExecMode::NonBlocking => {
            run_nonblocking_with(ep, policy.as_mut(), cfg.latency, perception.as_mut()).map(|(r, _)| r)
        }
    }
}

/// Runs every configured episode and writes `report.json` and `episodes.csv`.
pub fn cmd_bench(cfg: &RunConfig) -> Result<MetricsReport> {
    let book = load_book(&cfg.policy)?;
    let episodes = generate_all(cfg)?;
    let outcomes: Vec<EpisodeOutcome> = episodes
        .par_iter()
        .map(|ep| {
            let r = run_one(cfg, ep.clone(), book.as_ref())?;
            EpisodeOutcome::from_rollout(ep, &r.trajectory, r.answer.as_deref())
        })
        .collect::<Result<_>>()?;
    write_report(cfg, &outcomes)
}

fn write_report(cfg: &RunConfig, outcomes: &[EpisodeOutcome]) -> Result<MetricsReport> {
    let report = aggregate(outcomes)?;
    fs::write(cfg.out.join("report.json"), report.to_json() + "\n")?;
    fs::write(cfg.out.join("episodes.csv"), outcomes_csv(outcomes))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub t: u64,
    pub merged_tokens: usize,
    pub naive_tokens: usize,
    /// Fastest of the timed repetitions of this push.
    pub push_micros: f64,
    pub long_entries: usize,
    /// Input tokens read by pooling during this push.
    pub pooled_rows: usize,
}

pub const PROFILE_HEADER: &str = "t,merged_tokens,naive_tokens,push_micros,long_entries,pooled_rows";

/// Writes `profile.csv`; wall-clock columns are the only nondeterministic output.
pub fn cmd_profile(cfg: &RunConfig) -> Result<Vec<ProfileRow>> {
    let stream = FrameStream::new(cfg.profile.stream, cfg.features.n_x, cfg.features.channels, cfg.seed);
    let mut merged = MemoryState::new();
    let mut naive = NaiveMemory::default();
    let mut rows = Vec::with_capacity(cfg.profile.horizon);
    for x in stream.take(cfg.profile.horizon) {
        let mut best = f64::INFINITY;
        for _ in 1..cfg.profile.reps {
            let mut probe = merged.clone();
            let start = Instant::now();
            probe.push(&x, &cfg.merge)?;
            best = best.min(start.elapsed().as_secs_f64() * 1e6);
        }
        let start = Instant::now();
        let report = merged.push(&x, &cfg.merge)?;
        best = best.min(start.elapsed().as_secs_f64() * 1e6);
        naive.push(&x, &cfg.merge)?;
        rows.push(ProfileRow {
            t: x.frame_index,
            merged_tokens: merged.token_count(),
            naive_tokens: naive.token_count(),
            push_micros: best,
            long_entries: merged.long_term().len(),
            pooled_rows: report.pooled_rows,
        });
    }
    let mut csv = String::from(PROFILE_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.3},{},{}",
            r.t, r.merged_tokens, r.naive_tokens, r.push_micros, r.long_entries, r.pooled_rows
        );
    }
    fs::write(cfg.out.join("profile.csv"), csv)?;
    Ok(rows)
}

/// Writes `samples.jsonl`; returns the sample count.
pub fn cmd_collect(cfg: &RunConfig) -> Result<usize> {
    let episodes = generate_all(cfg)?;
    let mut expert = OraclePolicy::new();
    let samples = if cfg.collect.dagger {
        dagger_collect(
            &episodes,
            &mut |ep| Box::new(NoisyExpert::new(NoisyExpert::DEFAULT_EPSILON, ep.seed)),
            &mut expert,
        )?
    } else {
        collect_gt_samples(&episodes, &mut expert, cfg.collect.successful_only)?
    };
    let header = SampleHeader::new(cfg.generation, cfg.features);
    write_samples(&cfg.out.join("samples.jsonl"), &header, &samples)?;
    Ok(samples.len())
}

/// Writes `episode.json` and the non-blocking `trace.jsonl` for one episode.
pub fn cmd_dump_episode(cfg: &RunConfig, index: u64) -> Result<(Rollout, usize)> {
    let TaskChoice::One(task) = cfg.task else {
        return Err(NavError::InvalidConfig("dump-episode needs a single --task".into()));
    };
    let book = load_book(&cfg.policy)?;
    let ep = Arc::new(generate_episode(task, &cfg.generation, episode_seed(cfg.seed, index))?);
    fs::write(cfg.out.join("episode.json"), ep.to_json() + "\n")?;
    let mut policy = make_policy(&cfg.policy, &ep, book.as_ref());
    let (rollout, trace) = run_nonblocking_with(ep, policy.as_mut(), cfg.latency, None)?;
    fs::write(cfg.out.join("trace.jsonl"), trace.to_jsonl())?;
    Ok((rollout, trace.records.len()))
}

/// Rebuilds each episode's full action sequence from its samples (the
/// longest history plus that sample's first label action) and scores it.
pub fn cmd_replay(cfg: &RunConfig, samples_path: &Path) -> Result<MetricsReport> {
    let (header, samples) = read_samples(samples_path)?;
    let mut order: Vec<String> = Vec::new();
    let mut runs: BTreeMap<String, (TaskKind, u64, Vec<crate::world::Action>, Option<String>)> = BTreeMap::new();
    for s in &samples {
        let entry = runs.entry(s.episode_id.clone()).or_insert_with(|| {
            order.push(s.episode_id.clone());
            (s.history.task, s.history.seed, Vec::new(), None)
        });
        match &s.label {
            Label::Actions(b) => {
                if s.history.actions.len() + 1 > entry.2.len() {
                    entry.2 = s.history.actions.clone();
                    entry.2.push(b.first());
                }
            }
            Label::Answer(a) => entry.3 = Some(a.clone()),
        }
    }
    let outcomes: Vec<EpisodeOutcome> = order
        .iter()
        .map(|id| {
            let (task, seed, actions, answer) = &runs[id];
            let ep = Arc::new(generate_episode(*task, &header.gen_config, *seed)?);
            let mut state = EpisodeState::new(ep.clone());
            for &a in actions {
                if state.is_done() {
                    break;
                }
                state.step(a)?;
            }
            EpisodeOutcome::from_rollout(&ep, state.trajectory(), answer.as_deref())
        })
        .collect::<Result<_>>()?;
    write_report(cfg, &outcomes)
}
