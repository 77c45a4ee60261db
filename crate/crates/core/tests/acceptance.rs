//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p streamnav --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamnav::cli::{cmd_bench, cmd_collect, cmd_profile};
use streamnav::config::{RunConfig, TaskChoice};
use streamnav::executor::{run_nonblocking, LatencyModel};
use streamnav::features::{grid_pool, PoolScale, TokenMatrix};
use streamnav::memory::oracle::batch_oracle;
use streamnav::memory::{MemoryState, MergeConfig};
use streamnav::metrics::{aggregate, follow_rates, spl, EpisodeOutcome};
use streamnav::policy::OraclePolicy;
use streamnav::prompt::Instruction;
use streamnav::streams::{take_frames, StreamKind};
use streamnav::world::{Episode, Goal, OccupancyGrid, Pose, Scene, TaskKind};

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("token shapes 64/4/1 per frame", token_shapes),
        ("token-count laws 64/320/321/355", token_counts),
        ("online memory equals batch recomputation", online_equals_batch),
        ("long-term running means and merge conservation", long_term_means),
        ("pooling composition", pooling_composition),
        ("constant push cost", push_cost),
        ("compression 321 vs 32000 at T=500", compression),
        ("oracle benchmarks on 4 x 100 episodes", oracle_benchmarks),
        ("metric identities", metric_identities),
        ("non-blocking golden traces", golden_traces),
        ("bench and collect determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {:>2} {name} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn scale(a: usize) -> PoolScale {
    PoolScale::new(a).unwrap()
}

fn token_shapes() -> Result<(), String> {
    let x = take_frames(StreamKind::Random, 256, 16, 3, 1).remove(0);
    for (alpha, rows) in [(2, 64), (8, 4), (16, 1)] {
        let pooled = grid_pool(&x.tokens, scale(alpha)).map_err(|e| e.to_string())?;
        ensure!(pooled.rows() == rows, "alpha {alpha}: {} rows", pooled.rows());
        ensure!(pooled.cols() == 16, "channels changed");
    }
    let cfg = MergeConfig::default();
    let mut m = MemoryState::new();
    for f in take_frames(StreamKind::Random, 256, 16, 4, 80) {
        m.push(&f, &cfg).unwrap();
    }
    ensure!(m.current().unwrap().rows() == 64, "current group");
    ensure!(m.short_term().iter().all(|s| s.rows() == 4), "short group");
    ensure!(m.long_term().iter().all(|l| l.token.rows() == 1), "long group");
    Ok(())
}

fn count_after(kind: StreamKind, t: usize) -> usize {
    let cfg = MergeConfig::default();
    let mut m = MemoryState::new();
    for f in take_frames(kind, 256, 32, 11, t) {
        m.push(&f, &cfg).unwrap();
    }
    m.token_count()
}

fn token_counts() -> Result<(), String> {
    for (kind, t, want) in [
        (StreamKind::Random, 1, 64),
        (StreamKind::Random, 65, 320),
        (StreamKind::Constant, 500, 321),
        (StreamKind::Orthogonal, 100, 355),
    ] {
        let got = count_after(kind, t);
        ensure!(got == want, "{kind:?} t={t}: {got} tokens, expected {want}");
    }
    Ok(())
}

const KINDS: [StreamKind; 4] = [
    StreamKind::Constant,
    StreamKind::Orthogonal,
    StreamKind::Random,
    StreamKind::Drift,
];

struct Case {
    frames: Vec<streamnav::features::FrameFeatures>,
    cfg: MergeConfig,
}

fn fuzz_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..200)
        .map(|_| {
            let kind = KINDS[rng.gen_range(0..KINDS.len())];
            let len = rng.gen_range(1..=600);
            let channels = [4, 8][rng.gen_range(0..2)];
            let cfg = MergeConfig {
                tau: rng.gen_range(0.5..1.0),
                ..MergeConfig::default()
            };
            Case {
                frames: take_frames(kind, 256, channels, rng.gen(), len),
                cfg,
            }
        })
        .collect()
}

fn online_equals_batch() -> Result<(), String> {
    for (i, case) in fuzz_cases().iter().enumerate() {
        let mut m = MemoryState::new();
        for f in &case.frames {
            m.push(f, &case.cfg).unwrap();
        }
        let oracle = batch_oracle(&case.frames, &case.cfg).map_err(|e| e.to_string())?;
        let diff = m.max_abs_diff(&oracle);
        ensure!(
            matches!(diff, Some(d) if d <= 1e-12),
            "stream {i} (len {}): layout or values differ ({diff:?})",
            case.frames.len()
        );
    }
    Ok(())
}

fn long_term_means() -> Result<(), String> {
    for (i, case) in fuzz_cases().iter().enumerate() {
        let mut m = MemoryState::new();
        for f in &case.frames {
            m.push(f, &case.cfg).unwrap();
        }
        let t = case.frames.len() as u64;
        let b = case.cfg.buffer_len as u64;
        let k_sum: u64 = m.long_term().iter().map(|e| e.k_merged).sum();
        ensure!(
            k_sum == t.saturating_sub(b + 1),
            "stream {i}: merged counts sum to {k_sum}"
        );
        let mut next = 0usize;
        for entry in m.long_term() {
            let members = &case.frames[next..next + entry.k_merged as usize];
            next += entry.k_merged as usize;
            let c = entry.token.cols();
            let mut mean = vec![0.0; c];
            for f in members {
                for (j, &v) in f.tokens.as_slice().iter().enumerate() {
                    mean[j % c] += v / f.tokens.rows() as f64;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            let want = TokenMatrix::new(1, c, mean).unwrap();
            let d = entry.token.max_abs_diff(&want).unwrap();
            ensure!(d <= 1e-9, "stream {i}: long token off by {d}");
        }
    }
    Ok(())
}

fn pooling_composition() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = [(2, 2), (2, 4), (4, 2), (2, 8), (8, 2), (4, 4)];
    for i in 0..1000 {
        let c = rng.gen_range(1..6);
        let data: Vec<f64> = (0..256 * c).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = TokenMatrix::new(256, c, data).unwrap();
        let (a, b) = pairs[i % pairs.len()];
        let twice = grid_pool(&grid_pool(&x, scale(a)).unwrap(), scale(b)).unwrap();
        let once = grid_pool(&x, scale(a * b)).unwrap();
        let d = twice.max_abs_diff(&once).unwrap();
        ensure!(d <= 1e-12, "matrix {i} ({a}, {b}): off by {d}");
    }
    Ok(())
}

fn profile_config(dir: &Path, stream: StreamKind, horizon: usize) -> RunConfig {
    let mut cfg = RunConfig {
        out: dir.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.profile.stream = stream;
    cfg.profile.horizon = horizon;
    cfg.profile.reps = 25;
    cfg
}

fn push_cost() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    for stream in [StreamKind::Constant, StreamKind::Orthogonal] {
        let rows = cmd_profile(&profile_config(dir.path(), stream, 600)).map_err(|e| e.to_string())?;
        let (early, late) = (&rows[9], &rows[599]);
        ensure!(
            late.pooled_rows <= early.pooled_rows + 4,
            "{stream:?}: pooling work grew from {} to {}",
            early.pooled_rows,
            late.pooled_rows
        );
        ensure!(
            late.push_micros <= 2.0 * early.push_micros,
            "{stream:?}: push took {:.3}us at t=600 vs {:.3}us at t=10",
            late.push_micros,
            early.push_micros
        );
        let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
        ensure!(csv.lines().count() == 601, "profile.csv rows");
    }
    Ok(())
}

fn compression() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_profile(&profile_config(dir.path(), StreamKind::Constant, 500)).map_err(|e| e.to_string())?;
    let last = rows.last().unwrap();
    ensure!(
        (last.merged_tokens, last.naive_tokens) == (321, 32000),
        "got {} vs {}",
        last.merged_tokens,
        last.naive_tokens
    );
    let first = &rows[0];
    ensure!((first.merged_tokens, first.naive_tokens) == (64, 64), "t=1 counts");
    let bound = |t: usize| 64 + 4 * 64 + t.saturating_sub(65);
    ensure!(
        rows.windows(2).all(|w| w[0].merged_tokens <= w[1].merged_tokens)
            && rows.iter().all(|r| r.merged_tokens <= bound(r.t as usize)),
        "merged count not monotone or above bound"
    );
    Ok(())
}

fn oracle_benchmarks() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        task: TaskChoice::All,
        episodes: 100,
        seed: 1,
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let report = cmd_bench(&cfg).map_err(|e| e.to_string())?;
    for t in &report.tasks {
        ensure!(t.episodes == 100, "{}: {} episodes", t.task, t.episodes);
        ensure!(t.sr == 100.0, "{}: SR {}", t.task, t.sr);
        if t.task.is_static() {
            ensure!(t.spl.unwrap() >= 80.0, "{}: SPL {:?}", t.task, t.spl);
        }
    }
    let eqa = report.task(TaskKind::Eqa).unwrap();
    ensure!(eqa.acc == Some(100.0), "EQA ACC {:?}", eqa.acc);
    let follow = report.task(TaskKind::Follow).unwrap();
    ensure!(follow.fr.unwrap() >= 90.0, "Follow FR {:?}", follow.fr);
    ensure!(follow.cr.unwrap() <= 5.0, "Follow CR {:?}", follow.cr);
    Ok(())
}

fn metric_identities() -> Result<(), String> {
    let s = |ok, p, l| spl(ok, p, l).unwrap();
    ensure!(s(true, 3.5, 3.5) == 1.0, "optimal success");
    ensure!(s(false, 3.5, 3.5) == 0.0 && s(false, 100.0, 2.0) == 0.0, "failure");
    ensure!(s(true, 8.0, 4.0) == 0.5, "double length");
    ensure!(spl(true, 1.0, 0.0).is_err(), "degenerate l accepted");
    ensure!(
        follow_rates(&[true, true, true, true], false) == (1.0, 0),
        "all following"
    );
    ensure!(follow_rates(&[], false) == (0.0, 0), "no steps");
    ensure!(follow_rates(&[true, false, true, true], true) == (0.75, 1), "3 of 4");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let outcomes: Vec<EpisodeOutcome> = (0..500)
        .map(|i| {
            let l = rng.gen_range(0.5..20.0);
            let p = rng.gen_range(0.0..40.0);
            let near = rng.gen_bool(0.7);
            let success = near && rng.gen_bool(0.8);
            EpisodeOutcome {
                episode_id: format!("e{i}"),
                task: TaskKind::ObjectNav,
                seed: i,
                success,
                oracle_success: Some(near),
                spl: Some(spl(success, p, l).unwrap()),
                path_length: p,
                geodesic: Some(l),
                nav_error: 0.0,
                steps: 1,
                following_steps: None,
                human_collision: None,
                answer_correct: None,
            }
        })
        .collect();
    for o in &outcomes {
        let si = o.success as u8 as f64;
        let oi = o.oracle_success.unwrap() as u8 as f64;
        ensure!(
            o.spl.unwrap() <= si && si <= oi,
            "pointwise order broken on {}",
            o.episode_id
        );
    }
    let r = aggregate(&outcomes).unwrap();
    let t = &r.tasks[0];
    ensure!(
        t.spl.unwrap() <= t.sr && t.sr <= t.osr.unwrap(),
        "aggregate order broken"
    );
    Ok(())
}

fn corridor() -> Arc<Episode> {
    let mut g = OccupancyGrid::new(30, 30);
    for i in 0..30 {
        g.set((i, 0), true);
        g.set((i, 29), true);
        g.set((0, i), true);
        g.set((29, i), true);
    }
    Arc::new(Episode::custom(
        TaskKind::Vln,
        Scene {
            grid: g,
            objects: Vec::new(),
            humans: Vec::new(),
        },
        Pose::new(3.125, 3.125, 0),
        Instruction::new("walk ahead", TaskKind::Vln),
        Goal::Vln {
            landmarks: Vec::new(),
            destination: [4.125, 3.125],
        },
    ))
}

fn golden_traces() -> Result<(), String> {
    let scenarios = [
        ("zero_latency.jsonl", 0.0, 0.0, 1.0),
        ("slow_actions.jsonl", 0.2, 0.3, 5.0),
    ];
    for (file, inference_s, comm_s, action_s) in scenarios {
        let want = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(file))
            .map_err(|e| e.to_string())?;
        let latency = LatencyModel {
            inference_s,
            comm_s,
            action_s,
        };
        let (_, trace) = run_nonblocking(corridor(), &mut OraclePolicy::with_stop_radius(0.1), latency)
            .map_err(|e| e.to_string())?;
        ensure!(trace.to_jsonl() == want, "{file} differs");
    }
    Ok(())
}

fn determinism() -> Result<(), String> {
    let run = |dagger: bool| -> Result<Vec<Vec<u8>>, String> {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            task: TaskChoice::All,
            episodes: 25,
            seed: 7,
            out: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        cfg.collect.dagger = dagger;
        cmd_bench(&cfg).map_err(|e| e.to_string())?;
        cmd_collect(&cfg).map_err(|e| e.to_string())?;
        Ok(["report.json", "episodes.csv", "samples.jsonl"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect())
    };
    for dagger in [false, true] {
        let (a, b) = (run(dagger)?, run(dagger)?);
        ensure!(a == b, "outputs differ between runs (dagger={dagger})");
        ensure!(a.iter().all(|f| !f.is_empty()), "empty output");
    }
    Ok(())
}
