//! Episode outcomes and their aggregation into per-task reports.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::world::{check_success, Episode, TaskKind, Trajectory};

/// Success weighted by path length: `S * l / max(p, l)`.
pub fn spl(success: bool, p: f64, l: f64) -> Result<f64> {
    if l.is_nan() || l <= 0.0 {
        return Err(NavError::DegenerateEpisode(l));
    }
    Ok(if success { l / p.max(l) } else { 0.0 })
}

/// Per-episode following rate and collision contribution.
pub fn follow_rates(flags: &[bool], collided: bool) -> (f64, u32) {
    let fr = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    (fr, collided as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub success: bool,
    /// `None` where the task defines no oracle success.
    pub oracle_success: Option<bool>,
    pub spl: Option<f64>,
    /// Trajectory length in meters.
    pub path_length: f64,
    /// Grid geodesic from start to the goal; `None` for moving goals.
    pub geodesic: Option<f64>,
    pub nav_error: f64,
    pub steps: u32,
    pub following_steps: Option<u32>,
    pub human_collision: Option<bool>,
    pub answer_correct: Option<bool>,
}

impl EpisodeOutcome {
    pub fn from_rollout(ep: &Episode, traj: &Trajectory, answer: Option<&str>) -> Result<Self> {
        let rec = check_success(ep, traj, answer);
        let p = traj.path_length();
        let (geodesic, spl_value) = if ep.task.is_static() {
            let l = ep.geodesic_to_goal().unwrap_or(0.0);
            (Some(l), Some(spl(rec.success, p, l)?))
        } else {
            (None, None)
        };
        let follow = ep.task == TaskKind::Follow;
        Ok(Self {
            episode_id: ep.id.clone(),
            task: ep.task,
            seed: ep.seed,
            success: rec.success,
            oracle_success: rec.oracle_success,
            spl: spl_value,
            path_length: p,
            geodesic,
            nav_error: rec.nav_error,
            steps: traj.steps() as u32,
            following_steps: follow.then(|| rec.following.iter().filter(|&&f| f).count() as u32),
            human_collision: follow.then_some(rec.human_collision),
            answer_correct: rec.answer_correct,
        })
    }

    pub fn following_rate(&self) -> Option<f64> {
        self.following_steps.map(|f| {
            if self.steps == 0 {
                0.0
            } else {
                f as f64 / self.steps as f64
            }
        })
    }

    pub const CSV_HEADER: &'static str = "episode_id,task,seed,success,oracle_success,spl,path_length,geodesic,nav_error,steps,following_steps,human_collision,answer_correct";

    pub fn csv_row(&self) -> String {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        fn optf(v: Option<f64>) -> String {
            v.map(|v| format!("{v:.6}")).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{:.6},{},{:.6},{},{},{},{}",
            self.episode_id,
            self.task,
            self.seed,
            self.success,
            opt(self.oracle_success),
            optf(self.spl),
            self.path_length,
            optf(self.geodesic),
            self.nav_error,
            self.steps,
            opt(self.following_steps),
            opt(self.human_collision),
            opt(self.answer_correct),
        )
    }
}

pub fn outcomes_csv(outcomes: &[EpisodeOutcome]) -> String {
    let mut out = String::from(EpisodeOutcome::CSV_HEADER);
    out.push('\n');
    for o in outcomes {
        out.push_str(&o.csv_row());
        out.push('\n');
    }
    out
}

/// Rates are percentages in [0, 100]; lengths are means in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: TaskKind,
    pub episodes: usize,
    pub sr: f64,
    pub osr: Option<f64>,
    pub spl: Option<f64>,
    pub tl: f64,
    pub ne: f64,
    pub fr: Option<f64>,
    pub cr: Option<f64>,
    pub acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub tasks: Vec<TaskMetrics>,
}

impl MetricsReport {
    pub fn task(&self, task: TaskKind) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per task.
    pub fn table(&self) -> String {
        let header = ["task", "episodes", "SR", "OSR", "SPL", "TL", "NE", "FR", "CR", "ACC"];
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
        let rows: Vec<Vec<String>> = self
            .tasks
            .iter()
            .map(|t| {
                vec![
                    t.task.to_string(),
                    t.episodes.to_string(),
                    cell(Some(t.sr)),
                    cell(t.osr),
                    cell(t.spl),
                    format!("{:.2}", t.tl),
                    format!("{:.2}", t.ne),
                    cell(t.fr),
                    cell(t.cr),
                    cell(t.acc),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
            .collect();
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for r in &rows {
            line(r.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn percent(flags: impl Iterator<Item = bool>) -> Option<f64> {
    mean(flags.map(|f| if f { 100.0 } else { 0.0 }))
}

pub fn aggregate(outcomes: &[EpisodeOutcome]) -> Result<MetricsReport> {
    if outcomes.is_empty() {
        return Err(NavError::EmptyInput);
    }
    let mut by_task: BTreeMap<TaskKind, Vec<&EpisodeOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_task.entry(o.task).or_default().push(o);
    }
    let tasks = by_task
        .into_iter()
        .map(|(task, list)| TaskMetrics {
            task,
            episodes: list.len(),
            sr: percent(list.iter().map(|o| o.success)).unwrap(),
            osr: percent(list.iter().filter_map(|o| o.oracle_success)),
            spl: mean(list.iter().filter_map(|o| o.spl).map(|s| s * 100.0)),
            tl: mean(list.iter().map(|o| o.path_length)).unwrap(),
            ne: mean(list.iter().map(|o| o.nav_error)).unwrap(),
            fr: mean(list.iter().filter_map(|o| o.following_rate()).map(|f| f * 100.0)),
            cr: percent(list.iter().filter_map(|o| o.human_collision)),
            acc: percent(list.iter().filter_map(|o| o.answer_correct)),
        })
        .collect();
    Ok(MetricsReport {
        episodes: outcomes.len(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spl_identities() {
        assert_eq!(spl(true, 4.0, 4.0).unwrap(), 1.0);
        assert_eq!(spl(false, 4.0, 4.0).unwrap(), 0.0);
        assert_eq!(spl(false, 0.0, 4.0).unwrap(), 0.0);
        assert_eq!(spl(true, 8.0, 4.0).unwrap(), 0.5);
        assert_eq!(spl(true, 1.0, 4.0).unwrap(), 1.0);
        assert!(matches!(spl(true, 1.0, 0.0), Err(NavError::DegenerateEpisode(_))));
    }

    #[test]
    fn follow_rate_counts() {
        assert_eq!(follow_rates(&[true; 5], false), (1.0, 0));
        assert_eq!(follow_rates(&[], false), (0.0, 0));
        assert_eq!(follow_rates(&[true, true, false, true], true), (0.75, 1));
    }

    fn outcome(task: TaskKind, success: bool, p: f64, l: f64) -> EpisodeOutcome {
        EpisodeOutcome {
            episode_id: "e".into(),
            task,
            seed: 0,
            success,
            oracle_success: Some(success),
            spl: Some(spl(success, p, l).unwrap()),
            path_length: p,
            geodesic: Some(l),
            nav_error: 0.5,
            steps: 10,
            following_steps: None,
            human_collision: None,
            answer_correct: None,
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[outcome(TaskKind::ObjectNav, true, 3.0, 3.0)]).unwrap();
        let t = one.task(TaskKind::ObjectNav).unwrap();
        assert_eq!((t.sr, t.spl), (100.0, Some(100.0)));
        let two = aggregate(&[
            outcome(TaskKind::ObjectNav, true, 3.0, 3.0),
            outcome(TaskKind::ObjectNav, false, 5.0, 3.0),
        ])
        .unwrap();
        let t = two.task(TaskKind::ObjectNav).unwrap();
        assert_eq!((t.sr, t.spl, t.osr), (50.0, Some(50.0), Some(50.0)));
        assert_eq!(t.fr, None);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(aggregate(&[]), Err(NavError::EmptyInput)));
    }

    #[test]
    fn follow_aggregates() {
        let mut a = outcome(TaskKind::Follow, true, 2.0, 1.0);
        a.spl = None;
        a.oracle_success = None;
        a.following_steps = Some(9);
        a.human_collision = Some(false);
        let mut b = a.clone();
        b.following_steps = Some(5);
        b.human_collision = Some(true);
        let r = aggregate(&[a, b]).unwrap();
        let t = r.task(TaskKind::Follow).unwrap();
        assert!((t.fr.unwrap() - 70.0).abs() < 1e-12);
        assert_eq!(t.cr, Some(50.0));
        assert_eq!(t.osr, None);
    }

    #[test]
    fn csv_and_table_render() {
        let o = outcome(TaskKind::Vln, true, 2.5, 3.0);
        assert_eq!(
            o.csv_row(),
            "e,vln,0,true,true,1.000000,2.500000,3.000000,0.500000,10,,,"
        );
        let table = aggregate(&[o]).unwrap().table();
        assert!(table.starts_with("task"));
        assert!(table.lines().nth(1).unwrap().starts_with("vln"));
    }

    fn arb_outcome() -> impl Strategy<Value = EpisodeOutcome> {
        (0usize..3, any::<bool>(), 0.0f64..30.0, 0.1f64..20.0)
            .prop_map(|(t, s, p, l)| outcome([TaskKind::Vln, TaskKind::ObjectNav, TaskKind::Eqa][t], s, p, l))
    }

    proptest! {
        #[test]
        fn spl_bounded_by_success(s in any::<bool>(), p in 0.0f64..100.0, l in 0.01f64..100.0) {
            let v = spl(s, p, l).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            let cap = if s { 1.0 } else { 0.0 };
            prop_assert!(v <= cap);
        }

        #[test]
        fn report_rates_bounded_and_permutation_invariant(list in proptest::collection::vec(arb_outcome(), 1..30)) {
            let r = aggregate(&list).unwrap();
            for t in &r.tasks {
                prop_assert!(t.spl.unwrap() <= t.sr + 1e-9);
                prop_assert!((0.0..=100.0).contains(&t.sr));
            }
            let mut rev = list.clone();
            rev.reverse();
            let r2 = aggregate(&rev).unwrap();
            for (a, b) in r.tasks.iter().zip(&r2.tasks) {
                prop_assert_eq!(a.sr, b.sr);
                prop_assert!((a.spl.unwrap() - b.spl.unwrap()).abs() < 1e-9);
                prop_assert!((a.tl - b.tl).abs() < 1e-9);
            }
        }
    }
}
