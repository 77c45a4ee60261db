//! Privileged expert: steers along the shortest grid path with 30 degree turns.

use crate::error::{NavError, Result};
use crate::policy::planner::{plan_shortest_path, Cell, NavGrid};
use crate::world::{
    angle_diff, bearing_deg, distance, quantize_heading, Action, EpisodeState, Goal, Pose, TagKind, HUMAN_RADIUS,
    HUMAN_SPEED, PLAN_CLEARANCE, STEP_M, TURN_DEG,
};

/// Stop this far inside the task's success radius.
pub const STOP_MARGIN: f64 = 0.1;
/// Follow: hold position once this close to the target.
pub const FOLLOW_GAP: f64 = 1.2;
/// Follow: stop only this close to a target that finished its route.
pub const FOLLOW_STOP: f64 = 1.8;
/// Follow: keep this far from the next stretch of the target's route.
const YIELD_CLEARANCE: f64 = 0.7;
/// Follow: route points (one per human step) considered by the yield rule.
const YIELD_LOOKAHEAD: usize = 15;
const LOOKAHEAD_CELLS: usize = 8;
const SWEEP_RADIUS: f64 = 0.19;

/// Single next action for the current state, or an error if the goal is cut off.
pub fn expert_action(state: &EpisodeState, stop_radius: Option<f64>) -> Result<Action> {
    let ep = state.episode();
    let pose = state.pose();
    let radius = stop_radius.unwrap_or(ep.task.success_radius() - STOP_MARGIN);
    match &ep.goal {
        Goal::LowLevel { script, .. } => Ok(script.get(state.steps() as usize).copied().unwrap_or(Action::Stop)),
        Goal::Vln { landmarks, destination } => {
            let dest = (destination[0], destination[1]);
            if distance(pose.xy(), dest) <= radius {
                return Ok(Action::Stop);
            }
            let target = landmarks
                .get(state.landmarks_reached())
                .map(|l| (l[0], l[1]))
                .unwrap_or(dest);
            steer(state, ep.nav_grid(), &[target])
        }
        Goal::ObjectNav { .. } => {
            let goals = ep.goal_points();
            if goals.iter().any(|&g| distance(pose.xy(), g) <= radius) {
                return Ok(Action::Stop);
            }
            steer(state, ep.nav_grid(), &goals)
        }
        Goal::Eqa { target, .. } => {
            let obj = ep.scene.objects[*target].xy();
            if distance(pose.xy(), obj) <= radius {
                return Ok(face_or(pose, obj, Action::Stop));
            }
            steer(state, ep.nav_grid(), &[obj])
        }
        Goal::Follow { .. } => follow_action(state, stop_radius),
    }
}

fn follow_action(state: &EpisodeState, stop_radius: Option<f64>) -> Result<Action> {
    let pose = state.pose();
    let ti = state.target_index().expect("follow episode has a target");
    let target = state.humans()[ti].xy();
    let d = distance(pose.xy(), target);
    let stop = stop_radius.unwrap_or(FOLLOW_STOP);
    if state.target_finished() && d <= stop {
        return Ok(face_or(pose, target, Action::Stop));
    }
    // step off the stretch of route any walking human is about to cover
    let ahead: Vec<(f64, f64)> = state
        .episode()
        .scene
        .humans
        .iter()
        .zip(state.humans())
        .filter(|(spec, h)| h.progress < spec.route_length())
        .flat_map(|(spec, h)| (1..=YIELD_LOOKAHEAD).map(move |k| spec.point_at(h.progress + HUMAN_SPEED * k as f64)))
        .collect();
    let clearance = |p: (f64, f64)| ahead.iter().map(|&u| distance(p, u)).fold(f64::INFINITY, f64::min);
    if clearance(pose.xy()) < YIELD_CLEARANCE {
        return Ok(escape_action(state, pose, clearance));
    }
    if d <= FOLLOW_GAP {
        // no idle action exists: sway around the target bearing
        return Ok(face_or(pose, target, Action::TurnLeft));
    }
    let ep = state.episode();
    let mut nav = ep.nav_grid().clone();
    mask_humans(&mut nav, state, ti);
    match steer(state, &nav, &[target]) {
        Err(NavError::Unreachable { .. }) => steer(state, ep.nav_grid(), &[target]),
        other => other,
    }
}

/// Marks cells around bystanders as blocked.
fn mask_humans(nav: &mut NavGrid, state: &EpisodeState, skip: usize) {
    let grid = &state.episode().scene.grid;
    let reach = HUMAN_RADIUS + PLAN_CLEARANCE;
    for (i, h) in state.humans().iter().enumerate() {
        if i == skip {
            continue;
        }
        let (x0, y0) = grid.clamped_cell(h.x - reach, h.y - reach);
        let (x1, y1) = grid.clamped_cell(h.x + reach, h.y + reach);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if distance(grid.cell_center((x, y)), h.xy()) < reach {
                    nav.set_free((x, y), false);
                }
            }
        }
    }
}

/// `fallback` when already facing `point` (quantized), otherwise the turn toward it.
fn face_or(pose: Pose, point: (f64, f64), fallback: Action) -> Action {
    let want = quantize_heading(bearing_deg(pose.xy(), point));
    if want == pose.heading {
        fallback
    } else {
        turn_toward(pose.heading, want)
    }
}

/// Minimal rotation toward `want`; a half-turn goes left.
pub fn turn_toward(heading: u16, want: u16) -> Action {
    let right = (want + 360 - heading) % 360;
    if right == 0 {
        Action::Forward
    } else if right < 180 {
        Action::TurnRight
    } else {
        Action::TurnLeft
    }
}

/// Moves toward the nearest (by geodesic) of `goals`.
fn steer(state: &EpisodeState, nav: &NavGrid, goals: &[(f64, f64)]) -> Result<Action> {
    let ep = state.episode();
    let grid = &ep.scene.grid;
    let pose = state.pose();
    let here = grid.clamped_cell(pose.x, pose.y);
    let start = nav
        .nearest_free(here)
        .ok_or(NavError::Unreachable { from: here, to: here })?;
    let goal_cells: Vec<Cell> = goals
        .iter()
        .filter_map(|&(x, y)| nav.nearest_free(grid.clamped_cell(x, y)))
        .collect();
    let goal = nearest_goal(nav, start, &goal_cells).ok_or(NavError::Unreachable { from: start, to: here })?;
    let path = plan_shortest_path(nav, start, goal)?;
    let mut waypoints: Vec<(f64, f64)> = std::iter::once(start)
        .chain(path.cells.iter().copied())
        .map(|c| grid.cell_center(c))
        .collect();
    if path.cells.is_empty() {
        let (x, y) = goals[0];
        waypoints = vec![(x, y)];
    }
    let aim = waypoints
        .iter()
        .take(LOOKAHEAD_CELLS + 1)
        .rev()
        .find(|&&p| clear_segment(state, pose.xy(), p))
        .copied()
        .unwrap_or(waypoints[waypoints.len().min(2) - 1]);
    Ok(heading_action(state, pose, aim))
}

fn nearest_goal(nav: &NavGrid, start: Cell, goals: &[Cell]) -> Option<Cell> {
    if goals.len() == 1 {
        return Some(goals[0]);
    }
    let field = nav.distance_field(&[start]);
    goals
        .iter()
        .filter_map(|&g| field[nav.index(g)].map(|d| (d, nav.index(g), g)))
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, _, g)| g)
}

/// Swept-disc check against walls and every human except the follow target.
fn clear_segment(state: &EpisodeState, a: (f64, f64), b: (f64, f64)) -> bool {
    let target = state.target_index();
    state.episode().scene.grid.segment_clear(a, b, SWEEP_RADIUS)
        && state
            .humans()
            .iter()
            .enumerate()
            .all(|(k, h)| Some(k) == target || point_segment_distance(h.xy(), a, b) >= HUMAN_RADIUS + SWEEP_RADIUS)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    distance(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Picks the heading closest to the bearing of `aim` whose forward step is free
/// and gets closer to `aim`, then turns to it or moves.
fn heading_action(state: &EpisodeState, pose: Pose, aim: (f64, f64)) -> Action {
    let bearing = bearing_deg(pose.xy(), aim);
    let d0 = distance(pose.xy(), aim);
    let mut headings: Vec<u16> = (0..12).map(|k| k * TURN_DEG).collect();
    headings.sort_by(|&a, &b| {
        angle_diff(a as f64, bearing)
            .total_cmp(&angle_diff(b as f64, bearing))
            .then(a.cmp(&b))
    });
    let free = |h: u16| !state.forward_blocked_from(Pose { heading: h, ..pose }).0;
    let progress = |h: u16| distance(Pose { heading: h, ..pose }.advanced(STEP_M).xy(), aim) < d0 - 1e-9;
    let chosen = headings
        .iter()
        .copied()
        .filter(|&h| angle_diff(h as f64, bearing) < 90.0)
        .find(|&h| free(h) && progress(h))
        .or_else(|| headings.iter().copied().find(|&h| free(h)));
    match chosen {
        Some(h) => turn_toward(pose.heading, h),
        None => Action::TurnLeft,
    }
}

/// Heading whose free forward step most increases `clearance`, if any does.
fn escape_action(state: &EpisodeState, pose: Pose, clearance: impl Fn((f64, f64)) -> f64) -> Action {
    let c0 = clearance(pose.xy());
    let best = (0..12u16)
        .map(|k| k * TURN_DEG)
        .filter(|&h| !state.forward_blocked_from(Pose { heading: h, ..pose }).0)
        .map(|h| (clearance(Pose { heading: h, ..pose }.advanced(STEP_M).xy()), h))
        .filter(|&(c, _)| c > c0 + 1e-9)
        .min_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(
                    angle_diff(a.1 as f64, pose.heading as f64).total_cmp(&angle_diff(b.1 as f64, pose.heading as f64)),
                )
                .then(a.1.cmp(&b.1))
        });
    match best {
        Some((_, h)) => turn_toward(pose.heading, h),
        None => Action::TurnLeft,
    }
}

/// Answer read off the current egocentric view: the color of the visible
/// object named in the question.
pub fn answer_from_view(state: &EpisodeState, question: &str) -> Option<String> {
    let q = question.to_lowercase();
    let view = state.render_local_view();
    view.tags.iter().find_map(|t| match &t.kind {
        TagKind::Object { category, color } if q.contains(&category.name().to_lowercase()) => Some(color.clone()),
        _ => None,
    })
}
