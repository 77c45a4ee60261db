//! Deterministic 2D navigation world.
//!
//! Screen coordinates: x to the right, y down, meters. Heading 0 points along
//! +x and grows clockwise, so `TURN_RIGHT` adds 30 degrees and `TURN_LEFT`
//! subtracts 30. The scene is an occupancy grid of 0.25 m cells; the agent
//! and humans are discs.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::templates::{self, HumanDescriptor};
use crate::error::{NavError, Result};
use crate::policy::planner::{plan_shortest_path, Cell, NavGrid};
use crate::prompt::Instruction;

pub const CELL_M: f64 = 0.25;
pub const STEP_M: f64 = 0.25;
pub const TURN_DEG: u16 = 30;
pub const AGENT_RADIUS: f64 = 0.18;
pub const HUMAN_RADIUS: f64 = 0.3;
pub const MAX_STEPS: u32 = 500;
/// Planning grid clearance: a cell is traversable when a disc this wide fits on it.
pub const PLAN_CLEARANCE: f64 = 0.35;
pub const HUMAN_SPEED: f64 = 0.1;
/// Distance at which a VLN landmark counts as passed.
pub const LANDMARK_RADIUS: f64 = 1.0;
pub const FOV_HALF_DEG: f64 = 45.0;
/// Half-width of the cone the agent must face a person or object within.
pub const FACING_HALF_DEG: f64 = 30.0;

const SWEEP_STEP_M: f64 = 0.05;
const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Unit vectors for the twelve headings, exact on the axes.
const HEADING_VECTORS: [(f64, f64); 12] = [
    (1.0, 0.0),
    (SQRT3_2, 0.5),
    (0.5, SQRT3_2),
    (0.0, 1.0),
    (-0.5, SQRT3_2),
    (-SQRT3_2, 0.5),
    (-1.0, 0.0),
    (-SQRT3_2, -0.5),
    (-0.5, -SQRT3_2),
    (0.0, -1.0),
    (0.5, -SQRT3_2),
    (SQRT3_2, -0.5),
];

pub fn heading_vector(heading: u16) -> (f64, f64) {
    HEADING_VECTORS[(heading / TURN_DEG) as usize % 12]
}

/// Bearing from `from` to `to` in degrees, [0, 360).
pub fn bearing_deg(from: (f64, f64), to: (f64, f64)) -> f64 {
    let b = (to.1 - from.1).atan2(to.0 - from.0).to_degrees();
    if b < 0.0 {
        b + 360.0
    } else {
        b
    }
}

/// Smallest absolute angle between two directions in degrees.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::TurnLeft => "TURN_LEFT",
            Action::TurnRight => "TURN_RIGHT",
            Action::Stop => "STOP",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FORWARD" | "F" => Ok(Action::Forward),
            "TURN_LEFT" | "LEFT" | "L" => Ok(Action::TurnLeft),
            "TURN_RIGHT" | "RIGHT" | "R" => Ok(Action::TurnRight),
            "STOP" | "S" => Ok(Action::Stop),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Degrees, a multiple of 30 in [0, 360).
    pub heading: u16,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: u16) -> Self {
        Self {
            x,
            y,
            heading: heading % 360,
        }
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn turned(self, action: Action) -> Self {
        let heading = match action {
            Action::TurnLeft => (self.heading + 360 - TURN_DEG) % 360,
            Action::TurnRight => (self.heading + TURN_DEG) % 360,
            _ => self.heading,
        };
        Self { heading, ..self }
    }

    pub fn advanced(self, meters: f64) -> Self {
        let (dx, dy) = heading_vector(self.heading);
        Self {
            x: self.x + dx * meters,
            y: self.y + dy * meters,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Vln,
    ObjectNav,
    Eqa,
    Follow,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Vln, TaskKind::ObjectNav, TaskKind::Eqa, TaskKind::Follow];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Vln => "vln",
            TaskKind::ObjectNav => "objectnav",
            TaskKind::Eqa => "eqa",
            TaskKind::Follow => "follow",
        }
    }

    /// Success radius in meters.
    pub fn success_radius(self) -> f64 {
        match self {
            TaskKind::Vln => 3.0,
            TaskKind::ObjectNav | TaskKind::Eqa => 1.0,
            TaskKind::Follow => 2.0,
        }
    }

    pub fn is_static(self) -> bool {
        !matches!(self, TaskKind::Follow)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vln" => Ok(TaskKind::Vln),
            "objectnav" | "object-nav" | "objnav" => Ok(TaskKind::ObjectNav),
            "eqa" => Ok(TaskKind::Eqa),
            "follow" | "human-following" => Ok(TaskKind::Follow),
            other => Err(format!("unknown task `{other}` (vln|objectnav|eqa|follow)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Couch,
    Bed,
    Chair,
    Toilet,
    Plant,
    #[serde(rename = "TV")]
    Tv,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 6] = [
        ObjectCategory::Couch,
        ObjectCategory::Bed,
        ObjectCategory::Chair,
        ObjectCategory::Toilet,
        ObjectCategory::Plant,
        ObjectCategory::Tv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectCategory::Couch => "couch",
            ObjectCategory::Bed => "bed",
            ObjectCategory::Chair => "chair",
            ObjectCategory::Toilet => "toilet",
            ObjectCategory::Plant => "plant",
            ObjectCategory::Tv => "TV",
        }
    }

    fn ordinal(self) -> u8 {
        self as u8
    }
}

pub const OBJECT_COLORS: [&str; 6] = ["red", "blue", "green", "white", "black", "brown"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: ObjectCategory,
    pub color: String,
    pub x: f64,
    pub y: f64,
}

impl ObjectInstance {
    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSpec {
    pub id: u32,
    pub descriptor: HumanDescriptor,
    /// Intermediate goals, in visiting order.
    pub waypoints: Vec<[f64; 2]>,
    /// Polyline the human walks, starting at its spawn point.
    pub route: Vec<[f64; 2]>,
}

impl HumanSpec {
    pub fn route_length(&self) -> f64 {
        self.route
            .windows(2)
            .map(|w| distance((w[0][0], w[0][1]), (w[1][0], w[1][1])))
            .sum()
    }

    /// Point at arc length `s` along the route, clamped to its end.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let mut rest = s.max(0.0);
        for w in self.route.windows(2) {
            let (a, b) = ((w[0][0], w[0][1]), (w[1][0], w[1][1]));
            let len = distance(a, b);
            if rest <= len && len > 0.0 {
                let f = rest / len;
                return (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f);
            }
            rest -= len;
        }
        let last = self.route.last().expect("route has a start point");
        (last[0], last[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            occupied: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn set(&mut self, c: Cell, occupied: bool) {
        self.occupied[c.1 * self.width + c.0] = occupied;
    }

    /// Out-of-bounds cells count as occupied.
    pub fn is_occupied(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return true;
        }
        self.occupied[y as usize * self.width + x as usize]
    }

    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        ((c.0 as f64 + 0.5) * CELL_M, (c.1 as f64 + 0.5) * CELL_M)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / CELL_M).floor() as i64, (y / CELL_M).floor() as i64)
    }

    /// Cell containing the point, clamped into the grid.
    pub fn clamped_cell(&self, x: f64, y: f64) -> Cell {
        let (cx, cy) = self.cell_of(x, y);
        (
            cx.clamp(0, self.width as i64 - 1) as usize,
            cy.clamp(0, self.height as i64 - 1) as usize,
        )
    }

    /// True when a disc overlaps any occupied (or out-of-bounds) cell.
    pub fn disc_hits_wall(&self, x: f64, y: f64, r: f64) -> bool {
        let (x0, y0) = self.cell_of(x - r, y - r);
        let (x1, y1) = self.cell_of(x + r, y + r);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                if !self.is_occupied(cx, cy) {
                    continue;
                }
                let (lx, ly) = (cx as f64 * CELL_M, cy as f64 * CELL_M);
                let px = x.clamp(lx, lx + CELL_M);
                let py = y.clamp(ly, ly + CELL_M);
                if (px - x).hypot(py - y) < r {
                    return true;
                }
            }
        }
        false
    }

    /// True when a disc of radius `r` swept from `a` (exclusive) to `b` touches no wall.
    pub fn segment_clear(&self, a: (f64, f64), b: (f64, f64), r: f64) -> bool {
        let n = (distance(a, b) / SWEEP_STEP_M).ceil().max(1.0) as usize;
        (1..=n).all(|i| {
            let f = i as f64 / n as f64;
            !self.disc_hits_wall(a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f, r)
        })
    }

    /// Run-length rows: e.g. `"3#34.3#"` for three occupied, 34 free, three occupied.
    pub fn to_rle_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| {
                let row = &self.occupied[y * self.width..(y + 1) * self.width];
                let mut out = String::new();
                let mut i = 0;
                while i < row.len() {
                    let v = row[i];
                    let mut j = i;
                    while j < row.len() && row[j] == v {
                        j += 1;
                    }
                    out.push_str(&(j - i).to_string());
                    out.push(if v { '#' } else { '.' });
                    i = j;
                }
                out
            })
            .collect()
    }

    pub fn from_rle_rows(rows: &[String]) -> std::result::Result<Self, String> {
        let height = rows.len();
        let mut occupied = Vec::new();
        let mut width = None;
        for (y, row) in rows.iter().enumerate() {
            let mut n = String::new();
            let mut count = 0;
            for ch in row.chars() {
                match ch {
                    '0'..='9' => n.push(ch),
                    '#' | '.' => {
                        let k: usize = n.parse().map_err(|_| format!("row {y}: missing run length"))?;
                        occupied.extend(std::iter::repeat_n(ch == '#', k));
                        count += k;
                        n.clear();
                    }
                    other => return Err(format!("row {y}: unexpected `{other}`")),
                }
            }
            if !n.is_empty() {
                return Err(format!("row {y}: dangling run length"));
            }
            match width {
                None => width = Some(count),
                Some(w) if w != count => return Err(format!("row {y}: width {count} != {w}")),
                _ => {}
            }
        }
        Ok(Self {
            width: width.unwrap_or(0),
            height,
            occupied,
        })
    }
}

impl Serialize for OccupancyGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            width: usize,
            height: usize,
            cell_m: f64,
            rows: Vec<String>,
        }
        Repr {
            width: self.width,
            height: self.height,
            cell_m: CELL_M,
            rows: self.to_rle_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OccupancyGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[allow(dead_code)]
        struct Repr {
            width: usize,
            height: usize,
            cell_m: f64,
            rows: Vec<String>,
        }
        let r = Repr::deserialize(d)?;
        let g = OccupancyGrid::from_rle_rows(&r.rows).map_err(serde::de::Error::custom)?;
        if g.width != r.width || g.height != r.height {
            return Err(serde::de::Error::custom("grid shape does not match header"));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: OccupancyGrid,
    pub objects: Vec<ObjectInstance>,
    pub humans: Vec<HumanSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Vln {
        landmarks: Vec<[f64; 2]>,
        destination: [f64; 2],
    },
    /// Literal action script ("move forward 4 steps, then turn right 3 steps.").
    LowLevel {
        script: Vec<Action>,
        destination: [f64; 2],
    },
    ObjectNav {
        category: ObjectCategory,
    },
    Eqa {
        question: String,
        answer: String,
        /// Index into `scene.objects`.
        target: usize,
    },
    Follow {
        target: u32,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub scene: Scene,
    pub start: Pose,
    pub instruction: Instruction,
    pub goal: Goal,
    pub max_steps: u32,
    pub view_radius: usize,
    #[serde(skip)]
    nav: OnceLock<NavGrid>,
}

impl PartialEq for Episode {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.task == other.task
            && self.seed == other.seed
            && self.scene == other.scene
            && self.start == other.start
            && self.instruction == other.instruction
            && self.goal == other.goal
            && self.max_steps == other.max_steps
            && self.view_radius == other.view_radius
    }
}

impl Episode {
    /// Hand-built episode with default step cap and view radius.
    pub fn custom(task: TaskKind, scene: Scene, start: Pose, instruction: Instruction, goal: Goal) -> Self {
        Self {
            id: format!("{}-custom", task.as_str()),
            task,
            seed: 0,
            scene,
            start,
            instruction,
            goal,
            max_steps: MAX_STEPS,
            view_radius: GenConfig::default().view_radius,
            nav: OnceLock::new(),
        }
    }

    /// Planning grid at [`PLAN_CLEARANCE`], computed once.
    pub fn nav_grid(&self) -> &NavGrid {
        self.nav
            .get_or_init(|| NavGrid::from_occupancy(&self.scene.grid, PLAN_CLEARANCE))
    }

    pub fn human(&self, id: u32) -> Option<(usize, &HumanSpec)> {
        self.scene.humans.iter().enumerate().find(|(_, h)| h.id == id)
    }

    /// Static goal points (VLN destination, object instances); empty for Follow.
    pub fn goal_points(&self) -> Vec<(f64, f64)> {
        match &self.goal {
            Goal::Vln { destination, .. } | Goal::LowLevel { destination, .. } => {
                vec![(destination[0], destination[1])]
            }
            Goal::ObjectNav { category } => self
                .scene
                .objects
                .iter()
                .filter(|o| o.category == *category)
                .map(ObjectInstance::xy)
                .collect(),
            Goal::Eqa { target, .. } => vec![self.scene.objects[*target].xy()],
            Goal::Follow { .. } => Vec::new(),
        }
    }

    /// Grid geodesic (meters) from the start pose to the nearest static goal.
    pub fn geodesic_to_goal(&self) -> Option<f64> {
        let nav = self.nav_grid();
        let grid = &self.scene.grid;
        let goals: Vec<Cell> = self
            .goal_points()
            .iter()
            .filter_map(|&(x, y)| nav.nearest_free(grid.clamped_cell(x, y)))
            .collect();
        let start = nav.nearest_free(grid.clamped_cell(self.start.x, self.start.y))?;
        let field = nav.distance_field(&goals);
        field[nav.index(start)].map(|c| c.meters())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("episode serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub x: f64,
    pub y: f64,
    /// Arc length walked along the route.
    pub progress: f64,
}

impl HumanState {
    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Everything recorded along a rollout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Start pose followed by the pose after every executed step.
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub collided: Vec<bool>,
    pub human_collision: Vec<bool>,
    /// Follow only: target position aligned with `poses`.
    pub target_track: Vec<[f64; 2]>,
    pub stopped: bool,
    pub target_finished: bool,
    pub forward_moves: u32,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Trajectory length: 0.25 m per unblocked forward step.
    pub fn path_length(&self) -> f64 {
        self.forward_moves as f64 * STEP_M
    }

    pub fn final_pose(&self) -> Pose {
        *self.poses.last().expect("trajectory starts with a pose")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewCode {
    Free,
    Occupied,
    Object(ObjectCategory),
    Human,
}

impl ViewCode {
    pub const COUNT: usize = 9;

    pub fn index(self) -> u8 {
        match self {
            ViewCode::Free => 0,
            ViewCode::Occupied => 1,
            ViewCode::Object(c) => 2 + c.ordinal(),
            ViewCode::Human => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TagKind {
    Object { category: ObjectCategory, color: String },
    Human { id: u32 },
}

/// Something visible inside the field of view, in egocentric cell offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTag {
    pub kind: TagKind,
    pub forward: i32,
    pub lateral: i32,
}

/// Egocentric occupancy patch of `(2r+1)^2` cells plus visible tags.
///
/// Row 0 is farthest ahead (`forward = r`), column 0 is farthest left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalView {
    pub radius: usize,
    pub heading_deg: u16,
    pub cells: Vec<u8>,
    pub tags: Vec<ViewTag>,
}

impl LocalView {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn code_at(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.side() + col]
    }
}

/// Outcome of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub pose: Pose,
    pub collided: bool,
    pub frame: LocalView,
    pub done: bool,
}

/// Mutable rollout state for one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    episode: Arc<Episode>,
    pose: Pose,
    humans: Vec<HumanState>,
    steps: u32,
    done: bool,
    landmarks_reached: usize,
    traj: Trajectory,
}

impl EpisodeState {
    pub fn new(episode: Arc<Episode>) -> Self {
        let pose = episode.start;
        let humans: Vec<HumanState> = episode
            .scene
            .humans
            .iter()
            .map(|h| {
                let (x, y) = h.point_at(0.0);
                HumanState { x, y, progress: 0.0 }
            })
            .collect();
        let mut state = Self {
            episode,
            pose,
            humans,
            steps: 0,
            done: false,
            landmarks_reached: 0,
            traj: Trajectory::default(),
        };
        state.update_landmarks();
        state.traj.poses.push(pose);
        if let Some(t) = state.target_position() {
            state.traj.target_track.push([t.0, t.1]);
        }
        state
    }

    pub fn episode(&self) -> &Arc<Episode> {
        &self.episode
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn humans(&self) -> &[HumanState] {
        &self.humans
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn landmarks_reached(&self) -> usize {
        self.landmarks_reached
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    /// Follow target's index and current position.
    pub fn target_position(&self) -> Option<(f64, f64)> {
        self.target_index().map(|i| self.humans[i].xy())
    }

    pub fn target_index(&self) -> Option<usize> {
        match self.episode.goal {
            Goal::Follow { target } => self.episode.human(target).map(|(i, _)| i),
            _ => None,
        }
    }

    pub fn target_finished(&self) -> bool {
        self.target_index()
            .is_some_and(|i| self.humans[i].progress >= self.episode.scene.humans[i].route_length() - 1e-9)
    }

    /// Would a disc at `(x, y)` overlap a wall or a human? Returns `(blocked, by_human)`.
    pub fn agent_blocked_at(&self, x: f64, y: f64) -> (bool, bool) {
        if self.episode.scene.grid.disc_hits_wall(x, y, AGENT_RADIUS) {
            return (true, false);
        }
        let by_human = self
            .humans
            .iter()
            .any(|h| distance((x, y), h.xy()) < AGENT_RADIUS + HUMAN_RADIUS);
        (by_human, by_human)
    }

    /// Forward move check including the midpoint of the step.
    pub fn forward_blocked(&self) -> (bool, bool) {
        self.forward_blocked_from(self.pose)
    }

    /// Same check as [`EpisodeState::forward_blocked`] from an arbitrary pose.
    pub fn forward_blocked_from(&self, pose: Pose) -> (bool, bool) {
        let mid = pose.advanced(STEP_M / 2.0);
        let end = pose.advanced(STEP_M);
        let (b1, h1) = self.agent_blocked_at(mid.x, mid.y);
        let (b2, h2) = self.agent_blocked_at(end.x, end.y);
        (b1 || b2, h1 || h2)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(NavError::EpisodeFinished);
        }
        let mut collided = false;
        let mut hit_human = false;
        match action {
            Action::Forward => {
                let (blocked, by_human) = self.forward_blocked();
                if blocked {
                    collided = true;
                    hit_human = by_human;
                } else {
                    self.pose = self.pose.advanced(STEP_M);
                    self.traj.forward_moves += 1;
                }
            }
            Action::TurnLeft | Action::TurnRight => self.pose = self.pose.turned(action),
            Action::Stop => self.traj.stopped = true,
        }
        self.advance_humans();
        self.steps += 1;
        self.update_landmarks();
        self.done = action == Action::Stop || self.steps >= self.episode.max_steps;

        self.traj.poses.push(self.pose);
        self.traj.actions.push(action);
        self.traj.collided.push(collided);
        self.traj.human_collision.push(hit_human);
        if let Some(t) = self.target_position() {
            self.traj.target_track.push([t.0, t.1]);
        }
        self.traj.target_finished = self.target_finished();

        Ok(StepResult {
            pose: self.pose,
            collided,
            frame: self.render_local_view(),
            done: self.done,
        })
    }

    fn advance_humans(&mut self) {
        let agent = self.pose.xy();
        for (state, spec) in self.humans.iter_mut().zip(&self.episode.scene.humans) {
            let len = spec.route_length();
            if state.progress >= len {
                continue;
            }
            let next = (state.progress + HUMAN_SPEED).min(len);
            let p = spec.point_at(next);
            if distance(p, agent) < AGENT_RADIUS + HUMAN_RADIUS {
                continue;
            }
            *state = HumanState {
                x: p.0,
                y: p.1,
                progress: next,
            };
        }
    }

    fn update_landmarks(&mut self) {
        if let Goal::Vln { landmarks, .. } = &self.episode.goal {
            while let Some(l) = landmarks.get(self.landmarks_reached) {
                if distance(self.pose.xy(), (l[0], l[1])) <= LANDMARK_RADIUS {
                    self.landmarks_reached += 1;
                } else {
                    break;
                }
            }
        }
    }

    pub fn render_local_view(&self) -> LocalView {
        render_local_view(&self.episode, self.pose, &self.humans)
    }
}

/// Egocentric view from `pose`; deterministic in its inputs.
pub fn render_local_view(episode: &Episode, pose: Pose, humans: &[HumanState]) -> LocalView {
    let r = episode.view_radius as i32;
    let side = (2 * r + 1) as usize;
    let (fx, fy) = heading_vector(pose.heading);
    let (rx, ry) = heading_vector((pose.heading + 90) % 360);
    let grid = &episode.scene.grid;
    let mut cells = vec![0u8; side * side];
    for row in 0..side {
        let fwd = (r - row as i32) as f64 * CELL_M;
        for col in 0..side {
            let lat = (col as i32 - r) as f64 * CELL_M;
            let (wx, wy) = (pose.x + fx * fwd + rx * lat, pose.y + fy * fwd + ry * lat);
            let (cx, cy) = grid.cell_of(wx, wy);
            cells[row * side + col] = if grid.is_occupied(cx, cy) {
                ViewCode::Occupied.index()
            } else {
                ViewCode::Free.index()
            };
        }
    }

    let range = episode.view_radius as f64 * CELL_M;
    let mut tags = Vec::new();
    let mut place = |kind: TagKind, code: ViewCode, p: (f64, f64), cells: &mut Vec<u8>| {
        let d = distance(pose.xy(), p);
        if d > range || (d > 0.0 && angle_diff(bearing_deg(pose.xy(), p), pose.heading as f64) > FOV_HALF_DEG) {
            return;
        }
        let (dx, dy) = (p.0 - pose.x, p.1 - pose.y);
        let forward = ((dx * fx + dy * fy) / CELL_M).round() as i32;
        let lateral = ((dx * rx + dy * ry) / CELL_M).round() as i32;
        if forward.abs() <= r && lateral.abs() <= r {
            let (row, col) = ((r - forward) as usize, (lateral + r) as usize);
            cells[row * side + col] = code.index();
        }
        tags.push(ViewTag { kind, forward, lateral });
    };
    for o in &episode.scene.objects {
        place(
            TagKind::Object {
                category: o.category,
                color: o.color.clone(),
            },
            ViewCode::Object(o.category),
            o.xy(),
            &mut cells,
        );
    }
    for (h, s) in episode.scene.humans.iter().zip(humans) {
        place(TagKind::Human { id: h.id }, ViewCode::Human, s.xy(), &mut cells);
    }
    LocalView {
        radius: episode.view_radius,
        heading_deg: pose.heading,
        cells,
        tags,
    }
}

/// Per-episode success summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessRecord {
    pub success: bool,
    /// Ever within the success radius; `None` for tasks without oracle success.
    pub oracle_success: Option<bool>,
    pub nav_error: f64,
    pub min_goal_distance: f64,
    pub answer_correct: Option<bool>,
    /// Follow only: per executed step, within the success radius of the target.
    pub following: Vec<bool>,
    pub human_collision: bool,
}

/// Lowercase, trim and strip punctuation.
pub fn normalize_answer(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn check_success(episode: &Episode, traj: &Trajectory, answer: Option<&str>) -> SuccessRecord {
    let radius = episode.task.success_radius();
    let final_pose = traj.final_pose();
    let goal_dist = |i: usize, pose: &Pose| -> f64 {
        match &episode.goal {
            Goal::Follow { .. } => traj
                .target_track
                .get(i)
                .map_or(f64::INFINITY, |t| distance(pose.xy(), (t[0], t[1]))),
            _ => episode
                .goal_points()
                .iter()
                .map(|&g| distance(pose.xy(), g))
                .fold(f64::INFINITY, f64::min),
        }
    };
    let dists: Vec<f64> = traj.poses.iter().enumerate().map(|(i, p)| goal_dist(i, p)).collect();
    let nav_error = *dists.last().unwrap();
    let min_goal_distance = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let human_collision = traj.human_collision.iter().any(|&c| c);

    match &episode.goal {
        Goal::Vln { .. } | Goal::LowLevel { .. } | Goal::ObjectNav { .. } => SuccessRecord {
            success: traj.stopped && nav_error <= radius,
            oracle_success: Some(min_goal_distance <= radius),
            nav_error,
            min_goal_distance,
            answer_correct: None,
            following: Vec::new(),
            human_collision,
        },
        Goal::Eqa { answer: gt, .. } => {
            let correct = answer.is_some_and(|a| normalize_answer(a) == normalize_answer(gt));
            SuccessRecord {
                success: correct,
                oracle_success: None,
                nav_error,
                min_goal_distance,
                answer_correct: Some(correct),
                following: Vec::new(),
                human_collision,
            }
        }
        Goal::Follow { .. } => {
            let following = dists[1..].iter().map(|&d| d <= radius).collect();
            let facing = traj.target_track.last().is_some_and(|t| {
                angle_diff(bearing_deg(final_pose.xy(), (t[0], t[1])), final_pose.heading as f64)
                    <= FACING_HALF_DEG + 1e-9
            });
            SuccessRecord {
                success: traj.stopped && nav_error <= radius && facing && traj.target_finished,
                oracle_success: None,
                nav_error,
                min_goal_distance,
                answer_correct: None,
                following,
                human_collision,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Cells per side, 20..=60.
    pub grid_size: usize,
    pub obstacle_density: f64,
    pub objects: usize,
    pub humans_min: usize,
    pub humans_max: usize,
    pub low_level_fraction: f64,
    pub view_radius: usize,
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            grid_size: 40,
            obstacle_density: 0.05,
            objects: 8,
            humans_min: 2,
            humans_max: 6,
            low_level_fraction: 0.0,
            view_radius: 8,
            max_retries: 64,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NavError::InvalidConfig(m));
        if !(20..=60).contains(&self.grid_size) {
            return bad(format!("grid_size {} outside 20..=60", self.grid_size));
        }
        if !(0.0..=0.3).contains(&self.obstacle_density) {
            return bad(format!("obstacle_density {} outside [0, 0.3]", self.obstacle_density));
        }
        if !(2..=6).contains(&self.humans_min) || !(self.humans_min..=6).contains(&self.humans_max) {
            return bad(format!(
                "human count range {}..={} must lie in 2..=6",
                self.humans_min, self.humans_max
            ));
        }
        if !(0.0..=1.0).contains(&self.low_level_fraction) {
            return bad("low_level_fraction outside [0, 1]".into());
        }
        if self.view_radius == 0 || self.max_retries == 0 || self.objects == 0 {
            return bad("view_radius, objects and max_retries must be positive".into());
        }
        Ok(())
    }
}

pub fn episode_id(task: TaskKind, seed: u64) -> String {
    format!("{}-{seed}", task.as_str())
}

/// Builds a solvable episode; deterministic in `(task, cfg, seed)`.
pub fn generate_episode(task: TaskKind, cfg: &GenConfig, seed: u64) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_salt(task));
    let mut last_reason = String::new();
    for _ in 0..cfg.max_retries {
        let grid = generate_grid(cfg, &mut rng);
        let nav = NavGrid::from_occupancy(&grid, PLAN_CLEARANCE);
        let Some(region) = largest_component(&nav) else {
            last_reason = "no free space".into();
            continue;
        };
        let built = match task {
            TaskKind::Vln => build_vln(cfg, &mut rng, grid, &nav, &region),
            TaskKind::ObjectNav => build_objectnav(cfg, &mut rng, grid, &nav, &region),
            TaskKind::Eqa => build_eqa(cfg, &mut rng, grid, &nav, &region),
            TaskKind::Follow => build_follow(cfg, &mut rng, grid, &nav, &region),
        };
        match built {
            Ok((scene, start, instruction, goal)) => {
                let episode = Episode {
                    id: episode_id(task, seed),
                    task,
                    seed,
                    scene,
                    start,
                    instruction,
                    goal,
                    max_steps: MAX_STEPS,
                    view_radius: cfg.view_radius,
                    nav: OnceLock::new(),
                };
                if task.is_static() && episode.geodesic_to_goal().is_none() {
                    last_reason = "goal unreachable".into();
                    continue;
                }
                return Ok(episode);
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(NavError::GenerationFailed {
        attempts: cfg.max_retries,
        reason: last_reason,
    })
}

fn task_salt(task: TaskKind) -> u64 {
    match task {
        TaskKind::Vln => 0x5a17_0000_0000_0001,
        TaskKind::ObjectNav => 0x5a17_0000_0000_0002,
        TaskKind::Eqa => 0x5a17_0000_0000_0003,
        TaskKind::Follow => 0x5a17_0000_0000_0004,
    }
}

const DOOR_CELLS: usize = 5;

fn generate_grid(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> OccupancyGrid {
    let n = cfg.grid_size;
    let mut grid = OccupancyGrid::new(n, n);
    let mut protected = vec![false; n * n];
    for i in 0..n {
        grid.set((i, 0), true);
        grid.set((i, n - 1), true);
        grid.set((0, i), true);
        grid.set((n - 1, i), true);
    }
    let vertical = rng.gen_bool(0.7).then(|| rng.gen_range(n / 3..=2 * n / 3));
    let horizontal = rng.gen_bool(0.7).then(|| rng.gen_range(n / 3..=2 * n / 3));
    // each wall segment between the border and a crossing wall gets its own door
    let mut wall = |along_vertical: bool, at: usize, cross: Option<usize>, rng: &mut ChaCha8Rng| {
        let spans: Vec<(usize, usize)> = match cross {
            Some(c) => vec![(1, c), (c + 1, n - 1)],
            None => vec![(1, n - 1)],
        };
        for i in 1..n - 1 {
            let c = if along_vertical { (at, i) } else { (i, at) };
            grid.set(c, true);
        }
        for (lo, hi) in spans {
            if hi <= lo + DOOR_CELLS + 2 {
                continue;
            }
            let d0 = rng.gen_range(lo + 1..hi - DOOR_CELLS);
            for i in d0..d0 + DOOR_CELLS {
                for k in at.saturating_sub(3)..=(at + 3).min(n - 1) {
                    let c = if along_vertical { (k, i) } else { (i, k) };
                    protected[c.1 * n + c.0] = true;
                }
                let c = if along_vertical { (at, i) } else { (i, at) };
                grid.set(c, false);
            }
        }
    };
    if let Some(x) = vertical {
        wall(true, x, horizontal, rng);
    }
    if let Some(y) = horizontal {
        wall(false, y, vertical, rng);
    }
    let interior = ((n - 2) * (n - 2)) as f64;
    let blocks = (cfg.obstacle_density * interior / 4.0).round() as usize;
    for _ in 0..blocks {
        let (bw, bh) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (x0, y0) = (rng.gen_range(2..n - 2 - bw), rng.gen_range(2..n - 2 - bh));
        let cells: Vec<Cell> = (y0..y0 + bh).flat_map(|y| (x0..x0 + bw).map(move |x| (x, y))).collect();
        if cells.iter().any(|c| protected[c.1 * n + c.0]) {
            continue;
        }
        for c in cells {
            grid.set(c, true);
        }
    }
    grid
}

/// Free cells of the largest connected region, in index order.
fn largest_component(nav: &NavGrid) -> Option<Vec<Cell>> {
    let mut seen = vec![false; nav.width() * nav.height()];
    let mut best: Vec<Cell> = Vec::new();
    for i in 0..seen.len() {
        let c = nav.cell(i);
        if seen[i] || !nav.is_free(c) {
            continue;
        }
        let comp = nav.component(c);
        let cells: Vec<Cell> = comp
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(j, _)| nav.cell(j))
            .collect();
        for &cc in &cells {
            seen[nav.index(cc)] = true;
        }
        if cells.len() > best.len() {
            best = cells;
        }
    }
    (!best.is_empty()).then_some(best)
}

type Built = std::result::Result<(Scene, Pose, Instruction, Goal), String>;

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> std::result::Result<&'a T, String> {
    items.choose(rng).ok_or_else(|| "no candidates".to_string())
}

fn random_heading(rng: &mut ChaCha8Rng) -> u16 {
    rng.gen_range(0..12u16) * TURN_DEG
}

fn random_color(rng: &mut ChaCha8Rng) -> String {
    OBJECT_COLORS.choose(rng).unwrap().to_string()
}

/// Scatter `count` objects on free cells, at least two cells apart.
fn scatter_objects(
    rng: &mut ChaCha8Rng,
    grid: &OccupancyGrid,
    region: &[Cell],
    count: usize,
    categories: &[ObjectCategory],
) -> Vec<ObjectInstance> {
    let mut objects: Vec<ObjectInstance> = Vec::new();
    let mut tries = 0;
    while objects.len() < count && tries < count * 20 {
        tries += 1;
        let c = *region.choose(rng).unwrap();
        let (x, y) = grid.cell_center(c);
        if objects.iter().any(|o| distance(o.xy(), (x, y)) < 2.0 * CELL_M) {
            continue;
        }
        objects.push(ObjectInstance {
            category: *categories.choose(rng).unwrap(),
            color: random_color(rng),
            x,
            y,
        });
    }
    objects
}

/// Start cell whose geodesic distance to the goal set is in `[min_m, max_m]`
/// and whose Euclidean distance to every goal exceeds `min_euclid`.
fn pick_start(
    rng: &mut ChaCha8Rng,
    grid: &OccupancyGrid,
    nav: &NavGrid,
    region: &[Cell],
    goals: &[(f64, f64)],
    (min_m, max_m): (f64, f64),
    min_euclid: f64,
) -> std::result::Result<Pose, String> {
    let goal_cells: Vec<Cell> = goals.iter().map(|&(x, y)| grid.clamped_cell(x, y)).collect();
    let field = nav.distance_field(&goal_cells);
    let candidates: Vec<Cell> = region
        .iter()
        .copied()
        .filter(|&c| {
            let p = grid.cell_center(c);
            field[nav.index(c)].is_some_and(|d| (min_m..=max_m).contains(&d.meters()))
                && goals.iter().all(|&g| distance(p, g) > min_euclid)
        })
        .collect();
    let c = *pick(rng, &candidates)?;
    let (x, y) = grid.cell_center(c);
    Ok(Pose::new(x, y, random_heading(rng)))
}

fn build_vln(cfg: &GenConfig, rng: &mut ChaCha8Rng, grid: OccupancyGrid, nav: &NavGrid, region: &[Cell]) -> Built {
    let start_cell = *pick(rng, region)?;
    let (sx, sy) = grid.cell_center(start_cell);
    let start = Pose::new(sx, sy, random_heading(rng));

    if rng.gen_bool(cfg.low_level_fraction) {
        return build_low_level(rng, grid, start);
    }

    let field = nav.distance_field(&[start_cell]);
    let dests: Vec<Cell> = region
        .iter()
        .copied()
        .filter(|&c| {
            field[nav.index(c)].is_some_and(|d| (5.0..=14.0).contains(&d.meters()))
                && distance(grid.cell_center(c), (sx, sy)) > 3.5
        })
        .collect();
    let dest = *pick(rng, &dests)?;
    let path = plan_shortest_path(nav, start_cell, dest).map_err(|e| e.to_string())?;
    let n = path.cells.len();
    let landmark_cells = [path.cells[n / 3], path.cells[2 * n / 3]];
    let mut objects = scatter_objects(rng, &grid, region, cfg.objects.saturating_sub(3), &ObjectCategory::ALL);
    let mut names = Vec::new();
    for c in landmark_cells.iter().chain(std::iter::once(&dest)) {
        let (x, y) = grid.cell_center(*c);
        let category = *ObjectCategory::ALL.choose(rng).unwrap();
        names.push(category.name().to_string());
        objects.retain(|o| distance(o.xy(), (x, y)) >= 2.0 * CELL_M);
        objects.push(ObjectInstance {
            category,
            color: random_color(rng),
            x,
            y,
        });
    }
    let landmarks = landmark_cells
        .iter()
        .map(|&c| {
            let (x, y) = grid.cell_center(c);
            [x, y]
        })
        .collect();
    let (dx, dy) = grid.cell_center(dest);
    let text = templates::vln(&names[0], &names[1], &names[2]);
    Ok((
        Scene {
            grid,
            objects,
            humans: Vec::new(),
        },
        start,
        Instruction::new(text, TaskKind::Vln),
        Goal::Vln {
            landmarks,
            destination: [dx, dy],
        },
    ))
}

fn build_low_level(rng: &mut ChaCha8Rng, grid: OccupancyGrid, start: Pose) -> Built {
    let forward = rng.gen_range(2..=8usize);
    let turn = if rng.gen_bool(0.5) {
        Action::TurnLeft
    } else {
        Action::TurnRight
    };
    let turns = rng.gen_range(1..=6usize);
    let mut pose = start;
    for _ in 0..forward {
        for f in [0.5, 1.0] {
            let p = pose.advanced(STEP_M * f);
            if grid.disc_hits_wall(p.x, p.y, AGENT_RADIUS) {
                return Err("low-level script collides".into());
            }
        }
        pose = pose.advanced(STEP_M);
    }
    let script: Vec<Action> = std::iter::repeat_n(Action::Forward, forward)
        .chain(std::iter::repeat_n(turn, turns))
        .collect();
    let text = templates::low_level(forward, turn, turns);
    Ok((
        Scene {
            grid,
            objects: Vec::new(),
            humans: Vec::new(),
        },
        start,
        Instruction::new(text, TaskKind::Vln),
        Goal::LowLevel {
            script,
            destination: [pose.x, pose.y],
        },
    ))
}

fn build_objectnav(
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
    grid: OccupancyGrid,
    nav: &NavGrid,
    region: &[Cell],
) -> Built {
    let category = *ObjectCategory::ALL.choose(rng).unwrap();
    let mut objects = scatter_objects(rng, &grid, region, cfg.objects, &ObjectCategory::ALL);
    if !objects.iter().any(|o| o.category == category) {
        objects[0].category = category;
    }
    let goals: Vec<(f64, f64)> = objects
        .iter()
        .filter(|o| o.category == category)
        .map(ObjectInstance::xy)
        .collect();
    let start = pick_start(rng, &grid, nav, region, &goals, (3.0, 14.0), 1.5)?;
    Ok((
        Scene {
            grid,
            objects,
            humans: Vec::new(),
        },
        start,
        Instruction::new(templates::objectnav(category.name()), TaskKind::ObjectNav),
        Goal::ObjectNav { category },
    ))
}

fn build_eqa(cfg: &GenConfig, rng: &mut ChaCha8Rng, grid: OccupancyGrid, nav: &NavGrid, region: &[Cell]) -> Built {
    let category = *ObjectCategory::ALL.choose(rng).unwrap();
    let others: Vec<ObjectCategory> = ObjectCategory::ALL.iter().copied().filter(|&c| c != category).collect();
    let mut objects = scatter_objects(rng, &grid, region, cfg.objects, &others);
    let target_obj = objects.first().cloned().ok_or("no object placed")?;
    objects[0] = ObjectInstance { category, ..target_obj };
    let target = 0;
    let answer = objects[target].color.clone();
    let start = pick_start(rng, &grid, nav, region, &[objects[target].xy()], (3.0, 14.0), 1.5)?;
    let question = templates::eqa_color(category.name());
    Ok((
        Scene {
            grid,
            objects,
            humans: Vec::new(),
        },
        start,
        Instruction::new(question.clone(), TaskKind::Eqa),
        Goal::Eqa {
            question,
            answer,
            target,
        },
    ))
}

/// Waypoints and the route polyline through them.
type Route = (Vec<[f64; 2]>, Vec<[f64; 2]>);

/// Walks waypoints with the planner.
fn human_route(
    rng: &mut ChaCha8Rng,
    grid: &OccupancyGrid,
    nav: &NavGrid,
    region: &[Cell],
    start: Cell,
    legs: usize,
    leg_m: (f64, f64),
) -> std::result::Result<Route, String> {
    let (sx, sy) = grid.cell_center(start);
    let mut route = vec![[sx, sy]];
    let mut waypoints = Vec::new();
    let mut cur = start;
    for _ in 0..legs {
        let field = nav.distance_field(&[cur]);
        let options: Vec<Cell> = region
            .iter()
            .copied()
            .filter(|&c| field[nav.index(c)].is_some_and(|d| (leg_m.0..=leg_m.1).contains(&d.meters())))
            .collect();
        let next = *pick(rng, &options)?;
        let path = plan_shortest_path(nav, cur, next).map_err(|e| e.to_string())?;
        route.extend(path.cells.iter().map(|&c| {
            let (x, y) = grid.cell_center(c);
            [x, y]
        }));
        let (wx, wy) = grid.cell_center(next);
        waypoints.push([wx, wy]);
        cur = next;
    }
    Ok((waypoints, route))
}

/// Rejects routes that come back near an earlier part of themselves.
fn route_doubles_back(route: &[[f64; 2]]) -> bool {
    let mut arc = vec![0.0];
    for w in route.windows(2) {
        arc.push(arc.last().unwrap() + distance((w[0][0], w[0][1]), (w[1][0], w[1][1])));
    }
    for i in 0..route.len() {
        for j in i + 1..route.len() {
            if arc[j] - arc[i] > 2.5 && distance((route[i][0], route[i][1]), (route[j][0], route[j][1])) < 1.25 {
                return true;
            }
        }
    }
    false
}

const BYSTANDER_TRIES: usize = 20;
const BYSTANDER_REST_CLEARANCE: f64 = 1.5;

fn build_follow(cfg: &GenConfig, rng: &mut ChaCha8Rng, grid: OccupancyGrid, nav: &NavGrid, region: &[Cell]) -> Built {
    let count = rng.gen_range(cfg.humans_min..=cfg.humans_max);
    let target_start = *pick(rng, region)?;
    let legs = rng.gen_range(2..=3);
    let (waypoints, route) = human_route(rng, &grid, nav, region, target_start, legs, (2.0, 5.0))?;
    let spec_len: f64 = route
        .windows(2)
        .map(|w| distance((w[0][0], w[0][1]), (w[1][0], w[1][1])))
        .sum();
    if !(3.0..=12.0).contains(&spec_len) || route_doubles_back(&route) {
        return Err("target route unsuitable".into());
    }

    // robot starts behind the target, facing it
    let t0 = (route[0][0], route[0][1]);
    let ahead = (route[1][0] - t0.0, route[1][1] - t0.1);
    let norm = ahead.0.hypot(ahead.1).max(1e-9);
    let back = (-ahead.0 / norm, -ahead.1 / norm);
    let near_target = nav.distance_field(&[target_start]);
    let mut best: Option<(f64, Cell)> = None;
    for &c in region {
        let p = grid.cell_center(c);
        let d = distance(p, t0);
        if !(1.0..=1.6).contains(&d)
            || near_target[nav.index(c)].is_none_or(|g| g.meters() > 2.0)
            || !grid.segment_clear(p, t0, AGENT_RADIUS)
        {
            continue;
        }
        if route.iter().skip(1).any(|r| distance(p, (r[0], r[1])) < 0.9) {
            continue;
        }
        let score = ((p.0 - t0.0) * back.0 + (p.1 - t0.1) * back.1) / d;
        if best.is_none_or(|(s, _)| score > s + 1e-12) {
            best = Some((score, c));
        }
    }
    let (_, agent_cell) = best.ok_or("no start cell behind target")?;
    let (ax, ay) = grid.cell_center(agent_cell);
    let heading = quantize_heading(bearing_deg((ax, ay), t0));
    let start = Pose::new(ax, ay, heading);

    let target_desc = HumanDescriptor::random(rng);
    let mut humans = vec![HumanSpec {
        id: 0,
        descriptor: target_desc.clone(),
        waypoints,
        route,
    }];
    for id in 1..count as u32 {
        let spots: Vec<Cell> = region
            .iter()
            .copied()
            .filter(|&c| {
                let p = grid.cell_center(c);
                distance(p, (ax, ay)) > 2.0 && humans.iter().all(|h| distance(p, h.point_at(0.0)) > 1.0)
            })
            .collect();
        // bystanders may cross the target's route but never come to rest on it
        let target_route = &humans[0].route;
        let mut placed = None;
        for _ in 0..BYSTANDER_TRIES {
            let spawn = *pick(rng, &spots)?;
            let legs = rng.gen_range(1..=2);
            let (waypoints, route) = human_route(rng, &grid, nav, region, spawn, legs, (1.5, 5.0))?;
            let end = route.last().map(|e| (e[0], e[1])).unwrap();
            if target_route
                .iter()
                .all(|r| distance(end, (r[0], r[1])) >= BYSTANDER_REST_CLEARANCE)
                && distance(end, (ax, ay)) >= BYSTANDER_REST_CLEARANCE
            {
                placed = Some((waypoints, route));
                break;
            }
        }
        let (waypoints, route) = placed.ok_or("no bystander route clear of the target")?;
        let mut descriptor = HumanDescriptor::random(rng);
        while descriptor == target_desc {
            descriptor = HumanDescriptor::random(rng);
        }
        humans.push(HumanSpec {
            id,
            descriptor,
            waypoints,
            route,
        });
    }
    let text = templates::follow(&target_desc.phrase());
    Ok((
        Scene {
            grid,
            objects: Vec::new(),
            humans,
        },
        start,
        Instruction::new(text, TaskKind::Follow),
        Goal::Follow { target: 0 },
    ))
}

/// Nearest multiple of 30 degrees; exact halves round toward the lower heading.
pub fn quantize_heading(deg: f64) -> u16 {
    let q = ((deg.rem_euclid(360.0) / TURN_DEG as f64) - 0.5).ceil() as i64;
    (q.rem_euclid(12) as u16) * TURN_DEG
}

#[cfg(test)]
mod tests;
