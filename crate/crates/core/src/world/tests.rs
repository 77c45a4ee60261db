use super::*;
use proptest::prelude::*;

fn open_grid(n: usize) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(n, n);
    for i in 0..n {
        g.set((i, 0), true);
        g.set((i, n - 1), true);
        g.set((0, i), true);
        g.set((n - 1, i), true);
    }
    g
}

fn scene(grid: OccupancyGrid) -> Scene {
    Scene {
        grid,
        objects: Vec::new(),
        humans: Vec::new(),
    }
}

fn vln_episode(grid: OccupancyGrid, start: Pose, dest: [f64; 2]) -> Arc<Episode> {
    Arc::new(Episode::custom(
        TaskKind::Vln,
        scene(grid),
        start,
        Instruction::new("go", TaskKind::Vln),
        Goal::Vln {
            landmarks: Vec::new(),
            destination: dest,
        },
    ))
}

#[test]
fn turn_left_rotates_counterclockwise() {
    let ep = vln_episode(open_grid(20), Pose::new(2.5, 2.5, 0), [4.0, 4.0]);
    let mut s = EpisodeState::new(ep);
    let r = s.step(Action::TurnLeft).unwrap();
    assert_eq!(r.pose, Pose::new(2.5, 2.5, 330));
    assert!(!r.collided);
    s.step(Action::TurnRight).unwrap();
    s.step(Action::TurnRight).unwrap();
    assert_eq!(s.pose().heading, 30);
}

#[test]
fn forward_moves_a_quarter_meter() {
    // origin of the test frame placed at (2.5, 2.5) inside open space
    let ep = vln_episode(open_grid(20), Pose::new(2.5, 2.5, 0), [4.0, 4.0]);
    let mut s = EpisodeState::new(ep);
    let r = s.step(Action::Forward).unwrap();
    assert_eq!((r.pose.x - 2.5, r.pose.y - 2.5), (0.25, 0.0));
    assert_eq!(s.trajectory().path_length(), 0.25);
}

#[test]
fn forward_into_wall_is_blocked() {
    let mut g = open_grid(20);
    for y in 0..20 {
        g.set((12, y), true);
    }
    // wall face at x = 3.0; agent edge at 2.82 + 0.25 would cross it
    let ep = vln_episode(g, Pose::new(2.64, 2.5, 0), [1.0, 1.0]);
    let mut s = EpisodeState::new(ep);
    let before = s.pose();
    let r = s.step(Action::Forward).unwrap();
    assert!(r.collided);
    assert_eq!(r.pose, before);
    assert_eq!(s.steps(), 1);
    assert_eq!(s.trajectory().path_length(), 0.0);
}

#[test]
fn stop_ends_episode() {
    let ep = vln_episode(open_grid(20), Pose::new(2.5, 2.5, 0), [4.0, 4.0]);
    let mut s = EpisodeState::new(ep);
    assert!(s.step(Action::Stop).unwrap().done);
    assert!(matches!(s.step(Action::Forward), Err(NavError::EpisodeFinished)));
}

#[test]
fn step_cap_ends_episode() {
    let ep = vln_episode(open_grid(20), Pose::new(2.5, 2.5, 0), [4.0, 4.0]);
    let mut s = EpisodeState::new(ep);
    for i in 1..=MAX_STEPS {
        let r = s.step(Action::TurnLeft).unwrap();
        assert_eq!(r.done, i == MAX_STEPS);
    }
    assert!(s.step(Action::TurnLeft).is_err());
}

#[test]
fn heading_vectors_are_unit_and_match_angle() {
    for k in 0..12u16 {
        let (dx, dy) = heading_vector(k * 30);
        assert!((dx.hypot(dy) - 1.0).abs() < 1e-15);
        let a = (k as f64 * 30.0).to_radians();
        assert!((dx - a.cos()).abs() < 1e-15 && (dy - a.sin()).abs() < 1e-15);
    }
}

#[test]
fn quantize_rounds_to_nearest_turn() {
    assert_eq!(quantize_heading(0.0), 0);
    assert_eq!(quantize_heading(14.9), 0);
    assert_eq!(quantize_heading(15.1), 30);
    assert_eq!(quantize_heading(15.0), 0);
    assert_eq!(quantize_heading(359.0), 0);
    assert_eq!(quantize_heading(-31.0), 330);
    assert_eq!(quantize_heading(200.0), 210);
}

#[test]
fn rle_round_trip() {
    let mut g = open_grid(6);
    g.set((2, 2), true);
    let rows = g.to_rle_rows();
    assert_eq!(rows[0], "6#");
    assert_eq!(rows[2], "1#1.1#2.1#");
    assert_eq!(OccupancyGrid::from_rle_rows(&rows).unwrap(), g);
    assert!(OccupancyGrid::from_rle_rows(&["3#".into(), "2#".into()]).is_err());
    assert!(OccupancyGrid::from_rle_rows(&["3x".into()]).is_err());
}

#[test]
fn disc_collision_geometry() {
    let mut g = OccupancyGrid::new(8, 8);
    g.set((4, 4), true); // square [1.0, 1.25]^2
    assert!(g.disc_hits_wall(0.9, 1.1, 0.18));
    assert!(!g.disc_hits_wall(0.8, 1.1, 0.18));
    // corner distance sqrt(0.1^2 + 0.1^2) = 0.141
    assert!(g.disc_hits_wall(0.9, 0.9, 0.18));
    assert!(!g.disc_hits_wall(0.85, 0.85, 0.18));
    // outside the grid counts as occupied
    assert!(g.disc_hits_wall(0.1, 1.0, 0.18));
}

#[test]
fn local_view_shape_and_determinism() {
    let ep = vln_episode(open_grid(20), Pose::new(2.5, 2.5, 0), [4.0, 4.0]);
    let mut s = EpisodeState::new(ep);
    let a = s.render_local_view();
    let b = s.render_local_view();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 17 * 17);
    assert_eq!(a.side(), 17);
    s.step(Action::TurnLeft).unwrap();
    assert_ne!(s.render_local_view(), a);
}

#[test]
fn local_view_orientation() {
    // agent at the center of a 20x20 room facing east: the east wall is straight ahead
    let ep = vln_episode(open_grid(20), Pose::new(3.875, 2.5, 0), [4.0, 4.0]);
    let v = EpisodeState::new(ep).render_local_view();
    // forward 4 cells lands at x = 4.875 → cell 19 (border wall)
    assert_eq!(v.code_at(8 - 4, 8), ViewCode::Occupied.index());
    assert_eq!(v.code_at(8 - 3, 8), ViewCode::Free.index());
    // straight left (north) 8 cells: y = 0.5 → cell 2, free; 9+ would be outside the patch
    assert_eq!(v.code_at(8, 0), ViewCode::Free.index());
}

#[test]
fn tags_respect_field_of_view() {
    let mut sc = scene(open_grid(20));
    sc.objects.push(ObjectInstance {
        category: ObjectCategory::Chair,
        color: "red".into(),
        x: 3.5,
        y: 2.5,
    });
    sc.objects.push(ObjectInstance {
        category: ObjectCategory::Bed,
        color: "blue".into(),
        x: 1.5,
        y: 2.5,
    });
    let ep = Arc::new(Episode::custom(
        TaskKind::ObjectNav,
        sc,
        Pose::new(2.5, 2.5, 0),
        Instruction::new("Search for a/an chair.", TaskKind::ObjectNav),
        Goal::ObjectNav {
            category: ObjectCategory::Chair,
        },
    ));
    let v = EpisodeState::new(ep).render_local_view();
    assert_eq!(v.tags.len(), 1);
    assert_eq!(v.tags[0].forward, 4);
    assert_eq!(v.tags[0].lateral, 0);
    assert_eq!(v.code_at(4, 8), ViewCode::Object(ObjectCategory::Chair).index());
}

fn traj(poses: &[(f64, f64)], stopped: bool) -> Trajectory {
    let mut t = Trajectory {
        poses: poses.iter().map(|&(x, y)| Pose::new(x, y, 0)).collect(),
        stopped,
        ..Default::default()
    };
    let n = poses.len() - 1;
    t.actions = vec![Action::Forward; n];
    if stopped {
        *t.actions.last_mut().unwrap() = Action::Stop;
    }
    t.collided = vec![false; n];
    t.human_collision = vec![false; n];
    t
}

#[test]
fn vln_success_within_three_meters() {
    let ep = vln_episode(open_grid(40), Pose::new(1.0, 1.0, 0), [5.0, 1.0]);
    let r = check_success(&ep, &traj(&[(1.0, 1.0), (2.1, 1.0)], true), None);
    assert!((r.nav_error - 2.9).abs() < 1e-12);
    assert!(r.success);
    assert_eq!(r.oracle_success, Some(true));
}

#[test]
fn no_stop_means_failure_but_oracle_success() {
    let ep = vln_episode(open_grid(40), Pose::new(1.0, 1.0, 0), [5.0, 1.0]);
    let r = check_success(&ep, &traj(&[(1.0, 1.0), (5.0, 1.0), (1.0, 1.0)], false), None);
    assert!(!r.success);
    assert_eq!(r.oracle_success, Some(true));
}

fn follow_episode() -> Episode {
    let human = HumanSpec {
        id: 0,
        descriptor: HumanDescriptor {
            gender: "man".into(),
            shirt: "blue".into(),
            pants: "black".into(),
        },
        waypoints: vec![[4.0, 2.0]],
        route: vec![[4.0, 2.0]],
    };
    let mut sc = scene(open_grid(40));
    sc.humans.push(human);
    Episode::custom(
        TaskKind::Follow,
        sc,
        Pose::new(2.5, 2.0, 0),
        Instruction::new("follow the man wearing a blue shirt and black pants", TaskKind::Follow),
        Goal::Follow { target: 0 },
    )
}

#[test]
fn follow_success_requires_facing() {
    let ep = follow_episode();
    let mut t = traj(&[(2.0, 2.0), (2.5, 2.0)], true);
    t.target_track = vec![[4.0, 2.0]; 2];
    t.target_finished = true;
    let r = check_success(&ep, &t, None);
    assert!(r.success);
    assert_eq!(r.following, [true]);
    t.poses[1].heading = 90;
    assert!(!check_success(&ep, &t, None).success);
}

#[test]
fn eqa_answer_normalization() {
    assert_eq!(normalize_answer("  Red. "), "red");
    assert_eq!(normalize_answer("Dark  Blue!"), "dark blue");
}

#[test]
fn human_blocks_forward_and_flags_collision() {
    let ep = Arc::new(follow_episode());
    let mut s = EpisodeState::new(ep);
    s.step(Action::Forward).unwrap(); // 2.75: gap to human 1.25
    for _ in 0..3 {
        s.step(Action::Forward).unwrap();
    }
    // at 3.5 the next step would put centers 0.25 apart
    let r = s.step(Action::Forward).unwrap();
    assert!(r.collided);
    assert!(s.trajectory().human_collision.iter().any(|&c| c));
}

#[test]
fn generation_is_deterministic() {
    let cfg = GenConfig::default();
    for task in TaskKind::ALL {
        let a = generate_episode(task, &cfg, 11).unwrap();
        let b = generate_episode(task, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.max_steps, 500);
    }
}

#[test]
fn generated_episode_json_round_trip() {
    let a = generate_episode(TaskKind::Follow, &GenConfig::default(), 3).unwrap();
    let b: Episode = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn objectnav_instruction_uses_category() {
    for seed in 0..10 {
        let ep = generate_episode(TaskKind::ObjectNav, &GenConfig::default(), seed).unwrap();
        let Goal::ObjectNav { category } = ep.goal else {
            panic!()
        };
        assert_eq!(ep.instruction.text, format!("Search for a/an {}.", category.name()));
        assert!(ep.geodesic_to_goal().unwrap() >= 3.0);
    }
}

#[test]
fn follow_humans_in_range_and_target_visible() {
    for seed in 0..10 {
        let ep = Arc::new(generate_episode(TaskKind::Follow, &GenConfig::default(), seed).unwrap());
        assert!((2..=6).contains(&ep.scene.humans.len()));
        let v = EpisodeState::new(ep).render_local_view();
        assert!(v.tags.iter().any(|t| t.kind == TagKind::Human { id: 0 }));
    }
}

#[test]
fn invalid_config_rejected() {
    let cfg = GenConfig {
        grid_size: 10,
        ..Default::default()
    };
    assert!(matches!(
        generate_episode(TaskKind::Vln, &cfg, 0),
        Err(NavError::InvalidConfig(_))
    ));
}

proptest! {
    #[test]
    fn heading_closure_and_path_additivity(actions in proptest::collection::vec(0usize..3, 0..80)) {
        let ep = vln_episode(open_grid(30), Pose::new(3.75, 3.75, 0), [1.0, 1.0]);
        let mut s = EpisodeState::new(ep);
        let mut moved = 0;
        for a in actions {
            let a = Action::ALL[a];
            let r = s.step(a).unwrap();
            if a == Action::Forward && !r.collided {
                moved += 1;
            }
            prop_assert_eq!(r.pose.heading % 30, 0);
            prop_assert!(r.pose.heading < 360);
        }
        prop_assert_eq!(s.trajectory().path_length(), moved as f64 * 0.25);
    }

    #[test]
    fn rollouts_replay_bit_for_bit(seed in 0u64..50, actions in proptest::collection::vec(0usize..3, 1..40)) {
        let ep = Arc::new(generate_episode(TaskKind::Follow, &GenConfig::default(), seed).unwrap());
        let run = || {
            let mut s = EpisodeState::new(ep.clone());
            let views: Vec<LocalView> = actions.iter().map(|&a| s.step(Action::ALL[a]).unwrap().frame).collect();
            (s.into_trajectory(), views)
        };
        prop_assert_eq!(run(), run());
    }
}
