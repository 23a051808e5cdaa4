use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};
use strider_core::nav::*;

/// Breadth-first distances from `start`; the oracle for shortest-path length.
fn bfs(map: &GridMap, start: Pos, goal: Pos) -> Option<usize> {
    if map.is_wall(start) || map.is_wall(goal) {
        return None;
    }
    let mut dist = vec![usize::MAX; map.width * map.height];
    let mut q = VecDeque::new();
    dist[start.1 * map.width + start.0] = 0;
    q.push_back(start);
    while let Some((x, y)) = q.pop_front() {
        let d = dist[y * map.width + x];
        if (x, y) == goal {
            return Some(d);
        }
        let mut next = vec![];
        if x > 0 { next.push((x - 1, y)); }
        if y > 0 { next.push((x, y - 1)); }
        if x + 1 < map.width { next.push((x + 1, y)); }
        if y + 1 < map.height { next.push((x, y + 1)); }
        for n in next {
            if !map.is_wall(n) && dist[n.1 * map.width + n.0] == usize::MAX {
                dist[n.1 * map.width + n.0] = d + 1;
                q.push_back(n);
            }
        }
    }
    None
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, walls: f64) -> (GridMap, Pos, Pos) {
    let mut m = GridMap::filled(w, h, 1.0, Cell::Free);
    for y in 0..h {
        for x in 0..w {
            if rng.random::<f64>() < walls {
                m.set((x, y), Cell::Wall);
            }
        }
    }
    let s = (rng.random_range(0..w), rng.random_range(0..h));
    let g = (rng.random_range(0..w), rng.random_range(0..h));
    m.set(s, Cell::Start);
    m.set(g, Cell::Goal);
    (m, s, g)
}

fn assert_valid_path(map: &GridMap, path: &[Pos], s: Pos, g: Pos) {
    assert_eq!(path[0], s);
    assert_eq!(*path.last().unwrap(), g);
    for w in path.windows(2) {
        assert_eq!(w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1), 1);
    }
    assert!(path.iter().all(|p| !map.is_wall(*p)));
}

#[test]
fn astar_agrees_with_bfs_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut reachable = 0;
    for _ in 0..50 {
        let (m, s, g) = random_map(&mut rng, 32, 32, 0.3);
        let a = astar(&m, s, g).unwrap();
        match (a, bfs(&m, s, g)) {
            (Some(p), Some(d)) => {
                assert_eq!(p.len() - 1, d);
                assert_valid_path(&m, &p, s, g);
                reachable += 1;
            }
            (None, None) => {}
            (a, b) => panic!("astar {a:?} vs bfs {b:?}"),
        }
    }
    assert!(reachable > 10);
}

#[test]
fn astar_trivial_cases() {
    let m = GridMap::filled(10, 10, 1.0, Cell::Free);
    assert_eq!(astar(&m, (3, 4), (3, 4)).unwrap().unwrap(), vec![(3, 4)]);
    let p = astar(&m, (0, 0), (9, 9)).unwrap().unwrap();
    assert_eq!(p.len(), 19);
    let m2 = GridMap::parse("S#.\n.#G\n.#.\n", 1.0).unwrap();
    assert_eq!(astar(&m2, (0, 0), (2, 1)).unwrap(), None);
    assert!(astar(&m2, (0, 0), (5, 1)).is_err());
}

#[test]
fn astar_is_deterministic_with_tie_break() {
    let m = GridMap::filled(4, 4, 1.0, Cell::Free);
    let a = astar(&m, (0, 0), (3, 3)).unwrap().unwrap();
    let b = astar(&m, (0, 0), (3, 3)).unwrap().unwrap();
    assert_eq!(a, b);
    // Smaller (y, x) first: the first step from (1, 1) towards (0, 0)
    // goes up to (1, 0).
    let p = astar(&m, (1, 1), (0, 0)).unwrap().unwrap();
    assert_eq!(p[1], (1, 0));
}

#[test]
fn map_parsing() {
    let m = GridMap::parse("#####\n#S.G#\n#..I#\n#####\n\n", 0.5).unwrap();
    assert_eq!((m.width, m.height), (5, 4));
    assert_eq!(m.start(), Some((1, 1)));
    assert_eq!(m.find(Cell::Goal), vec![(3, 1)]);
    assert_eq!(m.find(Cell::Item), vec![(3, 2)]);
    assert_eq!(m.center((1, 1)), [0.75, 0.75]);
    assert_eq!(m.render(), "#####\n#S.G#\n#..I#\n#####\n");
    assert!(matches!(GridMap::parse("S.G\nx..\n", 1.0), Err(NavError::Parse { line: 2, .. })));
    assert!(matches!(GridMap::parse("S.G\n..\n", 1.0), Err(NavError::Parse { line: 2, .. })));
    assert!(GridMap::parse("S.S\n..G\n", 1.0).is_err());
    assert!(GridMap::parse("S..\n...\n", 1.0).is_err());
    assert!(GridMap::parse("", 1.0).is_err());
}

fn pose_at(m: &GridMap, p: Pos, yaw: f64) -> Pose {
    Pose { position: m.center(p), yaw }
}

#[test]
fn straight_run_is_one_segment() {
    let m = GridMap::filled(6, 1, 1.0, Cell::Free);
    let path: Vec<Pos> = (0..5).map(|x| (x, 0)).collect();
    let seq = path_to_commands(&m, &path, 1.0, pose_at(&m, (0, 0), 0.0)).unwrap();
    assert_eq!(seq.segments.len(), 1);
    let (d, c) = seq.segments[0];
    assert!((d - 4.0).abs() < 1e-12);
    assert_eq!((c.speed, c.heading_delta), (1.0, 0.0));
}

#[test]
fn left_turn_emits_quarter_turn_command() {
    let m = GridMap::filled(4, 4, 1.0, Cell::Free);
    // East along row 3, then north (towards smaller y): a left turn.
    let path = vec![(0, 3), (1, 3), (2, 3), (2, 2), (2, 1)];
    let seq = path_to_commands(&m, &path, 1.0, pose_at(&m, (0, 3), 0.0)).unwrap();
    assert!(seq.segments.iter().any(|(_, c)| c.speed == 1.0 && c.heading_delta == 0.5 * PI));
    assert!((seq.net_turn() - FRAC_PI_2).abs() < 1e-12);
    let right = vec![(0, 0), (1, 0), (1, 1)];
    let seq = path_to_commands(&m, &right, 1.0, pose_at(&m, (0, 0), 0.0)).unwrap();
    assert!((seq.net_turn() + FRAC_PI_2).abs() < 1e-12);
    assert!(seq.segments.iter().all(|s| s.0 > 0.0));
}

#[test]
fn misaligned_start_turns_in_place() {
    let m = GridMap::filled(4, 4, 1.0, Cell::Free);
    let path = vec![(2, 0), (1, 0), (0, 0)];
    let seq = path_to_commands(&m, &path, 1.0, pose_at(&m, (2, 0), 0.0)).unwrap();
    assert_eq!(seq.segments[0].1.speed, 0.0);
    assert_eq!(seq.segments[1].1.speed, 0.0);
    assert_eq!(seq.segments[0].1.heading_delta, FRAC_PI_2);
    assert!((seq.net_turn() - PI).abs() < 1e-12);
    assert!(path_to_commands(&m, &path[..1], 1.0, pose_at(&m, (2, 0), 0.0)).is_err());
}

fn replay_covers(m: &GridMap, path: &[Pos], yaw: f64, cruise: f64) -> f64 {
    let seq = path_to_commands(m, path, cruise, pose_at(m, path[0], yaw)).unwrap();
    let poses = seq.replay(pose_at(m, path[0], yaw), 1200.0);
    let mut worst = 0.0f64;
    for &c in path {
        let [cx, cy] = m.center(c);
        let d = poses
            .iter()
            .map(|p| ((p.position[0] - cx).powi(2) + (p.position[1] - cy).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    let end = poses.last().unwrap().position;
    let goal = m.center(*path.last().unwrap());
    let miss = ((end[0] - goal[0]).powi(2) + (end[1] - goal[1]).powi(2)).sqrt();
    assert!(miss < 1e-6, "ends {miss} from the goal");
    worst
}

#[test]
fn kinematic_replay_visits_every_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    for _ in 0..50 {
        let (mut m, s, g) = random_map(&mut rng, 32, 32, 0.3);
        m.cell_size_mm = 500;
        if let Some(path) = astar(&m, s, g).unwrap() {
            if path.len() < 2 {
                continue;
            }
            let yaw = [0.0, FRAC_PI_2, PI, -FRAC_PI_2][rng.random_range(0..4)];
            let worst = replay_covers(&m, &path, yaw, 1.0);
            assert!(worst < 0.5 * m.cell_size(), "{worst}");
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn ray_navigation_rules() {
    let cfg = RayConfig::default();
    let clear = vec![10.0; 9];
    let c = ray_navigate(&clear, 0.0, &cfg).unwrap();
    assert_eq!((c.speed, c.heading_delta), (1.0, 0.0));
    // Wall 0.5 m ahead, open on the left (indices above the middle).
    let mut wall = vec![0.6, 0.6, 0.6, 0.55, 0.5, 4.0, 8.0, 10.0, 10.0];
    let c = ray_navigate(&wall, -0.3, &cfg).unwrap();
    assert!(c.heading_delta > 0.0);
    assert!((c.speed - 0.25).abs() < 1e-12);
    wall.reverse();
    assert!(ray_navigate(&wall, 0.3, &cfg).unwrap().heading_delta < 0.0);
    let sym = vec![1.0; 9];
    assert_eq!(ray_navigate(&sym, -1.0, &cfg).unwrap().heading_delta, cfg.max_turn);
    let close = vec![0.01; 9];
    assert_eq!(ray_navigate(&close, 0.0, &cfg).unwrap().speed, 0.2);
    assert!((ray_navigate(&clear, 3.0, &cfg).unwrap().heading_delta - cfg.max_turn).abs() < 1e-12);
    assert!(ray_navigate(&[1.0, 1.0], 0.0, &cfg).is_err());
}

proptest! {
    #[test]
    fn replay_covers_random_paths(seed in 0u64..10_000, cruise in 0.3f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, s, g) = random_map(&mut rng, 12, 12, 0.25);
        if let Some(path) = astar(&m, s, g).unwrap() {
            if path.len() >= 2 {
                let worst = replay_covers(&m, &path, 0.0, cruise);
                prop_assert!(worst < 0.5 * m.cell_size());
                let seq = path_to_commands(&m, &path, cruise, pose_at(&m, path[0], 0.0)).unwrap();
                prop_assert!(seq.segments.iter().all(|s| s.0 > 0.0));
            }
        }
    }
}
