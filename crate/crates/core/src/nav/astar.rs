use super::grid::{GridMap, Pos};
use super::NavError;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// 4-connected unit-cost shortest path from `start` to `goal`, inclusive.
///
/// Among open cells of equal `f = g + h` the one with smaller `(y, x)` is
/// expanded first. Returns `Ok(None)` when the goal is unreachable.
pub fn astar(map: &GridMap, start: Pos, goal: Pos) -> Result<Option<Vec<Pos>>, NavError> {
    for (name, p) in [("start", start), ("goal", goal)] {
        if !map.in_bounds(p) {
            return Err(NavError::Input(format!("{name} {p:?} is outside the {}x{} map", map.width, map.height)));
        }
    }
    if map.is_wall(start) || map.is_wall(goal) {
        return Ok(None);
    }
    let idx = |p: Pos| p.1 * map.width + p.0;
    let n = map.width * map.height;
    let mut g = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0;
    open.push(Reverse((manhattan(start, goal), start.1, start.0)));
    while let Some(Reverse((_, y, x))) = open.pop() {
        let p = (x, y);
        let i = idx(p);
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if p == goal {
            let mut path = vec![p];
            let mut c = i;
            while parent[c] != usize::MAX {
                c = parent[c];
                path.push((c % map.width, c / map.width));
            }
            path.reverse();
            return Ok(Some(path));
        }
        for q in map.neighbours(p) {
            let j = idx(q);
            let cand = g[i] + 1;
            if !closed[j] && cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                open.push(Reverse((cand + manhattan(q, goal), q.1, q.0)));
            }
        }
    }
    Ok(None)
}
