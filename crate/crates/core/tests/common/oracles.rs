//! Brute-force reference implementations used to cross-check the fast paths.
#![allow(dead_code)]

use crossview_core::geometry::{iou, Box2D, ScoredDetection};
use rand::Rng;

/// Cost lookup by (small-side index, large-side index).
type Cell<'a> = Box<dyn Fn(usize, usize) -> f64 + 'a>;

/// Repeatedly keeps the best remaining detection and deletes everything of
/// its class that overlaps it too much.
pub fn brute_nms(dets: &[ScoredDetection], iou_thr: f64, conf: f64) -> Vec<ScoredDetection> {
    let mut alive: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score() >= conf).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if dets[i].score() > dets[best].score() || (dets[i].score() == dets[best].score() && i < best) {
                best = i;
            }
        }
        kept.push(dets[best]);
        alive.retain(|&i| {
            i != best && !(dets[i].category_id == dets[best].category_id && iou(&dets[i].bbox, &dets[best].bbox) >= iou_thr)
        });
    }
    kept
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Minimum total cost of a matching of size `min(rows, cols)` by enumerating
/// every injective assignment of the smaller side.
pub fn brute_assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let (small, large, at): (usize, usize, Cell<'_>) = if rows <= cols {
        (rows, cols, Box::new(|s, l| cost[s][l]))
    } else {
        (cols, rows, Box::new(|s, l| cost[l][s]))
    };
    let mut perms = Vec::new();
    permutations(&mut (0..large).collect(), 0, &mut perms);
    perms
        .iter()
        .map(|p| (0..small).map(|s| at(s, p[s])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// `(image, detection)` and `(image, box, class)` scene for AP checks.
pub struct Scene {
    pub dets: Vec<(String, ScoredDetection)>,
    pub targets: Vec<(String, Box2D, u32)>,
}

/// Boxes snapped to a coarse grid so overlaps, misses and exact hits all
/// occur; scores from a small set so ties occur too.
pub fn random_scene(rng: &mut impl Rng, max_dets: usize, max_targets: usize) -> Scene {
    let bx = |rng: &mut dyn rand::RngCore| {
        let x = rng.random_range(0..4) as f64;
        let y = rng.random_range(0..4) as f64;
        let w = rng.random_range(1..4) as f64;
        let h = rng.random_range(1..4) as f64;
        Box2D::new(x, y, x + w, y + h).unwrap()
    };
    let n_t = rng.random_range(0..=max_targets);
    let n_d = rng.random_range(0..=max_dets);
    let targets = (0..n_t)
        .map(|_| (format!("img{}", rng.random_range(0..2)), bx(rng), rng.random_range(0..2)))
        .collect::<Vec<_>>();
    let dets = (0..n_d)
        .map(|_| {
            let img = format!("img{}", rng.random_range(0..2));
            let b = if !targets.is_empty() && rng.random_bool(0.5) {
                targets[rng.random_range(0..targets.len())].1
            } else {
                bx(rng)
            };
            let score = rng.random_range(1..=5) as f64 / 5.0;
            (img, ScoredDetection::new(b, rng.random_range(0..2), score).unwrap())
        })
        .collect();
    Scene { dets, targets }
}

/// AP for one class: greedy best-IoU matching in score order, then the
/// precision envelope read at each of 101 recall points as the best
/// precision among all cut-offs whose recall reaches that point.
pub fn oracle_ap(scene: &Scene, class: u32, thr: f64) -> f64 {
    let mut order: Vec<usize> = (0..scene.dets.len()).filter(|&i| scene.dets[i].1.category_id == class).collect();
    // Stable sort keeps input order among equal scores.
    order.sort_by(|&a, &b| scene.dets[b].1.score().partial_cmp(&scene.dets[a].1.score()).unwrap());
    let n_targets = scene.targets.iter().filter(|t| t.2 == class).count();
    let mut used = vec![false; scene.targets.len()];
    let mut cutoffs = Vec::new();
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let (img, d) = &scene.dets[i];
        let mut best: Option<usize> = None;
        let mut best_iou = thr;
        for (j, (timg, tb, tc)) in scene.targets.iter().enumerate() {
            if used[j] || timg != img || *tc != class {
                continue;
            }
            let v = iou(&d.bbox, tb);
            if v >= best_iou && (best.is_none() || v > best_iou) {
                best = Some(j);
                best_iou = v;
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
        cutoffs.push((tp as f64 / n_targets as f64, tp as f64 / (rank + 1) as f64));
    }
    (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            cutoffs
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}
