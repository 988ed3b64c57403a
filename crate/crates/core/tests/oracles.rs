mod common;

use common::oracles::{brute_assignment_cost, brute_nms, oracle_ap, random_scene};
use crossview_core::eval::{average_precision, ImageDetection};
use crossview_core::geometry::{hungarian_match, nms, Box2D, ScoredDetection};
use crossview_core::seeding::stream_rng;
use rand::Rng;

#[test]
fn nms_matches_brute_force() {
    let mut rng = stream_rng(1, "nms-oracle", 0);
    for _ in 0..200 {
        let n = rng.random_range(0..=20);
        let dets: Vec<ScoredDetection> = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..10.0);
                let y = rng.random_range(0.0..10.0);
                let b = Box2D::new(x, y, x + rng.random_range(1.0..5.0), y + rng.random_range(1.0..5.0)).unwrap();
                let score = (rng.random_range(0..10) as f64) / 9.0;
                ScoredDetection::new(b, rng.random_range(0..3), score).unwrap()
            })
            .collect();
        let thr = rng.random_range(0.1..0.9);
        assert_eq!(nms(&dets, thr, 0.3), brute_nms(&dets, thr, 0.3));
    }
}

#[test]
fn hungarian_matches_enumeration() {
    let mut rng = stream_rng(2, "hungarian-oracle", 0);
    for _ in 0..200 {
        let rows = rng.random_range(1..=7);
        let cols = rng.random_range(1..=7);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let a = hungarian_match(&cost).unwrap();
        assert_eq!(a.pairs.len(), rows.min(cols));
        let recomputed: f64 = a.pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        assert!((recomputed - a.total_cost).abs() < 1e-9);
        assert!((a.total_cost - brute_assignment_cost(&cost)).abs() < 1e-9, "{cost:?}");
    }
}

#[test]
fn average_precision_matches_exhaustive_oracle() {
    let mut rng = stream_rng(3, "ap-oracle", 0);
    for _ in 0..200 {
        let scene = random_scene(&mut rng, 6, 4);
        let dets: Vec<ImageDetection<'_>> = scene
            .dets
            .iter()
            .map(|(img, d)| ImageDetection { image_id: img, det: *d })
            .collect();
        let targets: Vec<(&str, Box2D, u32)> = scene.targets.iter().map(|(i, b, c)| (i.as_str(), *b, *c)).collect();
        for thr in [0.5, 0.75] {
            let aps = average_precision(&dets, &targets, thr);
            for (&c, &ap) in &aps {
                let expected = oracle_ap(&scene, c, thr);
                assert!((ap - expected).abs() < 1e-12, "class {c}: {ap} vs {expected}");
            }
        }
    }
}
