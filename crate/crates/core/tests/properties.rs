use crossview_core::align::{cross_view_loss, mil_nce_loss, AlignmentBatch, SimilarityMode};
use crossview_core::eval::{average_precision, harmonic_mean, ImageDetection};
use crossview_core::geometry::{giou, iou, Box2D, ScoredDetection};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn boxes() -> impl Strategy<Value = Box2D> {
    (-20.0..20.0f64, -20.0..20.0f64, 0.01..15.0f64, 0.01..15.0f64)
        .prop_map(|(x, y, w, h)| Box2D::new(x, y, x + w, y + h).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
        .prop_filter("rows must be non-zero", |m| m.rows().into_iter().all(|r| r.dot(&r) > 1e-6))
}

/// Batch shape, a permutation of its rows, and the batch itself.
fn permuted_pairs() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, Vec<usize>)> {
    (1usize..7, 2usize..6).prop_flat_map(|(n, d)| {
        (matrix(n, d), matrix(n, d), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

/// Scored detections on one image with up to three targets, all class 0.
fn scene() -> impl Strategy<Value = (Vec<(Box2D, f64)>, Vec<Box2D>)> {
    (prop::collection::vec((boxes(), 0.0..1.0f64), 0..7), prop::collection::vec(boxes(), 1..4))
}

fn ap_of(dets: &[(Box2D, f64)], targets: &[Box2D], thr: f64) -> f64 {
    let d: Vec<ImageDetection<'_>> = dets
        .iter()
        .map(|(b, s)| ImageDetection { image_id: "im", det: ScoredDetection::new(*b, 0, *s).unwrap() })
        .collect();
    let t: Vec<(&str, Box2D, u32)> = targets.iter().map(|b| ("im", *b, 0)).collect();
    average_precision(&d, &t, thr)[&0]
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giou_bounds(a in boxes(), b in boxes()) {
        let g = giou(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!(g <= iou(&a, &b) + 1e-12);
        prop_assert!((g - giou(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_bounds(a in 0.0..100.0f64, b in 0.0..100.0f64) {
        let hm = harmonic_mean(a, b).unwrap();
        prop_assert_eq!(hm, harmonic_mean(b, a).unwrap());
        prop_assert!(a.min(b) - 1e-12 <= hm && hm <= a.max(b) + 1e-12);
        prop_assert!(hm <= (a + b) / 2.0 + 1e-12);
    }

    #[test]
    fn ap_depends_only_on_ranking((dets, targets) in scene(), thr in 0.3..0.9f64) {
        let base = ap_of(&dets, &targets, thr);
        let squashed: Vec<(Box2D, f64)> = dets.iter().map(|(b, s)| (*b, s * s * 0.5 + 0.1)).collect();
        prop_assert_eq!(base, ap_of(&squashed, &targets, thr));
    }

    #[test]
    fn removing_false_positive_never_lowers_ap((dets, targets) in scene(), thr in 0.3..0.9f64) {
        let base = ap_of(&dets, &targets, thr);
        for (k, (b, _)) in dets.iter().enumerate() {
            // A detection that overlaps no target can never be a true positive.
            if targets.iter().all(|t| iou(b, t) < thr) {
                let mut fewer = dets.clone();
                fewer.remove(k);
                prop_assert!(ap_of(&fewer, &targets, thr) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn low_scoring_duplicate_never_raises_ap((dets, targets) in scene(), thr in 0.3..0.9f64, pick in 0usize..7) {
        prop_assume!(!dets.is_empty());
        let base = ap_of(&dets, &targets, thr);
        let min = dets.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let mut more = dets.clone();
        more.push((dets[pick % dets.len()].0, min * 0.5));
        prop_assert!(ap_of(&more, &targets, thr) <= base + 1e-12);
    }

    #[test]
    fn cross_view_permutation_equivariant((aerial, ground, perm) in permuted_pairs(), rho in 0.05..2.0f64) {
        for mode in [SimilarityMode::Cosine, SimilarityMode::Dot] {
            let out = cross_view_loss(&AlignmentBatch::image_pairs(aerial.clone(), ground.clone()), rho, mode).unwrap();
            let permuted = AlignmentBatch::image_pairs(aerial.select(Axis(0), &perm), ground.select(Axis(0), &perm));
            let p = cross_view_loss(&permuted, rho, mode).unwrap();
            prop_assert!((out.loss - p.loss).abs() <= 1e-9 * out.loss.abs().max(1.0));
            let expected = out.grad.select(Axis(0), &perm);
            prop_assert!((&p.grad - &expected).iter().all(|v| v.abs() < 1e-9 * (1.0 + out.grad.iter().fold(0.0f64, |m, g| m.max(g.abs())))));
        }
    }

    #[test]
    fn mil_nce_permutation_equivariant(
        (aerial, _, perm) in permuted_pairs(),
        text_rows in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 5), 3),
        bag_choice in prop::collection::vec(0usize..3, 6),
    ) {
        let d = aerial.ncols();
        let n = aerial.nrows();
        let texts = Array2::from_shape_fn((3, d), |(i, j)| text_rows[i][j] + if j == i % d { 3.0 } else { 0.0 });
        let positives: Vec<Vec<usize>> = (0..n).map(|i| vec![bag_choice[i]]).collect();
        let mut batch = AlignmentBatch::image_pairs(aerial.clone(), Array2::zeros((n, d)));
        batch.texts = texts;
        batch.text_bag = vec![0, 1, 2];
        batch.positives = positives.clone();
        let out = mil_nce_loss(&batch, 0.1, SimilarityMode::Cosine).unwrap();

        let mut permuted = batch.clone();
        permuted.aerial = aerial.select(Axis(0), &perm);
        permuted.positives = perm.iter().map(|&i| positives[i].clone()).collect();
        let p = mil_nce_loss(&permuted, 0.1, SimilarityMode::Cosine).unwrap();
        prop_assert!((out.loss - p.loss).abs() <= 1e-9 * out.loss.abs().max(1.0));
        let expected = out.grad.select(Axis(0), &perm);
        prop_assert!((&p.grad - &expected).iter().all(|v| v.abs() < 1e-8));
    }
}
