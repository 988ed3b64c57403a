use crossview_core::align::{run_gradcheck_suite, LossKind, SimilarityMode, SuiteConfig};

#[test]
fn all_losses_match_central_differences() {
    for similarity in [SimilarityMode::Cosine, SimilarityMode::Dot] {
        let rows = run_gradcheck_suite(&SuiteConfig {
            similarity,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        for r in rows {
            println!("{similarity:?} {}: {:.3e}", r.loss, r.max_rel_error);
            assert!(r.max_rel_error < 1e-5, "{similarity:?} {r:?}");
        }
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    for kind in LossKind::ALL {
        let rows = run_gradcheck_suite(&SuiteConfig {
            instances: 3,
            corrupt: Some(kind),
            ..Default::default()
        })
        .unwrap();
        let row = rows.iter().find(|r| r.loss == kind).unwrap();
        assert!(row.max_rel_error > 1e-3, "{row:?}");
    }
}
