use imagit_core::diagnostics::gradient_suite;
use imagit_core::numerics::GradCheck;

#[test]
fn every_component_passes_sampled_grad_check() {
    let reports = gradient_suite(21, GradCheck { eps: 1e-5, max_coords: Some(3), seed: 1 }).unwrap();
    assert_eq!(reports.len(), 13);
    for r in &reports {
        assert!(r.max_rel_err <= 1e-4, "{}: {:e}", r.path, r.max_rel_err);
    }
}
