use lim_core::gradcheck::{core_checks, run_check, CheckConfig};

#[test]
fn every_core_op_matches_finite_differences() {
    let cfg = CheckConfig::default();
    for op in core_checks() {
        let t = std::time::Instant::now();
        let r = run_check(&op, &cfg).unwrap();
        println!(
            "{:<24} max_rel_err {:.2e} instances {} rejected {} skipped {} ({:.2?})",
            r.name, r.max_rel_err, r.instances, r.rejected, r.skipped_elements, t.elapsed()
        );
        assert!(r.passed(), "{r:?}");
    }
}
