use salite_core::gradcheck::suite::{check_network, NETWORK_TOL};
use salite_core::gradcheck::GradCheckConfig;

#[test]
fn reduced_network_gradients_match_finite_differences() {
    let report = check_network(&GradCheckConfig::default()).unwrap();
    assert!(report.max_rel_err <= NETWORK_TOL, "{report:?}");
    assert!(report.coords > 100);
}
