use segcam::gradcheck::*;
use segcam::graph::Primitive;
use segcam::tensor::Tensor;

#[test]
fn every_backward_rule_and_tap_matches_finite_differences() {
    let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
    for r in &report.results {
        println!("{r}");
    }
    for p in Primitive::ALL {
        let r = report.results.iter().find(|r| r.name == p.name()).unwrap_or_else(|| panic!("{p} not checked"));
        assert_eq!(r.trials, 50);
        assert_eq!(r.tolerance, PRIMITIVE_TOLERANCE);
        assert!(r.passed(), "{r}");
    }
    let taps: Vec<_> = report.results.iter().filter(|r| r.name.starts_with("tap:")).collect();
    assert_eq!(taps.len(), 5);
    assert!(taps.iter().all(|r| r.passed() && r.tolerance == TAP_TOLERANCE));
    assert!(report.passed());
}

#[test]
fn each_injected_fault_is_caught_by_its_own_check() {
    for p in Primitive::ALL {
        let config = GradcheckConfig { trials: 2, seed: 1, inject_fault: Some(p) };
        let report = run_gradcheck(&config).unwrap();
        let failed: Vec<_> = report.failures().map(|r| r.name.clone()).collect();
        assert!(failed.contains(&p.name().to_string()), "{p}: failures {failed:?}");
        assert!(failed.iter().all(|n| n == p.name() || n.starts_with("tap:")), "{p}: failures {failed:?}");
    }
}

#[test]
fn numeric_gradient_of_a_quadratic() {
    let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    let g = numeric_gradient(&x, |t| Ok(t.data().iter().map(|v| v * v).sum())).unwrap();
    for (a, b) in g.data().iter().zip([2.0, -4.0, 1.0]) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn relative_error_definition() {
    let (e, i) = relative_error(&[1.0, 2.0, 4.0], &[1.0, 2.5, 4.0]);
    assert_eq!(i, 1);
    assert!((e - 0.5 / 4.0).abs() < 1e-15);
    assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]).0, 0.0);
}
