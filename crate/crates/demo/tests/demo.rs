use chisq_rl_demo::{curve, simulate, worst_case, xi};

#[test]
fn curve_matches_closed_form_below_alpha_max() {
    // p = (0.5, 0.5), R = (0, 1): V = 0.25, alpha_max = 1.
    let rows = curve(&[0.5, 0.5], &[0.0, 1.0], 6, true).unwrap();
    assert_eq!(rows.len(), 24);
    for r in rows.chunks(4) {
        let (a, closed, oracle) = (r[0], r[1], r[3]);
        assert!((closed - (0.5 - (a * 0.25).sqrt())).abs() < 1e-12);
        if a <= 1.0 {
            assert!((oracle - closed).abs() < 1e-4, "{a}");
        } else {
            // the simplex stops the adversary at R = 0
            assert!(oracle.abs() < 1e-9 && oracle > closed);
        }
    }
    assert!(curve(&[0.5, 0.6], &[0.0, 1.0], 3, false).is_err());
}

#[test]
fn worst_case_sums_to_one() {
    let w = worst_case(&[0.2, 0.3, 0.5], &[1.0, -2.0, 0.5], 0.1).unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(worst_case(&[0.5, 0.5], &[0.0, 1.0], 2.0).is_err());
}

#[test]
fn xi_values() {
    let v = xi(&[1.0, 3.0], 1.0, false).unwrap();
    assert_eq!(v, vec![2.0, 1.0, 1.0]);
    assert!(xi(&[], 1.0, false).is_err());
}

#[test]
fn controllers_behave_at_nominal_parameters() {
    let frames = simulate("cartpole", "relative_length", 1.0, 0).unwrap();
    assert_eq!(frames.len() / 3, 500);
    let frames = simulate("pendulum", "relative_mass", 1.0, 3).unwrap();
    assert_eq!(frames.len() / 3, 200);
    let tail: f64 = frames.chunks(3).skip(150).map(|f| f[2]).sum::<f64>() / 50.0;
    assert!(tail > -0.5, "pendulum not held upright: mean tail reward {tail}");
    assert!(simulate("pendulum", "relative_length", 1.2, 0).is_err());
}
