use phode::autodiff::Tensor;
use phode::odeint::{odesolve, rk4_step, AugmentedState};

fn decay(x: &Tensor<f64>, _u: &Tensor<f64>) -> phode::Result<Tensor<f64>> {
    Ok(x.map(|v| -v))
}

fn final_error(h: f64) -> f64 {
    let steps = (1.0 / h).round() as usize;
    let init = AugmentedState { state: Tensor::vector(vec![1.0]), control: Tensor::vector(vec![0.0]) };
    let roll = odesolve(decay, init, 0.0, h, steps, 1).unwrap();
    (roll.states[steps].data()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn fourth_order_global_convergence() {
    let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&h| final_error(h)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn one_step_matches_hand_stages() {
    // k1 = -1, k2 = -0.95, k3 = -0.9525, k4 = -0.90475
    let hand = 1.0 + 0.1 / 6.0 * (-1.0 + 2.0 * -0.95 + 2.0 * -0.9525 + -0.90475);
    let mut f = |x: &Tensor<f64>| Ok(x.map(|v| -v));
    let x = rk4_step(&mut f, &Tensor::vector(vec![1.0]), 0.1, 0).unwrap();
    assert!((x.data()[0] - hand).abs() <= 1e-12);
    assert!((x.data()[0] - 0.9048375).abs() <= 1e-7);
}

#[test]
fn twenty_steps_reach_inverse_e() {
    assert!(final_error(0.05) <= 1e-6);
}

#[test]
fn time_grid_has_no_drift() {
    let init = AugmentedState { state: Tensor::vector(vec![1.0]), control: Tensor::vector(vec![2.0]) };
    let roll = odesolve(decay, init, 0.3, 0.1, 50, 2).unwrap();
    for (i, t) in roll.times.iter().enumerate() {
        assert_eq!(*t, 0.3 + i as f64 * 0.1);
    }
    assert_eq!(roll.control.data(), &[2.0]);
}
