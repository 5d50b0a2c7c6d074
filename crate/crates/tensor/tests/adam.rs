use i2mv_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, TensorError};

#[test]
fn zero_gradient_is_a_no_op() {
    let mut params = vec![Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()];
    params[0].set_grad(vec![0.0; 3]).unwrap();
    let before = params[0].data().to_vec();
    let mut state = AdamState::new(AdamConfig::default(), &params);
    adam_step(&mut params, &mut state).unwrap();
    assert_eq!(params[0].data(), before.as_slice());
    assert!(params[0].grad().is_none());
    assert_eq!(state.steps(), 1);
}

#[test]
fn first_step_moves_by_lr_times_sign() {
    for g in [0.37, -12.0, 1e-3] {
        let mut params = vec![Tensor::new(&[1], vec![1.0]).unwrap()];
        params[0].set_grad(vec![g]).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &mut state).unwrap();
        let delta = params[0].data()[0] - 1.0;
        assert!((delta + 1e-3 * g.signum()).abs() < 1e-8, "g={g} delta={delta}");
    }
}

#[test]
fn converges_on_shifted_quadratic() {
    let config = AdamConfig {
        lr: 0.1,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::new(&[1], vec![0.0]).unwrap()];
    let mut state = AdamState::new(config, &params);
    for _ in 0..100 {
        let tape = Tape::new();
        let w = tape.leaf(params[0].clone().with_requires_grad(true));
        let d = w.add_scalar(-3.0);
        let loss = d.mul(&d).unwrap().sum();
        tape.backward(loss).unwrap();
        params[0].set_grad(tape.grad(w).unwrap().into_data()).unwrap();
        adam_step(&mut params, &mut state).unwrap();
    }
    assert!((params[0].data()[0] - 3.0).abs() < 0.1, "{:?}", params[0].data());
    assert_eq!(state.steps(), 100);
}

#[test]
fn missing_gradient_is_rejected_before_any_update() {
    let mut params = vec![
        Tensor::new(&[1], vec![1.0]).unwrap(),
        Tensor::new(&[1], vec![2.0]).unwrap(),
    ];
    params[0].set_grad(vec![1.0]).unwrap();
    let mut state = AdamState::new(AdamConfig::default(), &params);
    let err = adam_step(&mut params, &mut state).unwrap_err();
    assert_eq!(err, TensorError::MissingGrad { index: 1 });
    assert_eq!(params[0].data(), &[1.0]);
    assert_eq!(state.steps(), 0);
}
