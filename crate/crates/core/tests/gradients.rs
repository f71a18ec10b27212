use fightnet::train::{check_gradients, grad_check, GradCheckOptions, Subject};
use fightnet::{Rng, Tensor};

#[test]
fn suite_within_tolerance() {
    let opts = GradCheckOptions::default();
    for s in Subject::suite() {
        let trials = if s == Subject::Model { 3 } else { 10 };
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let r = grad_check(s, &opts, &mut Rng::new(100 + trial)).unwrap();
            assert!(r.passed(), "trial {trial}: {r:?}");
            worst = worst.max(r.max_rel_error);
        }
        eprintln!("{:<12} max rel err {worst:.3e} over {trials} trials", s.to_string());
    }
}

#[test]
fn linear_map_is_exact() {
    let mut rng = Rng::new(3);
    let w = Tensor::<f64>::randn(&[3, 4], &mut rng);
    let x = Tensor::<f64>::randn(&[4], &mut rng);
    let vars = vec![("x".to_string(), x)];
    let fwd = |v: &[Tensor<f64>]| fightnet::kernels::matmul_affine(&v[0], &w, &Tensor::zeros(&[3]));
    let bwd = |v: &[Tensor<f64>], r: &Tensor<f64>| Ok(vec![fightnet::kernels::affine_grad(&v[0], &w, r)?.x]);
    let r = check_gradients("linear", &vars, fwd, bwd, &GradCheckOptions::default(), &mut rng).unwrap();
    assert!(r.max_rel_error <= 1e-9, "{r:?}");
}

#[test]
fn corrupted_backward_is_flagged() {
    let mut rng = Rng::new(4);
    let vars = vec![("a".to_string(), Tensor::<f64>::randn(&[6], &mut rng))];
    let fwd = |v: &[Tensor<f64>]| Ok(fightnet::kernels::tanh(&v[0]));
    let bwd = |v: &[Tensor<f64>], r: &Tensor<f64>| {
        let y = fightnet::kernels::tanh(&v[0]);
        let g: Vec<f64> = y.data().iter().zip(r.data()).map(|(y, r)| r * (1.0 - y * y) * 1.1).collect();
        Ok(vec![Tensor::new(v[0].dims(), g)?])
    };
    let r = check_gradients("tanh-corrupted", &vars, fwd, bwd, &GradCheckOptions::default(), &mut rng).unwrap();
    assert!(r.max_rel_error > 1e-2 && !r.passed(), "{r:?}");
    assert!(r.worst.starts_with("a["));
}
