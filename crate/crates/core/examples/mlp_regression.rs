//! The differentiable building block on its own: fit a small tanh MLP to
//! `sin(3x)` with Adam, after checking its backward pass against central
//! differences.
//!
//!     cargo run --release --example mlp_regression

use basis::nn::{gradcheck, Activation, Adam, MlpSpec};
use rand::Rng;

fn loss_and_grad(spec: &MlpSpec, params: &[f64], xs: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for &x in xs {
        let trace = spec.forward_trace(params, &[x]).expect("one input");
        let err = trace.output()[0] - (3.0 * x).sin();
        loss += err * err / xs.len() as f64;
        let cot = [2.0 * err / xs.len() as f64];
        spec.backward(params, &trace, &cot, &mut grad, false).expect("shapes match");
    }
    (loss, grad)
}

fn main() {
    let mut rng = basis::rng::stream(5, 0);
    let spec = MlpSpec::new(1, vec![32, 32], Activation::Tanh, 1);
    let mut params = vec![0.0; spec.param_count()];
    spec.init(&mut rng, &mut params);
    let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (_, analytic) = loss_and_grad(&spec, &params, &xs);
    let check = gradcheck(|p| loss_and_grad(&spec, p, &xs).0, &params, &analytic, None, 1e-5);
    println!("gradient check over {} parameters: max relative error {:.2e}", check.checked, check.max_rel_error);

    let mut adam = Adam::new(params.len());
    let all = [0..params.len()];
    for step in 0..=3000 {
        let (loss, grad) = loss_and_grad(&spec, &params, &xs);
        if step % 500 == 0 {
            println!("step {step:>5}: mse {loss:.5}");
        }
        adam.step(&mut params, &grad, 3e-3, &all).expect("finite gradients");
    }
    for x in [-0.9, -0.3, 0.0, 0.4, 0.8] {
        let y = spec.forward(&params, &[x]).expect("one input")[0];
        println!("f({x:+.1}) = {y:+.3}  target {:+.3}", (3.0f64 * x).sin());
    }
}
