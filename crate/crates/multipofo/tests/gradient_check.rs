//! Gradient checking: analytic backprop vs central finite differences.
//!
//! The numeric oracle below perturbs one parameter at a time and
//! re-evaluates the loss through the public forward path only; it shares
//! no code with the backward implementation.

use rand::Rng;

use multipofo::nn::{mse_loss, seed_rng, Activation, DenseLayer, GradientTape, Matrix, TrainRng};

const FD_EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// A small stack of layers with a summed-squared-error loss at the end.
struct Stack {
    layers: Vec<DenseLayer>,
}

impl Stack {
    fn loss(&self, input: &[f64], target: &[f64]) -> f64 {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x).unwrap();
        }
        mse_loss(&x, target).unwrap().0
    }

    /// Analytic gradients for every weight and bias, flattened per layer.
    fn analytic_gradients(&self, input: &[f64], target: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut tape = GradientTape::for_layers(self.layers.iter());
        let mut x = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            x = layer.forward_cached(&x, &mut tape.layers[li]).unwrap();
        }
        let (_, grad) = mse_loss(&x, target).unwrap();
        let mut upstream = grad;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            upstream = layer.backward(&upstream, &mut tape.layers[li]).unwrap();
        }
        tape.layers
            .iter()
            .map(|t| (t.weight_grad.data().to_vec(), t.bias_grad.clone()))
            .collect()
    }
}

fn random_layer(in_dim: usize, out_dim: usize, act: Activation, rng: &mut TrainRng) -> DenseLayer {
    let mut weights = Matrix::zeros(out_dim, in_dim);
    for w in weights.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let bias: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    DenseLayer::new(weights, bias, act).unwrap()
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    let rel = (analytic - numeric).abs() / denom;
    assert!(
        rel <= REL_TOL,
        "{what}: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"
    );
}

fn check_stack(mut stack: Stack, input: &[f64], target: &[f64]) {
    let analytic = stack.analytic_gradients(input, target);
    for li in 0..stack.layers.len() {
        let (w_grad, b_grad) = analytic[li].clone();
        for p in 0..w_grad.len() {
            let orig = stack.layers[li].weights().data()[p];
            stack.layers[li].weights_mut().data_mut()[p] = orig + FD_EPS;
            let plus = stack.loss(input, target);
            stack.layers[li].weights_mut().data_mut()[p] = orig - FD_EPS;
            let minus = stack.loss(input, target);
            stack.layers[li].weights_mut().data_mut()[p] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            assert_close(w_grad[p], numeric, &format!("layer {li} weight {p}"));
        }
        for p in 0..b_grad.len() {
            let orig = stack.layers[li].bias()[p];
            stack.layers[li].bias_mut()[p] = orig + FD_EPS;
            let plus = stack.loss(input, target);
            stack.layers[li].bias_mut()[p] = orig - FD_EPS;
            let minus = stack.loss(input, target);
            stack.layers[li].bias_mut()[p] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            assert_close(b_grad[p], numeric, &format!("layer {li} bias {p}"));
        }
    }
}

#[test]
fn single_relu_layers_match_finite_differences() {
    let mut rng = seed_rng(1001);
    for _ in 0..12 {
        let in_dim = rng.random_range(1..=16);
        let out_dim = rng.random_range(1..=16);
        let layer = random_layer(in_dim, out_dim, Activation::Relu, &mut rng);
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_stack(Stack { layers: vec![layer] }, &input, &target);
    }
}

#[test]
fn single_identity_layers_match_finite_differences() {
    let mut rng = seed_rng(1002);
    for _ in 0..8 {
        let in_dim = rng.random_range(1..=16);
        let out_dim = rng.random_range(1..=16);
        let layer = random_layer(in_dim, out_dim, Activation::Identity, &mut rng);
        let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_stack(Stack { layers: vec![layer] }, &input, &target);
    }
}

#[test]
fn deep_mixed_stacks_match_finite_differences() {
    // The encoder/decoder shape in miniature: ReLU stack with a linear end.
    let mut rng = seed_rng(1003);
    for _ in 0..5 {
        let dims: Vec<usize> = (0..4).map(|_| rng.random_range(2..=10)).collect();
        let layers = vec![
            random_layer(dims[0], dims[1], Activation::Relu, &mut rng),
            random_layer(dims[1], dims[2], Activation::Relu, &mut rng),
            random_layer(dims[2], dims[3], Activation::Identity, &mut rng),
        ];
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..dims[3]).map(|_| rng.random_range(-1.0..1.0)).collect();
        check_stack(Stack { layers }, &input, &target);
    }
}
