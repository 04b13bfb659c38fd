//! Adam optimizer with bias correction.

use super::layer::{DenseLayer, GradientTape};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..AdamHyper::default()
        }
    }
}

struct Slot {
    name: String,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

/// Optimizer state for a fixed stack of layers.
///
/// Slot `i` corresponds to layer `i` of whatever slice is passed to
/// [`Adam::step`]; the caller must keep that order stable across steps.
/// Frozen layers are skipped entirely, leaving their parameters
/// bit-identical.
pub struct Adam {
    hyper: AdamHyper,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new<'a>(
        hyper: AdamHyper,
        layers: impl IntoIterator<Item = (&'a str, &'a DenseLayer)>,
    ) -> Self {
        let slots = layers
            .into_iter()
            .map(|(name, layer)| Slot {
                name: name.to_string(),
                m_w: vec![0.0; layer.in_dim() * layer.out_dim()],
                v_w: vec![0.0; layer.in_dim() * layer.out_dim()],
                m_b: vec![0.0; layer.out_dim()],
                v_b: vec![0.0; layer.out_dim()],
            })
            .collect();
        Adam {
            hyper,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated on `tape`.
    ///
    /// `layers` and `tape.layers` must match the slot layout given at
    /// construction. Non-finite gradients abort with the layer name.
    pub fn step(&mut self, layers: &mut [&mut DenseLayer], tape: &GradientTape) -> Result<()> {
        if layers.len() != self.slots.len() || tape.layers.len() != self.slots.len() {
            return Err(Error::State(format!(
                "optimizer built for {} layers, got {} layers and {} tapes",
                self.slots.len(),
                layers.len(),
                tape.layers.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t as i32);
        let bc2 = 1.0 - h.beta2.powi(t as i32);

        for ((layer, slot), layer_tape) in layers.iter_mut().zip(&mut self.slots).zip(&tape.layers)
        {
            if layer.frozen() {
                continue;
            }
            let w_grad = layer_tape.weight_grad.data();
            let b_grad = &layer_tape.bias_grad;
            if w_grad.iter().chain(b_grad.iter()).any(|g| !g.is_finite()) {
                return Err(Error::Train {
                    location: slot.name.clone(),
                    message: "non-finite gradient".to_string(),
                });
            }
            update_params(
                layer.weights_mut().data_mut(),
                w_grad,
                &mut slot.m_w,
                &mut slot.v_w,
                h,
                bc1,
                bc2,
            );
            update_params(
                layer.bias_mut(),
                b_grad,
                &mut slot.m_b,
                &mut slot.v_b,
                h,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn update_params(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    h: AdamHyper,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, GradientTape, LayerTape, Matrix};

    fn scalar_layer(w: f64) -> DenseLayer {
        DenseLayer::new(
            Matrix::from_vec(1, 1, vec![w]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()
    }

    fn tape_with_grads(layer: &DenseLayer, w_grad: f64, b_grad: f64) -> GradientTape {
        let mut tape = GradientTape::for_layers([layer]);
        tape.layers[0].weight_grad.data_mut()[0] = w_grad;
        tape.layers[0].bias_grad[0] = b_grad;
        tape
    }

    #[test]
    fn zero_gradient_leaves_params_and_bumps_step() {
        let mut layer = scalar_layer(0.7);
        let tape = tape_with_grads(&layer, 0.0, 0.0);
        let mut adam = Adam::new(AdamHyper::default(), [("l", &layer)]);
        adam.step(&mut [&mut layer], &tape).unwrap();
        assert_eq!(layer.weights().data()[0], 0.7);
        assert_eq!(layer.bias()[0], 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // With g = 1: m_hat = v_hat = 1 exactly, so the update is lr / (1 + eps).
        let mut layer = scalar_layer(0.5);
        let tape = tape_with_grads(&layer, 1.0, 0.0);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        let mut adam = Adam::new(hyper, [("l", &layer)]);
        adam.step(&mut [&mut layer], &tape).unwrap();
        let expected_delta = 0.1 / (1.0 + 1e-8);
        let actual_delta = 0.5 - layer.weights().data()[0];
        assert!((actual_delta - expected_delta).abs() < 1e-15);
        assert!((actual_delta - 0.1).abs() < 1e-8);
    }

    #[test]
    fn frozen_layer_is_bit_identical_after_steps() {
        let mut layer = scalar_layer(1.25);
        layer.set_frozen(true);
        let before_w = layer.weights().data()[0].to_bits();
        let before_b = layer.bias()[0].to_bits();
        let tape = tape_with_grads(&layer, 42.0, -3.0);
        let mut adam = Adam::new(AdamHyper::default(), [("l", &layer)]);
        for _ in 0..10 {
            adam.step(&mut [&mut layer], &tape).unwrap();
        }
        assert_eq!(layer.weights().data()[0].to_bits(), before_w);
        assert_eq!(layer.bias()[0].to_bits(), before_b);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut layer = scalar_layer(1.0);
        let tape = tape_with_grads(&layer, f64::NAN, 0.0);
        let mut adam = Adam::new(AdamHyper::default(), [("encoder.1", &layer)]);
        let err = adam.step(&mut [&mut layer], &tape).unwrap_err();
        assert!(err.to_string().contains("encoder.1"), "{err}");
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (w - 3)^2 by feeding its gradient; Adam should move w to 3.
        let mut layer = scalar_layer(0.0);
        let mut adam = Adam::new(AdamHyper::with_lr(0.05), [("l", &layer)]);
        for _ in 0..2000 {
            let w = layer.weights().data()[0];
            let tape = tape_with_grads(&layer, 2.0 * (w - 3.0), 0.0);
            adam.step(&mut [&mut layer], &tape).unwrap();
        }
        assert!((layer.weights().data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn relu_tie_at_zero_has_zero_gradient() {
        // Pre-activation exactly 0: the documented subgradient choice is 0.
        let layer = DenseLayer::new(
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let mut tape = LayerTape::for_layer(&layer);
        layer.forward_cached(&[0.0], &mut tape).unwrap();
        let d_in = layer.backward(&[1.0], &mut tape).unwrap();
        assert_eq!(d_in, vec![0.0]);
        assert_eq!(tape.bias_grad[0], 0.0);
    }
}
