use super::mlp::{LayerStack, MlpParameters};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update.
pub fn adam_step(mut params: MlpParameters, gradients: &LayerStack, learning_rate: f64) -> MlpParameters {
    let state = &mut params.adam_state;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let moments = state
        .first_moment
        .iter_mut()
        .zip(state.second_moment.iter_mut());
    for ((theta, g), (m, v)) in params.layers.iter_mut().zip(gradients.iter()).zip(moments) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse::mlp::{HiddenActivation, NetworkConfig, OutputActivation};

    fn params() -> MlpParameters {
        MlpParameters::init(NetworkConfig {
            layers: 2,
            width: 2,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Sigmoid,
            input_dim: 1,
            output_dim: 1,
            seed: 3,
        })
        .unwrap()
    }

    fn constant_grad(p: &MlpParameters, g: f64) -> LayerStack {
        let mut grads = p.zero_gradients();
        grads.iter_mut().for_each(|v| *v = g);
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = params();
        let before = p.layers.to_flat();
        for g in [3.7, -0.02] {
            let grads = constant_grad(&p, g);
            let after = adam_step(p.clone(), &grads, 0.01).layers.to_flat();
            for (a, b) in after.iter().zip(&before) {
                let expected = -0.01 * g.signum() * g.abs() / (g.abs() + ADAM_EPS);
                assert!((a - b - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gradient_decays_moments_only() {
        let p = params();
        let first = adam_step(p, &constant_grad(&params(), 1.0), 0.1);
        let theta = first.layers.to_flat();
        let second = adam_step(first.clone(), &first.zero_gradients(), 0.1);
        assert_eq!(second.adam_state.step, 2);
        for (m0, m1) in first
            .adam_state
            .first_moment
            .iter()
            .zip(second.adam_state.first_moment.iter())
        {
            assert!((m1 - BETA1 * m0).abs() < 1e-16);
        }
        // Parameters still move: the first moment has not vanished.
        assert_ne!(second.layers.to_flat(), theta);
        let fresh = params();
        let still = adam_step(fresh.clone(), &fresh.zero_gradients(), 0.1);
        assert_eq!(still.layers, fresh.layers);
        assert_eq!(still.adam_state.step, 1);
    }

    #[test]
    fn two_steps_follow_hand_recurrence() {
        let g = 0.5;
        let lr = 0.1;
        let p = params();
        let theta0 = p.layers.to_flat();
        let grads = constant_grad(&p, g);
        let p2 = adam_step(adam_step(p, &grads, lr), &grads, lr);
        // m1 = 0.05, v1 = 0.00025; m2 = 0.095, v2 = 0.00049975
        let m2: f64 = 0.095;
        let v2: f64 = 0.000_499_75;
        let step2 = lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998_001)).sqrt() + ADAM_EPS);
        let step1 = lr * 0.5 / (0.5 + ADAM_EPS);
        for (a, b) in p2.layers.to_flat().iter().zip(&theta0) {
            assert!((b - a - step1 - step2).abs() < 1e-14);
        }
        assert!((p2.adam_state.first_moment.to_flat()[0] - m2).abs() < 1e-15);
        assert!((p2.adam_state.second_moment.to_flat()[0] - v2).abs() < 1e-15);
    }
}
