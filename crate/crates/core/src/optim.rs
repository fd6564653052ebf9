//! First-order parameter optimization.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::{powi64, sqrt64, Scalar};
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults: learning rate 1e-3, betas (0.9, 0.999),
/// epsilon 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Adam optimizer state over one parameter set. Moment tensors are kept
/// per parameter in the set's order; update arithmetic runs in f64.
pub struct Adam<S: Scalar> {
    config: AdamConfig,
    step: u64,
    first_moment: Vec<Tensor<S>>,
    second_moment: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamSet<S>) -> Result<Self> {
        config.validate()?;
        let first_moment = params.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        let second_moment = params.params().iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        Ok(Adam { config, step: 0, first_moment, second_moment })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of completed updates.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment tensors in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Restores optimizer state saved by [`Adam::moments`].
    pub fn load_state(
        &mut self,
        step: u64,
        first_moment: Vec<Tensor<S>>,
        second_moment: Vec<Tensor<S>>,
    ) -> Result<()> {
        if first_moment.len() != self.first_moment.len() || second_moment.len() != self.second_moment.len() {
            return Err(Error::Config(format!(
                "optimizer state holds {} moment tensors, model needs {}",
                first_moment.len(),
                self.first_moment.len()
            )));
        }
        for (i, (have, want)) in first_moment.iter().zip(&self.first_moment).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Shape(format!(
                    "optimizer moment {i} has shape {:?}, expected {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        self.step = step;
        self.first_moment = first_moment;
        self.second_moment = second_moment;
        Ok(())
    }

    /// Applies one Adam update from the gradients of a backward pass.
    /// Parameters without a recorded gradient are treated as zero-gradient.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &Gradients<S>) -> Result<()> {
        if params.param_count() != self.first_moment.len() {
            return Err(Error::Config(format!(
                "optimizer was built for {} parameters, set has {}",
                self.first_moment.len(),
                params.param_count()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = self.config.learning_rate;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let eps = self.config.epsilon;
        let bias1 = 1.0 - powi64(b1, t);
        let bias2 = 1.0 - powi64(b2, t);
        for (slot, entry) in params.params_mut().iter_mut().enumerate() {
            let grad = grads.wrt_param(slot);
            let m = self.first_moment[slot].data_mut();
            let v = self.second_moment[slot].data_mut();
            let p = entry.tensor.data_mut();
            for i in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[i].as_f64());
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
                m[i] = S::from_f64(mi);
                v[i] = S::from_f64(vi);
                let update = lr * (mi / bias1) / (sqrt64(vi / bias2) + eps);
                p[i] = S::from_f64(p[i].as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn bowl_params(values: &[f64]) -> ParamSet<f64> {
        let mut params = ParamSet::new();
        let t = Tensor::from_fn([1, 1, 1, values.len()], |_, _, _, i| values[i]);
        params.add_param("p".into(), t);
        params
    }

    /// Gradient of sum((p - target)^2) recorded through the tape so the
    /// optimizer sees the same structures training uses.
    fn bowl_grads(params: &ParamSet<f64>, target: &[f64]) -> Gradients<f64> {
        let mut tape = Tape::new();
        let p = tape.param_leaf(0, params.params()[0].tensor.clone());
        let shift = Tensor::from_fn([1, 1, 1, target.len()], |_, _, _, i| -target[i]);
        let c = tape.constant(shift);
        let d = tape.add(p, c);
        let sq = tape.mul(d, d);
        let loss = tape.sum_all(sq);
        tape.backward(loss, 1)
    }

    #[test]
    fn first_update_moves_each_weight_by_the_learning_rate() {
        let mut params = bowl_params(&[5.0, -3.0, 0.25]);
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        let grads = bowl_grads(&params, &[0.0, 0.0, 0.0]);
        adam.step(&mut params, &grads).unwrap();
        // With m-hat = g and v-hat = g^2 the first step is lr * sign(g).
        let got = params.params()[0].tensor.data();
        assert!((got[0] - (5.0 - 1e-3)).abs() < 1e-9);
        assert!((got[1] - (-3.0 + 1e-3)).abs() < 1e-9);
        assert!((got[2] - (0.25 - 1e-3)).abs() < 1e-9);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn two_steps_match_a_hand_computed_trace() {
        let mut params = bowl_params(&[1.0]);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg.clone(), &params).unwrap();

        let mut expect = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let grads = bowl_grads(&params, &[0.0]);
            adam.step(&mut params, &grads).unwrap();

            let g = 2.0 * expect;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            expect -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);

            let got = params.params()[0].tensor.data()[0];
            assert!((got - expect).abs() < 1e-15, "step {t}: {got} vs {expect}");
        }
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        let target = [0.3, -1.2, 2.0, 0.0];
        let mut params = bowl_params(&[5.0, 5.0, -5.0, 1.0]);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() }, &params).unwrap();
        for _ in 0..400 {
            let grads = bowl_grads(&params, &target);
            adam.step(&mut params, &grads).unwrap();
        }
        for (got, want) in params.params()[0].tensor.data().iter().zip(&target) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }
    }

    #[test]
    fn identical_runs_produce_identical_parameters() {
        let run = || {
            let mut params = bowl_params(&[2.0, -1.0]);
            let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
            for _ in 0..10 {
                let grads = bowl_grads(&params, &[0.5, 0.5]);
                adam.step(&mut params, &grads).unwrap();
            }
            params.params()[0].tensor.data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { beta2: -0.1, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { epsilon: 0.0, ..AdamConfig::default() }.validate().is_err());
    }

    #[test]
    fn state_round_trips_and_rejects_mismatches() {
        let mut params = bowl_params(&[1.0, 2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        let grads = bowl_grads(&params, &[0.0, 0.0]);
        adam.step(&mut params, &grads).unwrap();

        let (m, v) = adam.moments();
        let (m, v) = (m.to_vec(), v.to_vec());
        let mut restored = Adam::new(AdamConfig::default(), &params).unwrap();
        restored.load_state(1, m.clone(), v.clone()).unwrap();
        assert_eq!(restored.step_count(), 1);

        let mut wrong = Adam::new(AdamConfig::default(), &params).unwrap();
        assert!(wrong.load_state(1, Vec::new(), Vec::new()).is_err());
        let bad_shape = alloc::vec![Tensor::<f64>::zeros([1, 1, 1, 3])];
        assert!(wrong.load_state(1, bad_shape.clone(), bad_shape).is_err());
    }
}
