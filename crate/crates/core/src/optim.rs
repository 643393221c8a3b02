//! Adam with bias correction.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Parameter};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and step count, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn set_learning_rate(&mut self, alpha: f64) {
        self.config.alpha = alpha;
    }

    /// One update of every parameter, scaled by each parameter's own
    /// learning-rate multiplier.
    pub fn step(&mut self, params: &mut [Parameter], grads: &Gradients) -> Result<()> {
        for p in params.iter() {
            check_gradient(&p.name, &p.value, grads)?;
        }
        self.t += 1;
        for p in params.iter_mut() {
            let g = &grads[&p.name];
            self.update(&p.name, p.value.data_mut(), g.data(), p.lr_multiplier);
        }
        Ok(())
    }

    /// Like [`AdamState::step`] for plain named tensors; names missing from
    /// `multipliers` use 1.
    pub fn step_named(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &Gradients,
        multipliers: &HashMap<String, f64>,
    ) -> Result<()> {
        for (name, value) in params.iter() {
            check_gradient(name, value, grads)?;
        }
        self.t += 1;
        for (name, value) in params.iter_mut() {
            let mult = multipliers.get(name).copied().unwrap_or(1.0);
            self.update(name, value.data_mut(), grads[name].data(), mult);
        }
        Ok(())
    }

    fn update(&mut self, name: &str, w: &mut [f64], g: &[f64], multiplier: f64) {
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let t = self.t as i32;
        let correction = (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        let rate = alpha * multiplier * correction;
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            if multiplier != 0.0 {
                w[i] -= rate * m[i] / (v[i] + epsilon).sqrt();
            }
        }
    }
}

fn check_gradient(name: &str, value: &Tensor, grads: &Gradients) -> Result<()> {
    let g = grads
        .get(name)
        .ok_or_else(|| Error::InvalidArgument(format!("no gradient for parameter `{name}`")))?;
    if g.len() != value.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "gradient for `{name}` has {} values, parameter has {}",
                g.len(),
                value.len()
            ),
        ));
    }
    if !g.all_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> (BTreeMap<String, Tensor>, Gradients) {
        let mut p = BTreeMap::new();
        p.insert("w".to_string(), Tensor::from_vec(vec![w]));
        let mut gr = Gradients::new();
        gr.insert("w".to_string(), Tensor::from_vec(vec![g]));
        (p, gr)
    }

    #[test]
    fn first_step_by_hand() {
        let (mut p, g) = single(1.0, 0.5);
        let mut adam = AdamState::default();
        adam.step_named(&mut p, &g, &HashMap::new()).unwrap();
        assert_eq!(adam.t, 1);
        assert!((adam.m["w"][0] - 0.05).abs() < 1e-15);
        assert!((adam.v["w"][0] - 0.00025).abs() < 1e-15);
        assert!((p["w"].data()[0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, g) = single(0.37, 0.0);
        let mut adam = AdamState::default();
        for _ in 0..5 {
            adam.step_named(&mut p, &g, &HashMap::new()).unwrap();
        }
        assert_eq!(p["w"].data()[0], 0.37);
    }

    #[test]
    fn zero_multiplier_freezes_but_tracks_moments() {
        let (mut p, g) = single(1.0, 0.5);
        let mut adam = AdamState::default();
        let mults = HashMap::from([("w".to_string(), 0.0)]);
        adam.step_named(&mut p, &g, &mults).unwrap();
        assert_eq!(p["w"].data()[0].to_bits(), 1.0f64.to_bits());
        assert!(adam.m["w"][0] > 0.0 && adam.v["w"][0] > 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut p, g) = single(1.0, f64::NAN);
        let mut adam = AdamState::default();
        let err = adam.step_named(&mut p, &g, &HashMap::new()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(adam.t, 0, "failed step must not advance the counter");
        assert_eq!(p["w"].data()[0], 1.0);
    }
}
