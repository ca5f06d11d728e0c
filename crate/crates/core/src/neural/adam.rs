//! Adam optimizer with bias-corrected moment estimates.

use std::collections::HashMap;

use crate::matrix::Matrix;

use super::{TensorBag, TrainConfig};

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state: first/second moment estimates per named tensor plus
/// the shared step counter.
pub struct AdamOpt {
    cfg: TrainConfig,
    t: u64,
    slots: HashMap<String, Slot>,
}

impl AdamOpt {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update: θ ← θ − lr·m̂/(√v̂ + ε) per entry, where m̂ and
    /// v̂ are the bias-corrected moment estimates. `grads` must hold one
    /// matching-shape gradient per trainable tensor.
    pub fn step<M: TensorBag + ?Sized>(&mut self, model: &mut M, grads: &HashMap<String, Matrix>) {
        self.t += 1;
        let t = self.t;
        let TrainConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.cfg;
        let bias1 = 1.0 - beta1.powi(t as i32);
        let bias2 = 1.0 - beta2.powi(t as i32);
        let slots = &mut self.slots;
        model.for_each_tensor(&mut |name, tensor| {
            let g = grads
                .get(name)
                .unwrap_or_else(|| panic!("no gradient for tensor {name:?}"));
            assert_eq!(
                g.as_slice().len(),
                tensor.as_slice().len(),
                "gradient shape mismatch for {name:?}"
            );
            let slot = slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![0.0; tensor.as_slice().len()],
                v: vec![0.0; tensor.as_slice().len()],
            });
            let params = tensor.as_mut_slice();
            for i in 0..params.len() {
                let gi = g.as_slice()[i];
                slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * gi;
                slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct One {
        w: Matrix,
    }

    impl TensorBag for One {
        fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
            f("w", &mut self.w);
        }
    }

    fn grads_of(values: Vec<f64>) -> HashMap<String, Matrix> {
        let mut map = HashMap::new();
        let n = values.len();
        map.insert("w".to_string(), Matrix::from_vec(1, n, values));
        map
    }

    #[test]
    fn first_step_moves_by_about_lr_against_the_gradient() {
        let mut model = One {
            w: Matrix::from_vec(1, 2, vec![1.0, -2.0]),
        };
        let mut opt = AdamOpt::new(&TrainConfig::default());
        opt.step(&mut model, &grads_of(vec![0.7, -0.3]));
        let d0 = 1.0 - model.w.get(0, 0);
        let d1 = -2.0 - model.w.get(0, 1);
        // m̂ = g, v̂ = g², so the step is ≈ lr·sign(g).
        assert!((0.000999..=0.001).contains(&d0), "d0 {d0}");
        assert!((-0.001..=-0.000999).contains(&d1), "d1 {d1}");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model = One {
            w: Matrix::from_vec(1, 3, vec![0.5, -0.5, 2.0]),
        };
        let before = model.w.clone();
        let mut opt = AdamOpt::new(&TrainConfig::default());
        opt.step(&mut model, &grads_of(vec![0.0, 0.0, 0.0]));
        assert_eq!(model.w.as_slice(), before.as_slice());
    }

    #[test]
    fn two_steps_match_a_straight_line_transcription() {
        let cfg = TrainConfig::default();
        let g1 = [0.7, -0.3];
        let g2 = [0.2, 0.4];
        let mut model = One {
            w: Matrix::from_vec(1, 2, vec![1.0, -2.0]),
        };
        let mut opt = AdamOpt::new(&cfg);
        opt.step(&mut model, &grads_of(g1.to_vec()));
        opt.step(&mut model, &grads_of(g2.to_vec()));

        // Independent transcription of the update equations.
        let mut theta = [1.0, -2.0];
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for (t, g) in [g1, g2].iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..2 {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - cfg.beta1.powi(t));
                let v_hat = v[i] / (1.0 - cfg.beta2.powi(t));
                theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        for i in 0..2 {
            assert!(
                (model.w.as_slice()[i] - theta[i]).abs() <= 1e-12,
                "coordinate {i}"
            );
        }
    }
}
