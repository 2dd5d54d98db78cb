use super::{NnError, ParameterStore, Real};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

impl Adam {
    /// Applies one update from the accumulated gradients, then clears them.
    /// Every parameter must carry a gradient.
    pub fn step<F: Real>(&self, store: &mut ParameterStore<F>, lr: f64) -> Result<(), NnError> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.value.grad().is_none()) {
            return Err(NnError::MissingGradient(p.name.clone()));
        }
        let t = store.advance_step() as i32;
        let c1 = 1.0 / (1.0 - self.beta1.powi(t));
        let c2 = 1.0 / (1.0 - self.beta2.powi(t));
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - self.beta1), F::of(1.0 - self.beta2));
        let (c1, c2, lr, eps) = (F::of(c1), F::of(c2), F::of(lr), F::of(self.eps));
        for p in store.iter_mut() {
            let g = p.value.grad_mut().take().expect("checked above");
            let data = p.value.data_mut();
            for i in 0..data.len() {
                p.m[i] = b1 * p.m[i] + one_b1 * g[i];
                p.v[i] = b2 * p.v[i] + one_b2 * g[i] * g[i];
                let m_hat = p.m[i] * c1;
                let v_hat = p.v[i] * c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub d_model: usize,
    pub warmup_steps: u64,
    pub scale: f64,
}

impl ScheduleConfig {
    pub fn new(d_model: usize) -> Self {
        ScheduleConfig {
            d_model,
            warmup_steps: 4000,
            scale: 1.0,
        }
    }
}

/// `scale * d^-1/2 * min(step^-1/2, step * warmup^-3/2)`.
pub fn noam_lr(step: u64, cfg: &ScheduleConfig) -> Result<f64, NnError> {
    if step == 0 {
        return Err(NnError::ZeroStep);
    }
    if cfg.warmup_steps == 0 {
        return Err(NnError::Config("warmup must be at least one step".into()));
    }
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    Ok(cfg.scale * (cfg.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParameterStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new();
        s.add("w", &[3], Init::Uniform { fan_in: 1 }, &mut rng);
        s
    }

    #[test]
    fn schedule_values() {
        let cfg = ScheduleConfig::new(256);
        let peak = noam_lr(4000, &cfg).unwrap();
        assert!((peak - 1.0 / (16.0 * 4000f64.sqrt())).abs() < 1e-12);
        assert!((noam_lr(1, &cfg).unwrap() - 2.4705e-7).abs() < 1e-10);
        assert!(noam_lr(0, &cfg).is_err());
        for s in [1, 10, 3999, 4001, 10_000, 1_000_000] {
            assert!(noam_lr(s, &cfg).unwrap() <= peak);
        }
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = store();
        let before = s.iter().next().unwrap().1.value.data().to_vec();
        s.fill_missing_grads();
        Adam::default().step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value.data(), &before[..]);
        assert_eq!(s.step(), 1);
        assert!(s.iter().all(|(_, p)| p.value.grad().is_none()));
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut s = store();
        let before = s.iter().next().unwrap().1.value.data().to_vec();
        let g = [2.0, -0.5, 1e-3];
        s.get_mut(crate::nn::ParamId(0)).value.accumulate_grad(&g);
        Adam::default().step(&mut s, 0.01).unwrap();
        let after = s.iter().next().unwrap().1.value.data();
        for i in 0..3 {
            let delta = after[i] - before[i];
            assert!((delta + 0.01 * g[i].signum()).abs() < 1e-8, "{delta}");
        }
    }

    #[test]
    fn missing_gradient_errors() {
        let mut s = store();
        assert!(matches!(Adam::default().step(&mut s, 0.1), Err(NnError::MissingGradient(_))));
    }

    #[test]
    fn moments_carry_between_steps() {
        let grads = [[1.0, 0.3, -2.0], [0.25, 0.075, -0.5]];
        let mut a = store();
        for g in grads {
            a.get_mut(crate::nn::ParamId(0)).value.accumulate_grad(&g);
            Adam::default().step(&mut a, 0.01).unwrap();
        }
        let mut b = store();
        b.get_mut(crate::nn::ParamId(0)).value.accumulate_grad(&grads[0]);
        Adam::default().step(&mut b, 0.02).unwrap();
        let (pa, pb) = (a.iter().next().unwrap().1.value.data(), b.iter().next().unwrap().1.value.data());
        assert!(pa.iter().zip(pb).all(|(x, y)| (x - y).abs() > 1e-4));
    }
}
