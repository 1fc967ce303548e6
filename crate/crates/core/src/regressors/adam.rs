use super::real::Real;
use super::RegressorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// The learning rate is multiplied by `decay` after every `decay_every`
    /// iterations.
    pub decay_every: usize,
    pub decay: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            batch_size: 256,
            decay_every: 5000,
            decay: 0.1,
            iterations: 15000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RegressorError> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.decay_every > 0
            && self.decay > 0.0;
        if ok {
            Ok(())
        } else {
            Err(RegressorError::InvalidConfig(format!("{self:?}")))
        }
    }

    /// Learning rate in effect at a 1-based iteration.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        let steps = iteration.saturating_sub(1) / self.decay_every;
        self.learning_rate * self.decay.powi(steps as i32)
    }

    pub fn describe(&self) -> String {
        format!(
            "lr={:?} beta1={:?} beta2={:?} eps={:?} batch={} decay_every={} decay={:?} iterations={} seed={}",
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.batch_size,
            self.decay_every,
            self.decay,
            self.iterations,
            self.seed
        )
    }

    /// Inverse of [`TrainConfig::describe`].
    pub fn parse(text: &str) -> Result<Self, RegressorError> {
        let bad = |what: &str| RegressorError::Checkpoint(format!("bad train config {what} in '{text}'"));
        let mut cfg = Self::default();
        for field in text.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(field))?;
            let f = || v.parse::<f64>().map_err(|_| bad(k));
            let u = || v.parse::<usize>().map_err(|_| bad(k));
            match k {
                "lr" => cfg.learning_rate = f()?,
                "beta1" => cfg.beta1 = f()?,
                "beta2" => cfg.beta2 = f()?,
                "eps" => cfg.epsilon = f()?,
                "batch" => cfg.batch_size = u()?,
                "decay_every" => cfg.decay_every = u()?,
                "decay" => cfg.decay = f()?,
                "iterations" => cfg.iterations = u()?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(k))?,
                _ => return Err(bad(k)),
            }
        }
        Ok(cfg)
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// One bias-corrected Adam update at a 1-based `iteration`, with the
    /// scheduled learning rate.
    pub fn step(&mut self, params: &mut [T], grad: &[T], config: &TrainConfig, iteration: usize) {
        assert!(iteration >= 1, "iterations are 1-based");
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        let t = iteration as i32;
        let lr = config.learning_rate_at(iteration);
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let (b1, b2) = (T::from_f64(config.beta1), T::from_f64(config.beta2));
        let (one, eps) = (T::one(), T::from_f64(config.epsilon));
        let (inv_c1, inv_c2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
        let lr = T::from_f64(lr);
        let tiny = T::min_positive_value();
        // Moments of idle parameters decay geometrically; flushing them to
        // zero before they turn subnormal avoids a large slowdown on x86.
        let flush = |x: T| if x.abs() < tiny { T::zero() } else { x };
        for i in 0..params.len() {
            let g = grad[i];
            let m = flush(b1 * self.m[i] + (one - b1) * g);
            let v = flush(b2 * self.v[i] + (one - b2) * g * g);
            self.m[i] = m;
            self.v[i] = v;
            let m_hat = m * inv_c1;
            let v_hat = v * inv_c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
