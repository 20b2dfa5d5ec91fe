use super::OptimConfig;
use crate::scalar::Real;

/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, cfg: &OptimConfig) -> Self {
        Self {
            lr: T::lit(cfg.learning_rate),
            beta1: T::lit(cfg.beta1),
            beta2: T::lit(cfg.beta2),
            eps: T::lit(cfg.eps),
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update `params` (which sit at `offset` in the flat vector) with `grad`.
    /// Call [`Adam::begin_step`] once per step before the first update.
    pub fn update(&mut self, offset: usize, params: &mut [T], grad: &[T]) {
        debug_assert!(self.step > 0);
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(m).zip(v) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// One full step over a single contiguous parameter vector.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.begin_step();
        self.update(0, params, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::<f64>::new(2, &cfg);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimises_a_quadratic() {
        let cfg = OptimConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut adam = Adam::<f64>::new(1, &cfg);
        let mut p = [4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
