use super::{NnError, ParamStore};

/// Step decay: the rate is divided by `factor` every `drop_every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub drop_every: usize,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { base_lr: lr, drop_every: 0, factor: 1.0 }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.drop_every == 0 {
            return self.base_lr;
        }
        self.base_lr / self.factor.powi((epoch / self.drop_every) as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-3, drop_every: 12, factor: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self { m: zeros(), v: zeros(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies the schedule for `epoch`.
    pub fn on_epoch(&mut self, schedule: &LrSchedule, epoch: usize) {
        self.lr = schedule.lr_at(epoch);
    }

    /// One bias-corrected Adam update from the store's grad buffers. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFiniteGrad(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.values[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornn::ParamTensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut t = ParamTensor::zeros("w", vec![1]);
        t.values[0] = v;
        s.add(t).unwrap();
        s
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = scalar_store(1.5);
        let mut a = AdamState::new(&s, 0.1);
        a.step(&mut s).unwrap();
        assert_eq!(s.get(s.id("w").unwrap()).values[0], 1.5);
    }

    #[test]
    fn single_step_by_hand() {
        let mut s = scalar_store(0.0);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad[0] = 1.0;
        let mut a = AdamState::new(&s, 0.1);
        a.step(&mut s).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(id).values[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = scalar_store(1.0);
        let id = s.id("w").unwrap();
        let mut a = AdamState::new(&s, 0.05);
        for _ in 0..200 {
            s.zero_grad();
            let w = s.get(id).values[0];
            s.get_mut(id).grad[0] = 2.0 * w;
            a.step(&mut s).unwrap();
        }
        assert!(s.get(id).values[0].abs() < 1e-2, "{}", s.get(id).values[0]);
    }

    #[test]
    fn non_finite_grad_aborts_with_name() {
        let mut s = scalar_store(1.0);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad[0] = f64::NAN;
        let mut a = AdamState::new(&s, 0.1);
        assert_eq!(a.step(&mut s), Err(NnError::NonFiniteGrad("w".into())));
        assert_eq!(s.get(id).values[0], 1.0);
        assert_eq!(a.step, 0);
    }

    #[test]
    fn schedule_divides_by_five() {
        let s = LrSchedule { base_lr: 1e-3, drop_every: 2, factor: 5.0 };
        let lrs: Vec<f64> = (0..4).map(|e| s.lr_at(e)).collect();
        assert_eq!(lrs[0], 1e-3);
        assert_eq!(lrs[1], 1e-3);
        assert!((lrs[2] - 2e-4).abs() < 1e-18);
        assert!((lrs[3] - 2e-4).abs() < 1e-18);
    }
}
