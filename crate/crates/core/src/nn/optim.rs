//! Optimizers. Every step reads the accumulated gradients of the listed
//! parameters, updates their values, and zeroes those gradients.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamId, ParamStore, Tensor};

/// Step schedule `lr(e) = base_lr · 0.5^⌊e / halving_period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub base_lr: f64,
    pub halving_period: usize,
}

impl Default for SgdSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            halving_period: 50,
        }
    }
}

impl SgdSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let halvings = epoch / self.halving_period.max(1);
        self.base_lr * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
    }
}

fn check_grads(store: &ParamStore, ids: &[ParamId]) -> Result<(), NnError> {
    for &id in ids {
        let p = store.get(id);
        if !p.grad.all_finite() {
            return Err(NnError::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok(())
}

/// Plain SGD: `p ← p − lr(epoch)·grad`, then zero the gradients.
pub fn sgd_step(store: &mut ParamStore, ids: &[ParamId], schedule: &SgdSchedule, epoch: usize) -> Result<(), NnError> {
    check_grads(store, ids)?;
    let lr = schedule.lr(epoch);
    for &id in ids {
        let p = store.get_mut(id);
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Stateful optimizer over a fixed parameter list.
#[derive(Debug, Clone)]
pub enum Optimizer {
    /// SGD with optional heavy-ball momentum and the halving schedule.
    Sgd {
        schedule: SgdSchedule,
        momentum: f64,
        velocity: Vec<Tensor>,
    },
    Adam {
        schedule: SgdSchedule,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        t: i32,
    },
}

impl Optimizer {
    pub fn sgd(store: &ParamStore, ids: &[ParamId], schedule: SgdSchedule, momentum: f64) -> Self {
        Optimizer::Sgd {
            schedule,
            momentum,
            velocity: ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect(),
        }
    }

    pub fn adam(store: &ParamStore, ids: &[ParamId], schedule: SgdSchedule) -> Self {
        let zeros = || ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        Optimizer::Adam {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn new(kind: OptimizerKind, store: &ParamStore, ids: &[ParamId], schedule: SgdSchedule, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(store, ids, schedule, momentum),
            OptimizerKind::Adam => Self::adam(store, ids, schedule),
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        match self {
            Optimizer::Sgd { schedule, .. } | Optimizer::Adam { schedule, .. } => schedule.lr(epoch),
        }
    }

    /// `ids` must be the list the optimizer was created with.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], epoch: usize) -> Result<(), NnError> {
        check_grads(store, ids)?;
        let lr = self.lr(epoch);
        match self {
            Optimizer::Sgd { momentum, velocity, .. } => {
                for (&id, vel) in ids.iter().zip(velocity.iter_mut()) {
                    let p = store.get_mut(id);
                    for ((x, g), u) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(vel.data_mut()) {
                        *u = *momentum * *u + g;
                        *x -= lr * *u;
                    }
                    p.grad.fill(0.0);
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
                ..
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for ((&id, mt), vt) in ids.iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                    let p = store.get_mut(id);
                    let values = p.value.data_mut();
                    for (i, &g) in p.grad.data().iter().enumerate() {
                        let mi = &mut mt.data_mut()[i];
                        *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                        let vi = &mut vt.data_mut()[i];
                        *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                        values[i] -= lr * (mt.data()[i] / c1) / ((vt.data()[i] / c2).sqrt() + *eps);
                    }
                    p.grad.fill(0.0);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_period() {
        let s = SgdSchedule::default();
        assert_eq!(s.lr(0), 0.001);
        assert_eq!(s.lr(49), 0.001);
        assert_eq!(s.lr(50), 0.0005);
        assert_eq!(s.lr(120), 0.00025);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        sgd_step(&mut store, &[id], &SgdSchedule::default(), 0).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn sgd_moves_against_gradient_and_zeroes() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(&[2], vec![1.0, 1.0]).unwrap());
        store.get_mut(id).grad = Tensor::new(&[2], vec![10.0, -10.0]).unwrap();
        sgd_step(&mut store, &[id], &SgdSchedule::default(), 0).unwrap();
        assert_eq!(store.value(id).data(), &[1.0 - 0.01, 1.0 + 0.01]);
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[1]));
        store.get_mut(id).grad = Tensor::scalar(f64::NAN);
        assert!(matches!(
            sgd_step(&mut store, &[id], &SgdSchedule::default(), 0),
            Err(NnError::NonFiniteGradient(_))
        ));
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[2]));
        store.get_mut(id).grad = Tensor::new(&[2], vec![3.0, -0.2]).unwrap();
        let mut opt = Optimizer::adam(
            &store,
            &[id],
            SgdSchedule {
                base_lr: 0.01,
                halving_period: 10,
            },
        );
        opt.step(&mut store, &[id], 0).unwrap();
        for (v, s) in store.value(id).data().iter().zip([-1.0, 1.0]) {
            assert!((v - s * 0.01).abs() < 1e-8);
        }
    }
}
