use serde::{Deserialize, Serialize};

use crate::nn::{Graph, NnError, Tensor, Var};

/// Weights of the curvature term (`alpha`), the object loss (`beta`) and
/// the local loss (`kappa`) in the composite objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 0.2,
            kappa: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if [self.alpha, self.beta, self.kappa]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
        {
            Ok(())
        } else {
            Err(format!("loss weights must be positive, got {self:?}"))
        }
    }
}

/// Batch-mean cross entropy of the object head.
pub fn loss_object(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
    let ce = g.softmax_cross_entropy(logits, targets)?;
    g.mean(ce)
}

/// Batch mean of `CE(grasp) + alpha·Σ mask·(v̂ − v)²`. Without a curvature
/// prediction only the cross entropy remains.
pub fn loss_local(
    g: &mut Graph,
    grasp_logits: Var,
    targets: &[usize],
    curvature: Option<(Var, &Tensor, &Tensor)>,
    w: &LossWeights,
) -> Result<Var, NnError> {
    let ce = g.softmax_cross_entropy(grasp_logits, targets)?;
    let ce = g.mean(ce)?;
    match curvature {
        Some((pred, target, mask)) => {
            let sq = g.masked_sq_err(pred, target, mask)?;
            let sq = g.mean(sq)?;
            g.weighted_sum(&[(ce, 1.0), (sq, w.alpha)])
        }
        None => Ok(ce),
    }
}

/// Batch mean of `CE(action) + beta·L_object + kappa·L_local`.
pub fn loss_action_frame(
    g: &mut Graph,
    action_logits: Var,
    targets: &[usize],
    l_object: Var,
    l_local: Var,
    w: &LossWeights,
) -> Result<Var, NnError> {
    let ce = g.softmax_cross_entropy(action_logits, targets)?;
    let ce = g.mean(ce)?;
    g.weighted_sum(&[(ce, 1.0), (l_object, w.beta), (l_local, w.kappa)])
}

/// Scalar form of [`loss_local`] from its parts.
pub fn composite_local_loss(ce_grasp: f64, sq_err: f64, w: &LossWeights) -> f64 {
    ce_grasp + w.alpha * sq_err
}

/// Scalar form of [`loss_action_frame`] from its parts.
pub fn composite_frame_loss(ce_action: f64, l_object: f64, l_local: f64, w: &LossWeights) -> f64 {
    ce_action + w.beta * l_object + w.kappa * l_local
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rng, ParamStore};

    fn graph(store: &ParamStore) -> Graph<'_> {
        Graph::new(store, false, rng(0))
    }

    #[test]
    fn uniform_grasp_with_unit_residual() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        let logits = g.input(Tensor::zeros(&[1, 36]));
        let pred = g.input(Tensor::full(&[1, 778], 1.0));
        let target = Tensor::zeros(&[1, 778]);
        let mask = Tensor::full(&[1, 778], 1.0);
        let l = loss_local(
            &mut g,
            logits,
            &[4],
            Some((pred, &target, &mask)),
            &LossWeights::default(),
        )
        .unwrap();
        let expected = 36f64.ln() + 0.3 * 778.0;
        assert!((g.value(l).item() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn masked_residual_leaves_cross_entropy() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        let logits = g.input(Tensor::zeros(&[1, 36]));
        let pred = g.input(Tensor::full(&[1, 778], 1.0));
        let target = Tensor::zeros(&[1, 778]);
        let mask = Tensor::zeros(&[1, 778]);
        let l = loss_local(
            &mut g,
            logits,
            &[0],
            Some((pred, &target, &mask)),
            &LossWeights::default(),
        )
        .unwrap();
        assert!((g.value(l).item() - 36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_are_near_zero() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        let mut t = Tensor::full(&[1, 5], -1e3);
        t.data_mut()[2] = 1e3;
        let logits = g.input(t);
        let l = loss_object(&mut g, logits, &[2]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn weight_arithmetic() {
        let w = LossWeights::default();
        assert!((composite_frame_loss(1.0, 2.0, 4.0, &w) - 3.4).abs() < 1e-15);
        assert_eq!(composite_frame_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert!(LossWeights { beta: 0.0, ..w }.validate().is_err());
    }
}
