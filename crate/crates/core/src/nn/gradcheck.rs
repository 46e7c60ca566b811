//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::Gradients;
use super::{Graph, NnError, ParamId, ParamStore, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Something with a scalar loss and analytic parameter gradients.
pub trait Objective {
    fn loss(&self, store: &ParamStore) -> Result<f64, NnError>;
    fn loss_and_grad(&self, store: &ParamStore) -> Result<(f64, Gradients), NnError>;
}

/// Objective defined by a graph-building closure. Dropout masks are drawn
/// from the same seed on every evaluation so the loss is a fixed function.
pub struct GraphObjective<F> {
    build: F,
    training: bool,
    seed: u64,
}

impl<F> GraphObjective<F>
where
    F: Fn(&mut Graph) -> Result<Var, NnError>,
{
    pub fn new(build: F) -> Self {
        Self {
            build,
            training: false,
            seed: 0,
        }
    }

    /// Evaluate in training mode with dropout masks drawn from `seed`.
    pub fn training(mut self, seed: u64) -> Self {
        self.training = true;
        self.seed = seed;
        self
    }
}

impl<F> Objective for GraphObjective<F>
where
    F: Fn(&mut Graph) -> Result<Var, NnError>,
{
    fn loss(&self, store: &ParamStore) -> Result<f64, NnError> {
        let mut g = Graph::new(store, self.training, ChaCha8Rng::seed_from_u64(self.seed));
        let loss = (self.build)(&mut g)?;
        Ok(g.value(loss).item())
    }

    fn loss_and_grad(&self, store: &ParamStore) -> Result<(f64, Gradients), NnError> {
        let mut g = Graph::new(store, self.training, ChaCha8Rng::seed_from_u64(self.seed));
        let loss = (self.build)(&mut g)?;
        Ok((g.value(loss).item(), g.backward(loss)?))
    }
}

/// Compares analytic gradients against central differences on every entry
/// of `ids`. `store` is restored before returning.
pub fn gradient_check(
    store: &mut ParamStore,
    ids: &[ParamId],
    objective: &dyn Objective,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    let (_, grads) = objective.loss_and_grad(store)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    for &id in ids {
        let n = store.value(id).len();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; n],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let plus = objective.loss(store);
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let minus = objective.loss(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Wraps an objective and scales its analytic gradients, for negative controls.
pub struct CorruptedGradient<'a> {
    pub inner: &'a dyn Objective,
    pub factor: f64,
}

impl Objective for CorruptedGradient<'_> {
    fn loss(&self, store: &ParamStore) -> Result<f64, NnError> {
        self.inner.loss(store)
    }

    fn loss_and_grad(&self, store: &ParamStore) -> Result<(f64, Gradients), NnError> {
        let (l, mut g) = self.inner.loss_and_grad(store)?;
        g.scale(self.factor);
        Ok((l, g))
    }
}
