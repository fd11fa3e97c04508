//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use super::{Gradients, ParamStore};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked entries.
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `analytic` against central differences of `loss` for every
/// trainable parameter, probing up to `per_param` random entries of each.
/// Parameters whose analytic and numeric gradients both vanish (norm below
/// [`VANISHING_NORM`]) report a relative error of zero.
/// Below this norm a gradient is indistinguishable from the rounding residue
/// of central differences on an O(1)–O(10) loss (about 1e-10 at step 1e-5).
pub const VANISHING_NORM: f64 = 1e-8;

pub fn check_gradients(
    params: &ParamStore,
    analytic: &Gradients,
    loss: impl Fn(&ParamStore) -> f64,
    per_param: usize,
    step: f64,
    rng: &mut impl Rng,
) -> GradCheckReport {
    let mut probe = params.clone();
    let mut report = Vec::new();
    for id in params.ids() {
        if !params.is_trainable(id) {
            continue;
        }
        let n = params.get(id).len();
        let entries: Vec<usize> = if n <= per_param { (0..n).collect() } else { sample(rng, n, per_param).into_vec() };
        let zeros = vec![0.0; n];
        let grad = analytic.get(id).map(|g| g.data()).unwrap_or(&zeros);
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &i in &entries {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let plus = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig - step;
            let minus = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            diff += (grad[i] - numeric).powi(2);
            na += grad[i].powi(2);
            nn += numeric.powi(2);
        }
        let (diff, na, nn) = (diff.sqrt(), na.sqrt(), nn.sqrt());
        let denom = na.max(nn);
        report.push(ParamCheck {
            name: params.name(id).to_owned(),
            checked: entries.len(),
            analytic_norm: na,
            numeric_norm: nn,
            rel_error: if denom < VANISHING_NORM { 0.0 } else { diff / denom },
        });
    }
    GradCheckReport { params: report }
}
