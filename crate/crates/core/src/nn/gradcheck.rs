//! Central-difference gradient checking.
//!
//! The closure under test evaluates the loss at the current parameter values
//! and, when asked, writes analytic gradients into each slot's `grad`. It also
//! reports a fingerprint of the non-smooth decisions it took (ReLU signs,
//! max-pool winners). A coordinate is skipped when that fingerprint changes
//! between `θ - 10δ` and `θ + 10δ`, i.e. when a kink lies within `10δ`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::ParamSlot;

/// Anything exposing its trainable slots in a stable order.
pub trait Parameterized {
    fn param_slots(&self) -> Vec<&ParamSlot>;
    fn param_slots_mut(&mut self) -> Vec<&mut ParamSlot>;

    fn zero_grads(&mut self) {
        for p in self.param_slots_mut() {
            p.zero_grad();
        }
    }
}

impl Parameterized for Vec<ParamSlot> {
    fn param_slots(&self) -> Vec<&ParamSlot> {
        self.iter().collect()
    }

    fn param_slots_mut(&mut self) -> Vec<&mut ParamSlot> {
        self.iter_mut().collect()
    }
}

/// Result of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    /// Hash of all branch decisions; `0` for smooth losses.
    pub fingerprint: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Self { loss, fingerprint: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub delta: f64,
    /// Coordinates sampled per slot; `None` checks every coordinate.
    pub max_coords_per_slot: Option<usize>,
    pub kink_margin: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            delta: 1e-5,
            max_coords_per_slot: Some(24),
            kink_margin: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(slot name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients from `eval(model, true)` with central
/// differences of `eval(model, false)`.
pub fn grad_check<M, F>(model: &mut M, mut eval: F, opts: &GradCheckOptions) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> Probe,
{
    model.zero_grads();
    eval(model, true);
    let analytic: Vec<Vec<f64>> = model
        .param_slots()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let slot_count = analytic.len();
    for slot in 0..slot_count {
        let len = analytic[slot].len();
        let coords: Vec<usize> = match opts.max_coords_per_slot {
            Some(n) if n < len => index::sample(&mut rng, len, n).into_vec(),
            _ => (0..len).collect(),
        };
        for idx in coords {
            let original = model.param_slots()[slot].value.data()[idx];
            let mut at = |m: &mut M, offset: f64| {
                m.param_slots_mut()[slot].value.data_mut()[idx] = original + offset;
                let p = eval(m, false);
                m.param_slots_mut()[slot].value.data_mut()[idx] = original;
                p
            };
            let far = opts.kink_margin * opts.delta;
            let lo = at(model, -far);
            let hi = at(model, far);
            if lo.fingerprint != hi.fingerprint {
                report.skipped_kinks += 1;
                continue;
            }
            let plus = at(model, opts.delta);
            let minus = at(model, -opts.delta);
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.delta);
            let err = relative_error(analytic[slot][idx], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((model.param_slots()[slot].name.clone(), idx));
            }
        }
    }
    report
}
