use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::{NumError, ParamStore, Tape, Var};
use crate::rng::rng_for;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Check at most this many elements per parameter tensor.
    pub per_param: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error, so that gradients that are
    /// both ~0 do not divide by zero. Raised automatically to
    /// `ROUNDOFF_MARGIN * epsilon * |loss| / eps`, the scale below which the
    /// central difference itself is dominated by rounding.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            per_param: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    /// Worst error grouped by the parameter name up to its first `.`.
    pub fn max_by_prefix(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let key = e.param.split('.').next().unwrap_or("").to_string();
            let slot = out.entry(key).or_insert(0.0_f64);
            *slot = slot.max(e.rel_err);
        }
        out
    }
}

const ROUNDOFF_MARGIN: f64 = 1e5;

/// Compares the tape's gradients of `f` with central differences.
///
/// `f` must build a scalar loss from the store deterministically; it is run
/// twice up front and rejected if the two losses differ in any bit.
pub fn grad_check<T, E, F>(f: F, store: &mut ParamStore<T>, opts: GradCheckOptions) -> Result<GradCheckReport, E>
where
    T: Scalar,
    E: From<NumError>,
    F: for<'t> Fn(&'t Tape<T>, &ParamStore<T>) -> Result<Var<'t, T>, E>,
{
    let eval = |store: &ParamStore<T>| -> Result<T, E> {
        let tape = Tape::inference();
        Ok(f(&tape, store)?.item())
    };

    let tape = Tape::new();
    let loss = f(&tape, store)?;
    let base = loss.item();
    tape.backward(loss, store)?;
    if eval(store)?.to_bits_lossy() != base.to_bits_lossy() {
        return Err(NumError::Contract("grad_check: objective is not deterministic".into()).into());
    }

    let floor = opts
        .floor
        .max(ROUNDOFF_MARGIN * T::epsilon().as_f64() * base.as_f64().abs() / opts.eps);
    let eps = T::lit(opts.eps);
    let two_eps = eps + eps;
    let mut rng = rng_for(opts.seed, "grad_check");
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let len = store.get(id).value.len();
        let indices: Vec<usize> = match opts.per_param {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for i in indices {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            let numeric = ((plus - minus) / two_eps).as_f64();
            let analytic = store.get(id).grad.data()[i].as_f64();
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            report.entries.push(GradCheckEntry {
                param: store.get(id).name.clone(),
                index: i,
                analytic,
                numeric,
                rel_err: (analytic - numeric).abs() / denom,
            });
        }
    }
    Ok(report)
}

trait BitsLossy {
    fn to_bits_lossy(self) -> u64;
}

impl<T: Scalar> BitsLossy for T {
    fn to_bits_lossy(self) -> u64 {
        self.as_f64().to_bits()
    }
}
