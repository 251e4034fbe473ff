//! Dual-domain stationarization.
//!
//! A sequence is standardized and exponentially smoothed in the time domain,
//! and in parallel decomposed with a DWT whose bands are each standardized
//! and smoothed before reconstruction. The two paths are blended by
//! `β = sigmoid(β_raw)`, a trainable scalar.

use crate::numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::wavelet::{dwt, idwt, WaveletBasis, WaveletKind};
use crate::{Error, Result, Scalar};

/// Added to the standard deviation before dividing.
pub const STD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdsConfig {
    pub alpha: f64,
    pub eps: f64,
    pub level: usize,
    pub basis: WaveletKind,
}

impl Default for DdsConfig {
    fn default() -> Self {
        DdsConfig {
            alpha: 0.8,
            eps: STD_EPS,
            level: 3,
            basis: WaveletKind::Haar,
        }
    }
}

impl DdsConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.eps > 0.0) {
            return Err(Error::contract("dds", format!("eps must be > 0, got {}", self.eps)));
        }
        if self.level < 1 {
            return Err(Error::contract("dds", "wavelet level must be >= 1"));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::contract("dds", format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized<T> {
    pub values: Vec<T>,
    pub mean: T,
    pub std: T,
}

/// `(x - μ) / (σ + ε)` with the population (1/N) standard deviation.
pub fn standardize<T: Scalar>(x: &[T], eps: f64) -> Result<Standardized<T>> {
    if x.len() < 2 {
        return Err(Error::contract("dds", format!("standardize needs >= 2 samples, got {}", x.len())));
    }
    Ok(standardize_unchecked(x, eps))
}

fn standardize_unchecked<T: Scalar>(x: &[T], eps: f64) -> Standardized<T> {
    let n = T::from_usize_lossy(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    let denom = std + T::lit(eps);
    Standardized {
        values: x.iter().map(|&v| (v - mean) / denom).collect(),
        mean,
        std,
    }
}

/// `z_0 = x_0`, `z_i = α·x_i + (1-α)·z_{i-1}`.
pub fn ema_smooth<T: Scalar>(x: &[T], alpha: f64) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    let a = T::lit(alpha);
    let keep = T::one() - a;
    let mut out = Vec::with_capacity(x.len());
    let mut prev = T::zero();
    for (i, &v) in x.iter().enumerate() {
        prev = if i == 0 { v } else { a * v + keep * prev };
        out.push(prev);
    }
    Ok(out)
}

/// Extends `x` with copies of its last sample up to a multiple of `multiple`.
pub fn pad_edge<T: Scalar>(x: &[T], multiple: usize) -> Vec<T> {
    let mut out = x.to_vec();
    if let Some(&last) = x.last() {
        let target = x.len().div_ceil(multiple) * multiple;
        out.resize(target, last);
    }
    out
}

/// Everything computed on the way to `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdsTrace<T> {
    pub mean: T,
    pub std: T,
    pub standardized: Vec<T>,
    pub z_time: Vec<T>,
    pub z_fre: Vec<T>,
    pub beta: T,
    pub z: Vec<T>,
}

/// The two β-independent branches: `(standardized, z_time, z_fre)`.
pub struct DdsBranches<T> {
    pub standardized: Standardized<T>,
    pub z_time: Vec<T>,
    pub z_fre: Vec<T>,
}

pub fn dds_branches<T: Scalar>(x: &[T], cfg: &DdsConfig) -> Result<DdsBranches<T>> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::contract("dds", "empty input"));
    }
    let standardized = standardize(x, cfg.eps)?;
    let z_time = ema_smooth(&standardized.values, cfg.alpha)?;

    let basis = WaveletBasis::new(cfg.basis);
    let padded = pad_edge(x, 1 << cfg.level);
    let mut dec = dwt(&padded, &basis, cfg.level)?;
    let smooth = |band: &mut Vec<T>| -> Result<()> {
        let s = standardize_unchecked(band, cfg.eps);
        *band = ema_smooth(&s.values, cfg.alpha)?;
        Ok(())
    };
    smooth(&mut dec.ac)?;
    for band in &mut dec.dc {
        smooth(band)?;
    }
    let mut z_fre = idwt(&dec, &basis)?;
    z_fre.truncate(x.len());

    Ok(DdsBranches {
        standardized,
        z_time,
        z_fre,
    })
}

/// `(1-β)·a + β·b`, element-wise.
pub fn blend<T: Scalar>(a: &[T], b: &[T], beta: T) -> Vec<T> {
    let keep = T::one() - beta;
    a.iter().zip(b).map(|(&p, &q)| keep * p + beta * q).collect()
}

/// Full transform with an explicit blend weight.
pub fn dds_forward<T: Scalar>(x: &[T], cfg: &DdsConfig, beta: T) -> Result<DdsTrace<T>> {
    let br = dds_branches(x, cfg)?;
    let z = blend(&br.z_time, &br.z_fre, beta);
    Ok(DdsTrace {
        mean: br.standardized.mean,
        std: br.standardized.std,
        standardized: br.standardized.values,
        z_time: br.z_time,
        z_fre: br.z_fre,
        beta,
        z,
    })
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Trainable DDS layer: the configuration plus the `β_raw` parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Dds {
    pub config: DdsConfig,
    pub beta_raw: ParamId,
}

impl Dds {
    /// Registers `β_raw = 0`, i.e. `β = 0.5`.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, config: DdsConfig) -> Result<Self> {
        config.validate()?;
        let beta_raw = store.add(format!("{prefix}.beta_raw"), Tensor::scalar(T::zero()), true)?;
        Ok(Dds { config, beta_raw })
    }

    pub fn beta<T: Scalar>(&self, store: &ParamStore<T>) -> T {
        sigmoid(store.value(self.beta_raw).item())
    }

    /// Differentiable in `β_raw`. Returns `z` with shape `[len]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &[T],
    ) -> Result<(Var<'t, T>, DdsTrace<T>)> {
        let br = dds_branches(x, &self.config)?;
        let n = x.len();
        let beta = tape.param(store, self.beta_raw).sigmoid();
        let keep = beta.neg().shift(T::one());
        let zt = tape.constant(Tensor::vector(&br.z_time)?);
        let zf = tape.constant(Tensor::vector(&br.z_fre)?);
        let z = zt.mul(keep)?.add(zf.mul(beta)?)?;
        debug_assert_eq!(z.shape(), vec![n]);
        let trace = DdsTrace {
            mean: br.standardized.mean,
            std: br.standardized.std,
            standardized: br.standardized.values,
            z_time: br.z_time,
            z_fre: br.z_fre,
            beta: beta.item(),
            z: z.value().data().to_vec(),
        };
        Ok((z, trace))
    }
}

/// Weak-stationarity statistics of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport<T> {
    pub len: usize,
    pub mean: T,
    pub variance: T,
    /// `α / (2 - α)`: the variance of EMA-smoothed unit white noise.
    pub theoretical_variance: T,
    /// Normalized autocorrelation at lags `1..=K` over the whole sequence.
    pub autocorr: Vec<T>,
    pub autocorr_first_half: Vec<T>,
    pub autocorr_second_half: Vec<T>,
    pub max_half_disagreement: T,
    /// Set when the sequence has (numerically) zero variance.
    pub degenerate: bool,
}

fn moments<T: Scalar>(z: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(z.len());
    let mean = z.iter().copied().sum::<T>() / n;
    let var = z.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var)
}

fn is_degenerate<T: Scalar>(z: &[T], var: T) -> bool {
    let scale = z.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::min_positive_value());
    let tol = T::epsilon() * scale * T::lit(16.0);
    var <= tol * tol
}

/// `r(k) = Σ (z_i - m)(z_{i+k} - m) / Σ (z_i - m)^2` for `k = 1..=max_lag`.
pub fn normalized_autocorr<T: Scalar>(z: &[T], max_lag: usize) -> Vec<T> {
    let (mean, var) = moments(z);
    if is_degenerate(z, var) {
        return vec![T::zero(); max_lag];
    }
    let dev: Vec<T> = z.iter().map(|&v| v - mean).collect();
    let denom: T = dev.iter().map(|&d| d * d).sum();
    (1..=max_lag)
        .map(|k| {
            if k >= dev.len() {
                return T::zero();
            }
            dev.iter().zip(&dev[k..]).map(|(&a, &b)| a * b).sum::<T>() / denom
        })
        .collect()
}

pub fn stationarity_report<T: Scalar>(z: &[T], max_lag: usize, alpha: f64) -> Result<StationarityReport<T>> {
    check_alpha(alpha)?;
    if max_lag < 1 {
        return Err(Error::contract("dds", "max lag must be >= 1"));
    }
    if z.len() < 8 * max_lag {
        return Err(Error::contract(
            "dds",
            format!("stationarity report needs >= {} samples for lag {max_lag}, got {}", 8 * max_lag, z.len()),
        ));
    }
    let (mean, variance) = moments(z);
    let degenerate = is_degenerate(z, variance);
    let half = z.len() / 2;
    let autocorr = normalized_autocorr(z, max_lag);
    let first = normalized_autocorr(&z[..half], max_lag);
    let second = normalized_autocorr(&z[half..], max_lag);
    let max_half_disagreement = first
        .iter()
        .zip(&second)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    Ok(StationarityReport {
        len: z.len(),
        mean,
        variance,
        theoretical_variance: T::lit(alpha / (2.0 - alpha)),
        autocorr,
        autocorr_first_half: first,
        autocorr_second_half: second,
        max_half_disagreement,
        degenerate,
    })
}
