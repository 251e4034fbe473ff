//! Multi-level periodic discrete wavelet transform for orthogonal bases.

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaveletKind {
    #[default]
    Haar,
    /// Four-tap Daubechies (two vanishing moments).
    Db4,
}

impl WaveletKind {
    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::Db4 => "db4",
        }
    }
}

impl std::str::FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletKind::Haar),
            "db4" => Ok(WaveletKind::Db4),
            other => Err(Error::contract("wavelet", format!("unknown basis {other:?} (expected haar or db4)"))),
        }
    }
}

/// Analysis and synthesis filter pairs.
///
/// Analysis computes `a[n] = Σ_k lo[k]·x[(2n+k) mod N]`; synthesis scatters
/// back through the same index map, so for orthogonal bases the synthesis
/// filters equal the analysis filters.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis<T> {
    pub kind: WaveletKind,
    pub dec_lo: Vec<T>,
    pub dec_hi: Vec<T>,
    pub rec_lo: Vec<T>,
    pub rec_hi: Vec<T>,
}

impl<T: Scalar> WaveletBasis<T> {
    pub fn new(kind: WaveletKind) -> Self {
        let lo: Vec<T> = match kind {
            WaveletKind::Haar => {
                let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                vec![r, r]
            }
            WaveletKind::Db4 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * 2f64.sqrt();
                [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3]
                    .iter()
                    .map(|&c| T::lit(c / d))
                    .collect()
            }
        };
        // Quadrature mirror: hi[k] = (-1)^k lo[L-1-k].
        let n = lo.len();
        let hi: Vec<T> = (0..n)
            .map(|k| if k % 2 == 0 { lo[n - 1 - k] } else { -lo[n - 1 - k] })
            .collect();
        WaveletBasis {
            kind,
            rec_lo: lo.clone(),
            rec_hi: hi.clone(),
            dec_lo: lo,
            dec_hi: hi,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletKind::Haar)
    }

    pub fn db4() -> Self {
        Self::new(WaveletKind::Db4)
    }
}

/// Coefficients of a `level`-deep transform. `dc[0]` is the finest band.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<T> {
    pub ac: Vec<T>,
    pub dc: Vec<Vec<T>>,
    pub level: usize,
    pub original_len: usize,
}

impl<T: Scalar> Decomposition<T> {
    pub fn energy(&self) -> T {
        self.ac
            .iter()
            .chain(self.dc.iter().flatten())
            .map(|&v| v * v)
            .sum()
    }
}

fn analysis_step<T: Scalar>(x: &[T], basis: &WaveletBasis<T>) -> (Vec<T>, Vec<T>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![T::zero(); half];
    let mut d = vec![T::zero(); half];
    for i in 0..half {
        for (k, (&lo, &hi)) in basis.dec_lo.iter().zip(&basis.dec_hi).enumerate() {
            let v = x[(2 * i + k) % n];
            a[i] += lo * v;
            d[i] += hi * v;
        }
    }
    (a, d)
}

fn synthesis_step<T: Scalar>(a: &[T], d: &[T], basis: &WaveletBasis<T>) -> Vec<T> {
    let n = 2 * a.len();
    let mut x = vec![T::zero(); n];
    for i in 0..a.len() {
        for (k, (&lo, &hi)) in basis.rec_lo.iter().zip(&basis.rec_hi).enumerate() {
            x[(2 * i + k) % n] += lo * a[i] + hi * d[i];
        }
    }
    x
}

/// Forward transform with periodic extension. `x.len()` must be a multiple
/// of `2^level`.
pub fn dwt<T: Scalar>(x: &[T], basis: &WaveletBasis<T>, level: usize) -> Result<Decomposition<T>> {
    if level < 1 {
        return Err(Error::contract("wavelet", "decomposition level must be >= 1"));
    }
    let divisor = 1usize
        .checked_shl(u32::try_from(level).unwrap_or(u32::MAX))
        .filter(|&d| d != 0)
        .ok_or_else(|| Error::contract("wavelet", format!("level {level} too large")))?;
    if x.is_empty() || !x.len().is_multiple_of(divisor) {
        return Err(Error::Length {
            module: "wavelet",
            len: x.len(),
            divisor,
        });
    }
    let mut approx = x.to_vec();
    let mut dc = Vec::with_capacity(level);
    for _ in 0..level {
        let (a, d) = analysis_step(&approx, basis);
        dc.push(d);
        approx = a;
    }
    Ok(Decomposition {
        ac: approx,
        dc,
        level,
        original_len: x.len(),
    })
}

/// Inverse of [`dwt`].
pub fn idwt<T: Scalar>(d: &Decomposition<T>, basis: &WaveletBasis<T>) -> Result<Vec<T>> {
    let n = d.original_len;
    let consistent = d.level >= 1
        && d.dc.len() == d.level
        && n.is_multiple_of(1 << d.level)
        && d.ac.len() == n >> d.level
        && d.dc.iter().enumerate().all(|(j, band)| band.len() == n >> (j + 1));
    if !consistent {
        let lens: Vec<usize> = d.dc.iter().map(Vec::len).collect();
        return Err(Error::contract(
            "wavelet",
            format!(
                "inconsistent decomposition: length {n}, level {}, ac {}, dc {lens:?}",
                d.level,
                d.ac.len()
            ),
        ));
    }
    let mut approx = d.ac.clone();
    for band in d.dc.iter().rev() {
        approx = synthesis_step(&approx, band, basis);
    }
    Ok(approx)
}
