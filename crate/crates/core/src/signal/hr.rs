use std::f64::consts::PI;

use crate::{Error, Result};

/// Physiological search band, 45 to 150 bpm.
pub const HR_BAND_HZ: (f64, f64) = (0.75, 2.5);

const ZERO_PAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrEstimate {
    pub bpm: f64,
    pub peak_hz: f64,
    /// Spacing of the (zero-padded) frequency grid.
    pub resolution_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WelchPlan {
    pub segment: usize,
    pub hop: usize,
    pub segments: usize,
    pub nfft: usize,
}

/// Segments of `min(N, 256·fs/30)` samples with 50% overlap, zero-padded 4×.
pub fn welch_plan(n: usize, fs: f64) -> WelchPlan {
    let segment = n.min((256.0 * fs / 30.0).floor() as usize).max(2);
    let hop = (segment / 2).max(1);
    WelchPlan {
        segment,
        hop,
        segments: (n - segment) / hop + 1,
        nfft: ZERO_PAD * segment,
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Welch PSD of the mean-removed signal, evaluated on the in-band bins only.
/// Returns `(frequencies, power)`; power is in arbitrary units.
pub fn band_psd(w: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(fs > 0.0) {
        return Err(Error::contract("signal", format!("sample rate must be > 0, got {fs}")));
    }
    if (w.len() as f64) < 4.0 * fs - 1e-9 {
        return Err(Error::contract(
            "signal",
            format!("heart-rate estimation needs >= 4 s of samples, got {} at {fs} Hz", w.len()),
        ));
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let x: Vec<f64> = w.iter().map(|v| v - mean).collect();
    let plan = welch_plan(x.len(), fs);
    let window = hann(plan.segment);
    let df = fs / plan.nfft as f64;
    let (lo, hi) = HR_BAND_HZ;
    let first = (lo / df).ceil() as usize;
    let last = (hi / df).floor() as usize;
    let mut freqs = Vec::new();
    let mut power = Vec::new();
    for k in first..=last.min(plan.nfft / 2) {
        let omega = 2.0 * PI * k as f64 / plan.nfft as f64;
        let mut p = 0.0;
        for s in 0..plan.segments {
            let seg = &x[s * plan.hop..s * plan.hop + plan.segment];
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (&v, &h)) in seg.iter().zip(&window).enumerate() {
                let (sin, cos) = (omega * i as f64).sin_cos();
                re += v * h * cos;
                im -= v * h * sin;
            }
            p += re * re + im * im;
        }
        freqs.push(k as f64 * df);
        power.push(p / plan.segments as f64);
    }
    Ok((freqs, power))
}

pub fn estimate_hr(w: &[f64], fs: f64) -> Result<HrEstimate> {
    let no_peak = Error::NoPeak {
        lo_hz: HR_BAND_HZ.0,
        hi_hz: HR_BAND_HZ.1,
    };
    let (freqs, power) = band_psd(w, fs)?;
    // Below this relative energy the mean-removed signal is rounding noise.
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let ac: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(ac > 1e-20 * energy) || !ac.is_finite() {
        return Err(no_peak);
    }
    let (best, &peak) = power
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(no_peak)?;
    if !(peak > 0.0) {
        return Err(Error::NoPeak {
            lo_hz: HR_BAND_HZ.0,
            hi_hz: HR_BAND_HZ.1,
        });
    }
    let peak_hz = freqs[best];
    Ok(HrEstimate {
        bpm: 60.0 * peak_hz,
        peak_hz,
        resolution_hz: fs / welch_plan(w.len(), fs).nfft as f64,
    })
}
