//! Synthetic clips, heart-rate estimation and evaluation metrics.
//!
//! A clip carries a ground-truth pulse waveform, a noisy "backbone" estimate
//! of it (`x_enc`), scene metadata and a feature pyramid whose levels are
//! fixed random projections of sliding pulse windows plus spatial noise, so
//! the visual path carries pulse information too.

mod hr;
mod io;
mod metrics;

pub use hr::{band_psd, estimate_hr, welch_plan, HrEstimate, WelchPlan, HR_BAND_HZ};
pub use io::{
    format_waveform, parse_waveform, read_manifest, read_waveform, write_manifest, write_waveform, ManifestRecord,
    Waveform,
};
pub use metrics::{metrics, pearson, MetricsReport};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::aggregator::FeaturePyramid;
use crate::cue::SceneMeta;
use crate::numcore::Tensor;
use crate::rng::{derive_seed, rng_for};
use crate::{Error, Result};

/// `(H, W, window)` per pyramid level, shallow to deep.
pub const PYRAMID_LEVELS: [(usize, usize, usize); 3] = [(8, 8, 4), (4, 4, 8), (2, 2, 16)];

/// Root seed of the fixed backbone projections; shared by every clip.
pub const BACKBONE_SEED: u64 = 0x6261_636b_626f_6e65;

pub const HR_RANGE_BPM: (f64, f64) = (45.0, 150.0);

const HARMONIC_AMP: f64 = 0.3;
const ENC_NOISE_RHO: f64 = 0.9;
const SPATIAL_NOISE_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub hr_bpm: f64,
    pub fs: f64,
    pub len: usize,
    /// `f64::INFINITY` means noiseless.
    pub snr_db: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec {
            hr_bpm: 72.0,
            fs: 30.0,
            len: 128,
            snr_db: f64::INFINITY,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = HR_RANGE_BPM;
        if !(lo..=hi).contains(&self.hr_bpm) {
            return Err(Error::contract(
                "signal",
                format!("heart rate {} bpm outside [{lo}, {hi}]", self.hr_bpm),
            ));
        }
        if self.len < 64 {
            return Err(Error::contract("signal", format!("clip length {} < 64", self.len)));
        }
        // The second harmonic must sit below Nyquist.
        if !(self.fs > 4.0 * self.hr_bpm / 60.0) {
            return Err(Error::contract(
                "signal",
                format!("fs {} Hz too low for the harmonic of {} bpm", self.fs, self.hr_bpm),
            ));
        }
        if self.snr_db.is_nan() {
            return Err(Error::contract("signal", "snr is NaN"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub spec: ClipSpec,
    pub seed: u64,
    /// Ground truth `y`.
    pub bvp: Vec<f64>,
    pub x_enc: Vec<f64>,
    pub scene: SceneMeta,
    /// Levels shaped `[1, T, H, W]`.
    pub pyramid: FeaturePyramid<f64>,
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Rescales zero-mean `noise` to power `mean_square(reference) / 10^(snr/10)`.
fn scale_noise(mut noise: Vec<f64>, reference: &[f64], snr_db: f64) -> Vec<f64> {
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    noise.iter_mut().for_each(|v| *v -= mean);
    let target = mean_square(reference) / 10f64.powf(snr_db / 10.0);
    let k = (target / mean_square(&noise)).sqrt();
    noise.iter_mut().for_each(|v| *v *= k);
    noise
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `10 log10(P(clean) / P(noisy - clean))`.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let residual: Vec<f64> = noisy.iter().zip(clean).map(|(a, b)| a - b).collect();
    10.0 * (mean_square(clean) / mean_square(&residual)).log10()
}

fn backbone_projections() -> Vec<Vec<f64>> {
    let mut rng = rng_for(BACKBONE_SEED, "backbone");
    PYRAMID_LEVELS
        .iter()
        .map(|&(h, w, win)| {
            let std = 1.0 / (win as f64).sqrt();
            gaussian(&mut rng, win * h * w).into_iter().map(|v| v * std).collect()
        })
        .collect()
}

/// Each frame's feature map is a fixed linear function of the trailing
/// `window` pulse samples (edge-padded at the start) plus spatial noise.
fn backbone_pyramid<R: Rng>(bvp: &[f64], rng: &mut R) -> Result<FeaturePyramid<f64>> {
    let t = bvp.len();
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS.len());
    for (&(h, w, win), proj) in PYRAMID_LEVELS.iter().zip(backbone_projections()) {
        let hw = h * w;
        let padded: Vec<f64> = std::iter::repeat_n(bvp[0], win - 1).chain(bvp.iter().copied()).collect();
        let mut data = Vec::with_capacity(t * hw);
        for frame in 0..t {
            let window = &padded[frame..frame + win];
            for c in 0..hw {
                let v: f64 = window.iter().enumerate().map(|(k, x)| x * proj[k * hw + c]).sum();
                let noise: f64 = StandardNormal.sample(rng);
                data.push(v + SPATIAL_NOISE_STD * noise);
            }
        }
        levels.push(Tensor::new(vec![1, t, h, w], data)?);
    }
    FeaturePyramid::new(levels)
}

pub fn gen_clip(spec: &ClipSpec, seed: u64) -> Result<SyntheticClip> {
    spec.validate()?;
    let n = spec.len;
    let f = spec.hr_bpm / 60.0;
    let mut phase_rng = rng_for(seed, "phase");
    let phi: f64 = phase_rng.random_range(0.0..2.0 * PI);
    let phi2: f64 = phase_rng.random_range(0.0..2.0 * PI);
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / spec.fs;
            (2.0 * PI * f * t + phi).sin() + HARMONIC_AMP * (4.0 * PI * f * t + 2.0 * phi + phi2).sin()
        })
        .collect();

    let (bvp, x_enc) = if spec.snr_db.is_infinite() && spec.snr_db > 0.0 {
        (clean.clone(), clean)
    } else {
        let white = scale_noise(gaussian(&mut rng_for(seed, "bvp-noise"), n), &clean, spec.snr_db);
        let bvp: Vec<f64> = clean.iter().zip(&white).map(|(s, e)| s + e).collect();
        let innovations = gaussian(&mut rng_for(seed, "enc-noise"), n);
        let mut colored = Vec::with_capacity(n);
        let mut prev = 0.0;
        for e in innovations {
            prev = ENC_NOISE_RHO * prev + e;
            colored.push(prev);
        }
        let colored = scale_noise(colored, &bvp, spec.snr_db);
        let x_enc = bvp.iter().zip(&colored).map(|(s, c)| s + c).collect();
        (bvp, x_enc)
    };

    let mut scene_rng = rng_for(seed, "scene");
    let scene = SceneMeta {
        lighting: scene_rng.random_range(0.0..1.0),
        motion: scene_rng.random_bool(0.3),
        skin_tone: scene_rng.random_range(1..=6),
    };
    let pyramid = backbone_pyramid(&bvp, &mut rng_for(seed, "spatial-noise"))?;
    Ok(SyntheticClip {
        spec: *spec,
        seed,
        bvp,
        x_enc,
        scene,
        pyramid,
    })
}

/// Recipe for a set of clips with heart rates drawn uniformly from the valid range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub fs: f64,
    pub len: usize,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 64,
            fs: 30.0,
            len: 128,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

/// `(spec, seed)` per clip; cheap, and enough to regenerate any clip.
pub fn dataset_specs(d: &DatasetSpec) -> Result<Vec<(ClipSpec, u64)>> {
    if d.count == 0 {
        return Err(Error::contract("signal", "dataset needs at least one clip"));
    }
    let mut rng = rng_for(d.seed, "dataset-hr");
    (0..d.count)
        .map(|i| {
            let spec = ClipSpec {
                hr_bpm: rng.random_range(HR_RANGE_BPM.0..=HR_RANGE_BPM.1),
                fs: d.fs,
                len: d.len,
                snr_db: d.snr_db,
            };
            spec.validate()?;
            Ok((spec, derive_seed(d.seed, &format!("clip{i}"))))
        })
        .collect()
}

pub fn synth_dataset(d: &DatasetSpec) -> Result<Vec<SyntheticClip>> {
    dataset_specs(d)?.iter().map(|(spec, seed)| gen_clip(spec, *seed)).collect()
}
