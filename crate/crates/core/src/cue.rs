//! Physiological cue prompts.
//!
//! Three captions (task, scene, signal statistics) are rendered from fixed
//! templates, hashed into vocabulary ids, embedded through the frozen
//! vocabulary, compressed to `L` tokens each by learned-query attention and
//! fused with learned element-wise weights.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;

use crate::dds::normalized_autocorr;
use crate::numcore::{NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{fnv1a64, normal_tensor};
use crate::{Error, Result, Scalar};

pub const TOP_LAGS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary<T> {
    pub min: T,
    pub max: T,
    pub median: T,
    /// `Σ (x[t+1] - x[t])`, which telescopes to `x[T-1] - x[0]`.
    pub trend: T,
    /// Sign of `trend`: -1, 0 or +1.
    pub direction: i8,
    /// Up to five lags in `[1, T/2]`, strongest |autocorrelation| first.
    pub top_lags: Vec<usize>,
}

/// Needs at least 3 samples so that one lag exists.
pub fn signal_stats<T: Scalar>(x: &[T]) -> Result<StatSummary<T>> {
    if x.len() < 3 {
        return Err(Error::contract("cue", format!("signal_stats needs >= 3 samples, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite { op: "signal_stats" }.into());
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    };
    let trend: T = x.windows(2).map(|w| w[1] - w[0]).sum();
    let direction = if trend > T::zero() {
        1
    } else if trend < T::zero() {
        -1
    } else {
        0
    };
    Ok(StatSummary {
        min: sorted[0],
        max: sorted[n - 1],
        median,
        trend,
        direction,
        top_lags: top_lags(x, TOP_LAGS),
    })
}

/// The `k` lags in `[1, len/2]` with the largest |normalized autocorrelation|;
/// ties go to the smaller lag.
pub fn top_lags<T: Scalar>(x: &[T], k: usize) -> Vec<usize> {
    let max_lag = x.len() / 2;
    let r = normalized_autocorr(x, max_lag);
    let mut lags: Vec<usize> = (1..=max_lag).collect();
    lags.sort_by(|&a, &b| {
        r[b - 1]
            .abs()
            .partial_cmp(&r[a - 1].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    lags.truncate(k);
    lags
}

/// Synthetic stand-in for what a captioning model would say about a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneMeta {
    /// 0 = dark, 1 = bright.
    pub lighting: f64,
    pub motion: bool,
    /// Fitzpatrick type 1..=6.
    pub skin_tone: u8,
}

impl SceneMeta {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lighting) {
            return Err(Error::contract("cue", format!("lighting {} outside [0, 1]", self.lighting)));
        }
        if !(1..=6).contains(&self.skin_tone) {
            return Err(Error::contract("cue", format!("skin tone {} outside 1..=6", self.skin_tone)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CueKind {
    Task,
    Vision,
    Stats,
}

impl CueKind {
    pub const ALL: [CueKind; 3] = [CueKind::Task, CueKind::Vision, CueKind::Stats];

    pub fn name(self) -> &'static str {
        match self {
            CueKind::Task => "task",
            CueKind::Vision => "vision",
            CueKind::Stats => "stats",
        }
    }
}

impl fmt::Display for CueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueText {
    pub kind: CueKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CaptionInputs<'a> {
    pub stats: Option<&'a StatSummary<f64>>,
    pub scene: Option<&'a SceneMeta>,
}

pub const TASK_CAPTION: &str = "Task: remote photoplethysmography. Recover the blood volume pulse \
waveform of the subject from facial video, one sample per frame. The pulse is quasi periodic with \
heart rate between 45 and 150 beats per minute.";

pub fn render_caption(kind: CueKind, inputs: &CaptionInputs<'_>) -> Result<CueText> {
    let text = match kind {
        CueKind::Task => TASK_CAPTION.to_string(),
        CueKind::Vision => {
            let scene = inputs
                .scene
                .ok_or_else(|| Error::contract("cue", "vision caption needs scene metadata"))?;
            scene.validate()?;
            // Answers the three query topics: illumination, movement/expression, facial appearance.
            let light = match scene.lighting {
                l if l < 0.33 => "dim",
                l if l < 0.67 => "moderate",
                _ => "bright",
            };
            let motion = if scene.motion {
                "is moving the head"
            } else {
                "keeps the head still"
            };
            format!(
                "The face is under {light} illumination at level {:.2}. The subject {motion}. \
                 The skin tone is Fitzpatrick type {}.",
                scene.lighting, scene.skin_tone
            )
        }
        CueKind::Stats => {
            let s = inputs
                .stats
                .ok_or_else(|| Error::contract("cue", "stats caption needs a signal summary"))?;
            let direction = match s.direction {
                1 => "rising",
                -1 => "falling",
                _ => "flat",
            };
            let lags: Vec<String> = s.top_lags.iter().map(usize::to_string).collect();
            format!(
                "Signal statistics: min {:.3}, max {:.3}, median {:.3}, trend {:.3} ({direction}), \
                 top lags {} samples.",
                s.min,
                s.max,
                s.median,
                s.trend,
                lags.join(" ")
            )
        }
    };
    Ok(CueText { kind, text })
}

/// Vocabulary ids, all `< vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
}

/// Lowercases, splits on anything that is not alphanumeric and hashes each
/// piece with FNV-1a into `[0, vocab)`.
pub fn tokenize(text: &str, vocab: usize) -> Result<TokenSeq> {
    if vocab == 0 {
        return Err(Error::contract("cue", "vocabulary size must be >= 1"));
    }
    let lower = text.to_lowercase();
    let ids: Vec<usize> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|p| !p.is_empty())
        .map(|p| (fnv1a64(p.as_bytes()) % vocab as u64) as usize)
        .collect();
    if ids.is_empty() {
        return Err(Error::contract("cue", "cannot tokenize empty text"));
    }
    Ok(TokenSeq { ids })
}

/// Token ids for the three captions of one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueTokens {
    pub task: TokenSeq,
    pub vision: TokenSeq,
    pub stats: TokenSeq,
}

impl CueTokens {
    pub fn get(&self, kind: CueKind) -> &TokenSeq {
        match kind {
            CueKind::Task => &self.task,
            CueKind::Vision => &self.vision,
            CueKind::Stats => &self.stats,
        }
    }
}

/// Renders and tokenizes all three captions for one clip.
pub fn clip_cues(x_enc: &[f64], scene: &SceneMeta, vocab: usize) -> Result<CueTokens> {
    let stats = signal_stats(x_enc)?;
    let inputs = CaptionInputs {
        stats: Some(&stats),
        scene: Some(scene),
    };
    let tok = |kind| tokenize(&render_caption(kind, &inputs)?.text, vocab);
    Ok(CueTokens {
        task: tok(CueKind::Task)?,
        vision: tok(CueKind::Vision)?,
        stats: tok(CueKind::Stats)?,
    })
}

/// `L` learned queries attending over a variable-length caption.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveCompressor {
    /// `[L, D]`.
    pub queries: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub len: usize,
    pub dim: usize,
}

impl AttentiveCompressor {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        len: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if len == 0 {
            return Err(Error::contract("cue", "prompt length must be >= 1"));
        }
        let std = 1.0 / (dim as f64).sqrt();
        let queries = store.add(format!("{prefix}.queries"), normal_tensor(rng, &[len, dim], 1.0), true)?;
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), normal_tensor(rng, &[dim, dim], std), true);
        Ok(AttentiveCompressor {
            queries,
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            len,
            dim,
        })
    }

    /// `[B, n, D] -> [B, L, D]`.
    pub fn compress<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = c.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(NumError::shape("compress", &s, &[0, 0, self.dim]).into());
        }
        let q = tape.param(store, self.queries).matmul(tape.param(store, self.wq))?;
        let k = c.matmul(tape.param(store, self.wk))?;
        let v = c.matmul(tape.param(store, self.wv))?;
        // Scores are built as K·Qᵀ so the shared queries need no batch axis.
        let scale = T::one() / T::from_usize_lossy(self.dim).sqrt();
        let weights = k.matmul(q.transpose()?)?.transpose()?.scale(scale).softmax()?;
        Ok(weights.matmul(v)?)
    }
}

/// `Σ_k W_k ⊙ E_k` with each `W_k` of shape `[L, D]` broadcast over batch.
pub fn fuse_cues<'t, T: Scalar>(parts: [Var<'t, T>; 3], weights: [Var<'t, T>; 3]) -> Result<Var<'t, T>> {
    let shape = parts[0].shape();
    for p in &parts[1..] {
        if p.shape() != shape {
            return Err(NumError::shape("fuse_cues", &shape, &p.shape()).into());
        }
    }
    for w in &weights {
        if w.shape()[..] != shape[1..] {
            return Err(NumError::shape("fuse_cues", &shape[1..], &w.shape()).into());
        }
    }
    let [a, b, c] = parts;
    let [wa, wb, wc] = weights;
    Ok(a.mul(wa)?.add(b.mul(wb)?)?.add(c.mul(wc)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CueConfig {
    pub prompt_len: usize,
    pub dim: usize,
}

impl Default for CueConfig {
    fn default() -> Self {
        CueConfig { prompt_len: 16, dim: 64 }
    }
}

/// One compressor and one fusion weight per caption kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CuePrompt {
    pub config: CueConfig,
    /// Frozen `[V, D]` embedding shared with the prototype bank.
    pub vocab: ParamId,
    pub compressors: [AttentiveCompressor; 3],
    pub weights: [ParamId; 3],
}

impl CuePrompt {
    /// Fusion weights start at 1/3 (a plain average).
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: CueConfig,
        vocab: ParamId,
        rng: &mut R,
    ) -> Result<Self> {
        let e = store.value(vocab).shape().to_vec();
        if e.len() != 2 || e[1] != config.dim {
            return Err(NumError::shape("cue_vocab", &e, &[0, config.dim]).into());
        }
        let (l, d) = (config.prompt_len, config.dim);
        let mut comp = |kind: CueKind| AttentiveCompressor::register(store, &format!("{prefix}.{kind}"), l, d, rng);
        let compressors = [comp(CueKind::Task)?, comp(CueKind::Vision)?, comp(CueKind::Stats)?];
        let third = T::one() / T::lit(3.0);
        let mut weight = |kind: CueKind| store.add(format!("{prefix}.w_{kind}"), Tensor::full(&[l, d], third), true);
        let weights = [weight(CueKind::Task)?, weight(CueKind::Vision)?, weight(CueKind::Stats)?];
        Ok(CuePrompt {
            config,
            vocab,
            compressors,
            weights,
        })
    }

    /// `[1, n, D]` rows of the frozen vocabulary.
    pub fn embed<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, seq: &TokenSeq) -> Result<Var<'t, T>> {
        let rows = tape.param(store, self.vocab).gather_rows(&seq.ids)?;
        Ok(rows.reshape(&[1, seq.ids.len(), self.config.dim])?)
    }

    /// `T_cue`, shape `[B, L, D]` with one entry of `cues` per batch element.
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, cues: &[CueTokens]) -> Result<Var<'t, T>> {
        if cues.is_empty() {
            return Err(Error::contract("cue", "empty batch"));
        }
        let mut parts = Vec::with_capacity(3);
        for (i, kind) in CueKind::ALL.into_iter().enumerate() {
            // Captions differ in length, so each sample is compressed on its own.
            let per_sample = cues
                .iter()
                .map(|c| self.compressors[i].compress(tape, store, self.embed(tape, store, c.get(kind))?))
                .collect::<Result<Vec<_>>>()?;
            parts.push(Var::concat(&per_sample, 0)?);
        }
        let w = self.weights.map(|id| tape.param(store, id));
        fuse_cues([parts[0], parts[1], parts[2]], w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check, GradCheckOptions};
    use crate::oracle::{assert_close, mm, to_mat, transpose};
    use crate::rng::rng_for;
    use crate::tpg::register_vocab;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn stats_of_short_ramp() {
        let s = signal_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.trend, s.direction), (1.0, 3.0, 2.0, 2.0, 1));
        assert_eq!(s.top_lags, vec![1]);
        let d = signal_stats(&[5.0, 4.0, 2.5, 0.0, -1.0]).unwrap();
        assert_eq!(d.direction, -1);
        assert_eq!(signal_stats(&[1.0, 3.0, 2.0, 4.0]).unwrap().median, 2.5);
        assert!(matches!(signal_stats(&[1.0, 2.0]), Err(Error::Contract { .. })));
    }

    #[test]
    fn periodic_lag_is_found() {
        let x: Vec<f64> = (0..512).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 25.0).sin()).collect();
        let lags = signal_stats(&x).unwrap().top_lags;
        assert_eq!(lags.len(), 5);
        assert!(lags.iter().any(|l| l % 25 == 0), "{lags:?}");
    }

    #[test]
    fn constant_sequence_has_flat_summary() {
        let s = signal_stats(&[2.0; 20]).unwrap();
        assert_eq!((s.trend, s.direction), (0.0, 0));
        assert_eq!(s.top_lags, vec![1, 2, 3, 4, 5]);
    }

    fn brute_autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let mut num = 0.0;
        for i in 0..x.len() - lag {
            num += (x[i] - m) * (x[i + lag] - m);
        }
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        num / den
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = rng_for(42, "stats");
        for _ in 0..1000 {
            let n = rng.random_range(3..80);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = signal_stats(&x).unwrap();
            let mut sorted = x.clone();
            sorted.sort_by(f64::total_cmp);
            let med = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            assert_eq!((s.min, s.max, s.median), (sorted[0], sorted[n - 1], med));
            let mut trend = 0.0;
            for i in 1..n {
                trend += x[i] - x[i - 1];
            }
            assert_eq!(s.trend, trend);
            assert!((s.trend - (x[n - 1] - x[0])).abs() < 1e-12);
            assert_eq!(s.direction as f64, trend.signum() * (trend != 0.0) as i32 as f64);

            let mut oracle: Vec<(usize, f64)> = (1..=n / 2).map(|l| (l, brute_autocorr(&x, l).abs())).collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            assert_eq!(s.top_lags.len(), oracle.len().min(5));
            let mut distinct = s.top_lags.clone();
            distinct.dedup();
            assert_eq!(distinct.len(), s.top_lags.len());
            for (lag, (_, want)) in s.top_lags.iter().zip(&oracle) {
                assert!((brute_autocorr(&x, *lag).abs() - want).abs() < 1e-9);
            }
        }
    }

    fn summary() -> StatSummary<f64> {
        StatSummary {
            min: 0.123456,
            max: 1.5,
            median: -0.25,
            trend: 0.0004,
            direction: 1,
            top_lags: vec![25, 50, 1, 24, 26],
        }
    }

    #[test]
    fn captions_are_deterministic_templates() {
        let none = CaptionInputs::default();
        let a = render_caption(CueKind::Task, &none).unwrap();
        assert_eq!(a, render_caption(CueKind::Task, &none).unwrap());
        assert_eq!(a.text, TASK_CAPTION);

        let s = summary();
        let inputs = CaptionInputs {
            stats: Some(&s),
            scene: None,
        };
        let c = render_caption(CueKind::Stats, &inputs).unwrap();
        assert_eq!(c, render_caption(CueKind::Stats, &inputs).unwrap());
        assert!(c.text.contains("min 0.123,"), "{}", c.text);
        assert!(c.text.contains("median -0.250"));
        assert!(c.text.contains("top lags 25 50 1 24 26"));

        let scene = SceneMeta {
            lighting: 0.2,
            motion: true,
            skin_tone: 5,
        };
        let v = render_caption(
            CueKind::Vision,
            &CaptionInputs {
                stats: None,
                scene: Some(&scene),
            },
        )
        .unwrap();
        assert!(v.text.contains("dim illumination") && v.text.contains("moving") && v.text.contains("type 5"));
    }

    #[test]
    fn missing_caption_inputs_are_contract_errors() {
        let none = CaptionInputs::default();
        assert!(matches!(render_caption(CueKind::Stats, &none), Err(Error::Contract { .. })));
        assert!(matches!(render_caption(CueKind::Vision, &none), Err(Error::Contract { .. })));
        let bad = SceneMeta {
            lighting: 0.5,
            motion: false,
            skin_tone: 9,
        };
        let inputs = CaptionInputs {
            stats: None,
            scene: Some(&bad),
        };
        assert!(render_caption(CueKind::Vision, &inputs).is_err());
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("HR task", 1024).unwrap(), tokenize("HR task", 1024).unwrap());
        assert_eq!(tokenize("HR task", 1024).unwrap(), tokenize("hr   TASK", 1024).unwrap());
        assert_eq!(tokenize("a b, c", 1024).unwrap().ids.len(), 3);
        let a = fnv1a64(b"a") % 1024;
        assert_eq!(tokenize("a", 1024).unwrap().ids, vec![a as usize]);
        assert!(matches!(tokenize("", 16), Err(Error::Contract { .. })));
        assert!(matches!(tokenize(" ,;", 16), Err(Error::Contract { .. })));
    }

    proptest! {
        #[test]
        fn token_ids_stay_in_range(text in "[a-zA-Z0-9 ,.;:!?-]{1,40}x", vocab in 1usize..2048) {
            let seq = tokenize(&text, vocab).unwrap();
            prop_assert!(seq.ids.iter().all(|&i| i < vocab));
        }
    }

    fn compressor(seed: u64, len: usize, dim: usize) -> (ParamStore<f64>, AttentiveCompressor) {
        let mut store = ParamStore::new();
        let c = AttentiveCompressor::register(&mut store, "c", len, dim, &mut rng_for(seed, "c")).unwrap();
        (store, c)
    }

    #[test]
    fn single_caption_token_gives_its_value_projection() {
        let (store, comp) = compressor(1, 4, 6);
        let x = normal_tensor::<f64, _>(&mut rng_for(2, "x"), &[2, 1, 6], 1.0);
        let tape = Tape::inference();
        let out = comp.compress(&tape, &store, tape.constant(x.clone())).unwrap().value();
        let v = x.matmul(store.value(comp.wv)).unwrap();
        for b in 0..2 {
            for i in 0..4 {
                for c in 0..6 {
                    assert!((out.at(&[b, i, c]) - v.at(&[b, 0, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compressor_output_length_is_fixed() {
        let (store, comp) = compressor(3, 5, 4);
        for n in [1, 7, 300] {
            let tape = Tape::inference();
            let x = tape.constant(normal_tensor(&mut rng_for(n as u64, "x"), &[1, n, 4], 1.0));
            assert_eq!(comp.compress(&tape, &store, x).unwrap().shape(), vec![1, 5, 4]);
        }
        let tape = Tape::inference();
        let res = comp.compress(&tape, &store, tape.constant(Tensor::zeros(&[1, 3, 5])));
        assert!(matches!(res, Err(Error::Num(NumError::Shape { .. }))));
    }

    #[test]
    fn compressor_matches_oracle() {
        let (store, comp) = compressor(4, 3, 4);
        let x = normal_tensor::<f64, _>(&mut rng_for(5, "x"), &[1, 6, 4], 1.0);
        let tape = Tape::inference();
        let out = comp.compress(&tape, &store, tape.constant(x.clone())).unwrap().value();
        let p = |id| to_mat(store.value(id));
        let q = mm(&p(comp.queries), &p(comp.wq));
        let (k, v) = (mm(&to_mat(&x), &p(comp.wk)), mm(&to_mat(&x), &p(comp.wv)));
        let scores = mm(&q, &transpose(&k));
        let v = &v;
        let expected: Vec<f64> = scores
            .iter()
            .flat_map(|row| {
                let e: Vec<f64> = row.iter().map(|s| (s / 2.0).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..4).map(move |c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum::<f64>()).collect::<Vec<_>>()
            })
            .collect();
        assert_close(out.data(), &expected, 1e-12);
    }

    fn fusion_inputs(seed: u64) -> [Tensor<f64>; 3] {
        let mut rng = rng_for(seed, "e");
        [0, 1, 2].map(|_| normal_tensor(&mut rng, &[2, 3, 4], 1.0))
    }

    #[test]
    fn fusion_examples() {
        let e = fusion_inputs(1);
        let tape = Tape::inference();
        let parts = e.clone().map(|t| tape.constant(t));
        let third = tape.constant(Tensor::full(&[3, 4], 1.0 / 3.0));
        let out = fuse_cues(parts, [third; 3]).unwrap().value();
        let mean: Vec<f64> = (0..24).map(|i| (e[0].data()[i] + e[1].data()[i] + e[2].data()[i]) / 3.0).collect();
        assert_close(out.data(), &mean, 1e-12);

        let w = normal_tensor::<f64, _>(&mut rng_for(2, "w"), &[3, 4], 1.0);
        let zero = tape.constant(Tensor::zeros(&[3, 4]));
        let out = fuse_cues(parts, [tape.constant(w.clone()), zero, zero]).unwrap().value();
        let masked: Vec<f64> = (0..24).map(|i| w.data()[i % 12] * e[0].data()[i]).collect();
        assert_eq!(out.data(), &masked[..]);

        let ws: Vec<Tensor<f64>> = (0..3).map(|k| normal_tensor(&mut rng_for(k, "w"), &[3, 4], 1.0)).collect();
        let out = fuse_cues(parts, [0, 1, 2].map(|k| tape.constant(ws[k].clone()))).unwrap().value();
        let expected: Vec<f64> = (0..24)
            .map(|i| (0..3).map(|k| ws[k].data()[i % 12] * e[k].data()[i]).sum())
            .collect();
        assert_close(out.data(), &expected, 1e-12);

        let bad = tape.constant(Tensor::zeros(&[2, 3, 5]));
        assert!(fuse_cues([parts[0], parts[1], bad], [third; 3]).is_err());
    }

    fn prompt(seed: u64) -> (ParamStore<f64>, CuePrompt) {
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, "cue");
        let e = register_vocab(&mut store, "vocab", 64, 8, &mut rng).unwrap();
        let cfg = CueConfig { prompt_len: 4, dim: 8 };
        let p = CuePrompt::register(&mut store, "cue", cfg, e, &mut rng).unwrap();
        (store, p)
    }

    fn clip_tokens(seed: u64) -> CueTokens {
        let mut rng = rng_for(seed, "clip");
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scene = SceneMeta {
            lighting: rng.random_range(0.0..1.0),
            motion: rng.random(),
            skin_tone: rng.random_range(1..=6),
        };
        clip_cues(&x, &scene, 64).unwrap()
    }

    #[test]
    fn prompt_shape_is_fixed_and_vocab_frozen() {
        let (mut store, p) = prompt(1);
        let cues = [clip_tokens(1), clip_tokens(2), clip_tokens(3)];
        let tape = Tape::new();
        let out = p.forward(&tape, &store, &cues).unwrap();
        assert_eq!(out.shape(), vec![3, 4, 8]);
        let loss = out.mul(out).unwrap().sum();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(p.vocab).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn compressors_and_fusion_pass_gradient_check() {
        let (mut store, p) = prompt(2);
        let cues = [clip_tokens(4), clip_tokens(5)];
        let probe = normal_tensor::<f64, _>(&mut rng_for(6, "probe"), &[2, 4, 8], 1.0);
        let report = grad_check(
            |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
                Ok(p.forward(tape, s, &cues)?.mul(tape.constant(probe.clone()))?.sum())
            },
            &mut store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
    }
}
