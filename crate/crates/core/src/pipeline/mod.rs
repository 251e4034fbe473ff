//! End-to-end toy model.
//!
//! ```text
//! x_enc ─ DDS ─ patches ─ embed ─┐
//!                                TPG ─ T_signal ─┐
//! pyramid ─ aggregator ──────────TPG ─ T_vision ─┤
//! captions ─ compress ─ fuse ─────────── T_cue ──┴─ [T_cue; T_vision; T_signal] + pos ─ LM ─ head ─ ŷ
//! ```
//!
//! Both TPG calls go through one shared instance. The stand-in LM is a stack
//! of pre-norm transformer layers.

use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::aggregator::{Aggregator, AggregatorConfig, FeaturePyramid, TimeAxis};
use crate::attention::{mix_tokens, Attention, Ffn};
use crate::cue::{clip_cues, CueConfig, CuePrompt, CueTokens};
use crate::dds::{Dds, DdsConfig};
use crate::numcore::{Adam, AdamConfig, NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{normal_tensor, rng_for};
use crate::signal::{estimate_hr, metrics, MetricsReport, SyntheticClip, PYRAMID_LEVELS};
use crate::tpg::{register_vocab, Tpg, TpgConfig};
use crate::{Error, Result, Scalar};

const LN_EPS: f64 = 1e-5;

/// How the LM output becomes `T` waveform samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadKind {
    /// Linear map from the flattened signal-token block (`V′·D`).
    #[default]
    FlattenSignal,
    /// Linear map from the token-mean `D`-vector.
    MeanPool,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flatten-signal" => Ok(HeadKind::FlattenSignal),
            "mean-pool" => Ok(HeadKind::MeanPool),
            other => Err(Error::contract("pipeline", format!("unknown head kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub protos: usize,
    pub prompt_len: usize,
    pub l_target: usize,
    /// Clip length `T`, also the output length.
    pub time_len: usize,
    pub patch: usize,
    pub stride: usize,
    pub layers: usize,
    pub dds: DdsConfig,
    pub level_shapes: Vec<(usize, usize)>,
    pub time_axis: TimeAxis,
    pub head: HeadKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dim: 64,
            heads: 4,
            vocab: 1024,
            protos: 64,
            prompt_len: 16,
            l_target: 32,
            time_len: 128,
            patch: 16,
            stride: 8,
            layers: 2,
            dds: DdsConfig::default(),
            level_shapes: PYRAMID_LEVELS.iter().map(|&(h, w, _)| (h, w)).collect(),
            time_axis: TimeAxis::Compress,
            head: HeadKind::FlattenSignal,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.dds.validate()?;
        if self.stride == 0 || self.stride > self.patch || self.patch > self.time_len {
            return Err(Error::contract(
                "pipeline",
                format!(
                    "need 1 <= stride <= patch <= T, got stride {} patch {} T {}",
                    self.stride, self.patch, self.time_len
                ),
            ));
        }
        if self.layers == 0 {
            return Err(Error::contract("pipeline", "need at least one LM layer"));
        }
        Ok(())
    }

    /// `floor((T - P) / S) + 1`.
    pub fn signal_patches(&self) -> usize {
        (self.time_len - self.patch) / self.stride + 1
    }

    /// LM input length `L + 2V′`.
    pub fn token_count(&self) -> usize {
        self.prompt_len + 2 * self.protos
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmLayer {
    pub attn: Attention,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub dds: Dds,
    pub aggregator: Aggregator,
    pub tpg: Tpg,
    pub cue: CuePrompt,
    /// `[P, D]` and `[D]`.
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    /// `[L + 2V′, D]`.
    pub pos: ParamId,
    pub layers: Vec<LmLayer>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Model inputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x_enc: Vec<T>,
    pub pyramid: FeaturePyramid<T>,
    pub cues: CueTokens,
}

impl<T: Scalar> Sample<T> {
    pub fn from_clip(clip: &SyntheticClip, vocab: usize) -> Result<Self> {
        let levels = clip.pyramid.levels.iter().map(|l| l.map_into(T::lit)).collect();
        Ok(Sample {
            x_enc: clip.x_enc.iter().map(|&v| T::lit(v)).collect(),
            pyramid: FeaturePyramid::new(levels)?,
            cues: clip_cues(&clip.x_enc, &clip.scene, vocab)?,
        })
    }
}

impl Pipeline {
    /// Registers every sub-module in `store`. Parameter initialization is a
    /// pure function of `seed`.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.dim;
        let dds = Dds::register(store, "dds", c.dds)?;
        let agg_cfg = AggregatorConfig {
            dim: d,
            heads: c.heads,
            time_len: c.time_len,
            l_target: c.l_target,
            level_shapes: c.level_shapes.clone(),
            time_axis: c.time_axis,
        };
        let aggregator = Aggregator::register(store, "va", agg_cfg, &mut rng_for(seed, "va"))?;
        let vocab = register_vocab(store, "vocab", c.vocab, d, &mut rng_for(seed, "vocab"))?;
        let tpg_cfg = TpgConfig {
            vocab: c.vocab,
            dim: d,
            protos: c.protos,
            heads: c.heads,
        };
        let tpg = Tpg::register(store, "tpg", tpg_cfg, vocab, &mut rng_for(seed, "tpg"))?;
        let cue_cfg = CueConfig {
            prompt_len: c.prompt_len,
            dim: d,
        };
        let cue = CuePrompt::register(store, "cue", cue_cfg, vocab, &mut rng_for(seed, "cue"))?;

        let mut rng = rng_for(seed, "lm");
        let patch_w = store.add(
            "embed.patch_w",
            normal_tensor(&mut rng, &[c.patch, d], 1.0 / (c.patch as f64).sqrt()),
            true,
        )?;
        let patch_b = store.add("embed.patch_b", Tensor::zeros(&[d]), true)?;
        let pos = store.add("lm.pos", normal_tensor(&mut rng, &[c.token_count(), d], 0.02), true)?;
        let layers = (0..c.layers)
            .map(|i| {
                Ok(LmLayer {
                    attn: Attention::register(store, &format!("lm.layer{i}.attn"), d, c.heads, &mut rng)?,
                    ffn: Ffn::register(store, &format!("lm.layer{i}.ffn"), d, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (fan_in, std) = match c.head {
            HeadKind::FlattenSignal => (c.protos * d, 1e-3),
            HeadKind::MeanPool => (d, 1.0 / (d as f64).sqrt()),
        };
        let head_w = store.add("head.w", normal_tensor(&mut rng, &[fan_in, c.time_len], std), true)?;
        let head_b = store.add("head.b", Tensor::zeros(&[c.time_len]), true)?;
        Ok(Pipeline {
            config,
            dds,
            aggregator,
            tpg,
            cue,
            patch_w,
            patch_b,
            pos,
            layers,
            head_w,
            head_b,
        })
    }

    /// `[B, T] -> [B, patches, D]`.
    pub fn tokenize_signal<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        Ok(z.frames(c.patch, c.stride)?
            .matmul(tape.param(store, self.patch_w))?
            .add(tape.param(store, self.patch_b))?)
    }

    /// LM input tokens `[B, L + 2V′, D]`, positional encoding included.
    pub fn tokens<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, batch: &[&Sample<T>]) -> Result<Var<'t, T>> {
        let c = &self.config;
        if batch.is_empty() {
            return Err(Error::contract("pipeline", "empty batch"));
        }
        let mut zs = Vec::with_capacity(batch.len());
        for s in batch {
            if s.x_enc.len() != c.time_len {
                return Err(Error::contract(
                    "pipeline",
                    format!("x_enc has {} samples, model expects {}", s.x_enc.len(), c.time_len),
                ));
            }
            let (z, _) = self.dds.forward(tape, store, &s.x_enc)?;
            zs.push(z.reshape(&[1, c.time_len])?);
        }
        let z = Var::concat(&zs, 0)?;
        let t_signal = self.tpg.reprogram(tape, store, self.tokenize_signal(tape, store, z)?)?;

        let pyramid = FeaturePyramid::stack(&batch.iter().map(|s| &s.pyramid).collect::<Vec<_>>())?;
        let visual = self.aggregator.aggregate(tape, store, &pyramid)?;
        let t_vision = self.tpg.reprogram(tape, store, visual)?;

        let cues: Vec<CueTokens> = batch.iter().map(|s| s.cues.clone()).collect();
        let t_cue = self.cue.forward(tape, store, &cues)?;

        let tokens = Var::concat(&[t_cue, t_vision, t_signal], 1)?;
        debug_assert_eq!(tokens.shape()[1], c.token_count());
        Ok(tokens.add(tape.param(store, self.pos))?)
    }

    /// `ŷ`, shape `[B, T]`.
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, batch: &[&Sample<T>]) -> Result<Var<'t, T>> {
        let c = &self.config;
        let b = batch.len();
        let mut h = self.tokens(tape, store, batch)?;
        let eps = T::lit(LN_EPS);
        for layer in &self.layers {
            let normed = h.layer_norm(eps);
            h = h.add(layer.attn.self_attn(tape, store, normed)?)?;
            h = h.add(layer.ffn.forward(tape, store, h.layer_norm(eps))?)?;
        }
        let features = match c.head {
            HeadKind::FlattenSignal => {
                let start = c.prompt_len + c.protos;
                let select = Tensor::from_fn(&[c.token_count(), c.protos], |i| {
                    let (row, col) = (i / c.protos, i % c.protos);
                    if row == start + col {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                mix_tokens(h, tape.constant(select))?.reshape(&[b, c.protos * c.dim])?
            }
            HeadKind::MeanPool => h.mean_axis(1)?,
        };
        Ok(features
            .matmul(tape.param(store, self.head_w))?
            .add(tape.param(store, self.head_b))?)
    }

    /// Predictions without recording gradients, in chunks of `batch_size`.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, samples: &[Sample<T>], batch_size: usize) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let tape = Tape::inference();
            let refs: Vec<&Sample<T>> = chunk.iter().collect();
            let y = self.forward(&tape, store, &refs)?.value();
            out.extend(y.data().chunks(self.config.time_len).map(<[T]>::to_vec));
        }
        Ok(out)
    }
}

/// Mean squared error over all elements; shapes must agree.
pub fn mse_loss<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(NumError::shape("mse_loss", &pred.shape(), &target.shape()).into());
    }
    let diff = pred.sub(target)?;
    Ok(diff.mul(diff)?.mean())
}

pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NumError::shape("mse", &[pred.len()], &[target.len()]).into());
    }
    let sum: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::from_usize_lossy(pred.len()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps averaged for the initial and final running loss.
    pub window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 5e-5,
            batch: 4,
            steps: 200,
            seed: 0,
            window: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || self.batch == 0 || self.steps == 0 || self.window == 0 {
            return Err(Error::contract("pipeline", format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    fn window_mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    pub fn initial_running(&self, window: usize) -> f64 {
        Self::window_mean(&self.losses[..window.min(self.losses.len())])
    }

    pub fn final_running(&self, window: usize) -> f64 {
        Self::window_mean(&self.losses[self.losses.len().saturating_sub(window)..])
    }
}

/// A clip's inputs and its target waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub sample: Sample<T>,
    pub target: Vec<T>,
}

impl<T: Scalar> Example<T> {
    pub fn from_clip(clip: &SyntheticClip, vocab: usize) -> Result<Self> {
        Ok(Example {
            sample: Sample::from_clip(clip, vocab)?,
            target: clip.bvp.iter().map(|&v| T::lit(v)).collect(),
        })
    }
}

/// Mini-batch Adam on the MSE loss. Batches walk a shuffled order that is
/// reshuffled whenever fewer than `batch` clips remain.
pub fn train<T: Scalar>(
    pipeline: &Pipeline,
    store: &mut ParamStore<T>,
    data: &[Example<T>],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::contract("pipeline", "training set is empty"));
    }
    let batch = cfg.batch.min(data.len());
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = rng_for(cfg.seed, "batches");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        if cursor + batch > data.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let tape = Tape::new();
        let samples: Vec<&Sample<T>> = idx.iter().map(|&i| &data[i].sample).collect();
        let pred = pipeline.forward(&tape, store, &samples)?;
        let target: Vec<T> = idx.iter().flat_map(|&i| data[i].target.iter().copied()).collect();
        let target = tape.constant(Tensor::new(vec![batch, pipeline.config.time_len], target)?);
        let loss = mse_loss(pred, target)?;
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: "training loss" }.into());
        }
        tape.backward(loss, store)?;
        adam.step(store, step as u64)?;
        losses.push(value);
        on_step(step, value);
    }
    Ok(TrainLog { losses })
}

/// Heart rate of each predicted waveform against reference rates.
pub fn hr_metrics<T: Scalar>(preds: &[Vec<T>], reference_bpm: &[f64], fs: f64) -> Result<(Vec<f64>, MetricsReport)> {
    let est = preds
        .iter()
        .map(|p| {
            let w: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
            Ok(estimate_hr(&w, fs)?.bpm)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = metrics(&est, reference_bpm)?;
    Ok((est, report))
}
