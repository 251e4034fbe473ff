//! Vision aggregation over a multi-level feature pyramid.
//!
//! Each level `[B, T, H, W]` is projected to `[B, l_target, D]`. The deepest
//! level queries the concatenated shallow levels, the result is refined by
//! self-attention, and both are gated back onto the deep tokens:
//! `F_M + γ2 ⊙ (F_cross + γ1 ⊙ F_self)`.

use std::str::FromStr;

use rand::Rng;

use crate::attention::Attention;
use crate::numcore::{NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::normal_tensor;
use crate::{Error, Result, Scalar};

/// `M` levels, each `[B, T, H_i, W_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn new(levels: Vec<Tensor<T>>) -> Result<Self> {
        let pyr = FeaturePyramid { levels };
        pyr.validate()?;
        Ok(pyr)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.levels.first() else {
            return Err(Error::contract("aggregator", "feature pyramid has no levels"));
        };
        for level in &self.levels {
            let s = level.shape();
            if s.len() != 4 || s[..2] != first.shape()[..2] || first.rank() != 4 {
                return Err(NumError::shape("feature_pyramid", first.shape(), s).into());
            }
        }
        Ok(())
    }

    pub fn batch(&self) -> usize {
        self.levels[0].shape()[0]
    }

    pub fn time_len(&self) -> usize {
        self.levels[0].shape()[1]
    }

    /// Stacks single-clip pyramids along the batch axis.
    pub fn stack(items: &[&FeaturePyramid<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::contract("aggregator", "cannot stack zero pyramids"))?;
        let mut levels = Vec::with_capacity(first.levels.len());
        for (i, lead) in first.levels.iter().enumerate() {
            let mut shape = lead.shape().to_vec();
            let mut data = Vec::with_capacity(lead.len() * items.len());
            for p in items {
                let l = p.levels.get(i).ok_or_else(|| Error::contract("aggregator", "level count differs"))?;
                if l.shape()[1..] != shape[1..] {
                    return Err(NumError::shape("stack_pyramid", &shape, l.shape()).into());
                }
                data.extend_from_slice(l.data());
            }
            shape[0] = items.iter().map(|p| p.levels[i].shape()[0]).sum();
            levels.push(Tensor::new(shape, data)?);
        }
        FeaturePyramid::new(levels)
    }
}

/// Whether level projection maps time `T -> l_target` or keeps `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeAxis {
    #[default]
    Compress,
    Preserve,
}

impl FromStr for TimeAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compress" => Ok(TimeAxis::Compress),
            "preserve" => Ok(TimeAxis::Preserve),
            other => Err(Error::contract("aggregator", format!("unknown time axis mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorConfig {
    pub dim: usize,
    pub heads: usize,
    /// Input frames per clip.
    pub time_len: usize,
    pub l_target: usize,
    /// `(H_i, W_i)` per level, shallow to deep.
    pub level_shapes: Vec<(usize, usize)>,
    pub time_axis: TimeAxis,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            dim: 64,
            heads: 4,
            time_len: 128,
            l_target: 32,
            level_shapes: vec![(8, 8), (4, 4), (2, 2)],
            time_axis: TimeAxis::Compress,
        }
    }
}

impl AggregatorConfig {
    /// Token count of every projected level.
    pub fn tokens(&self) -> usize {
        match self.time_axis {
            TimeAxis::Compress => self.l_target,
            TimeAxis::Preserve => self.time_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregator {
    pub config: AggregatorConfig,
    /// `[H_i·W_i, D]` per level.
    pub spatial: Vec<ParamId>,
    /// `[T, l_target]` per level; empty when time is preserved.
    pub temporal: Vec<ParamId>,
    pub cross: Attention,
    pub refine: Attention,
    pub gamma1: ParamId,
    pub gamma2: ParamId,
}

impl Aggregator {
    /// Gates start at zero, so the fresh module returns the projected deep level.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: AggregatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.level_shapes.len() < 2 {
            return Err(Error::contract(
                "aggregator",
                format!("need at least 2 pyramid levels, got {}", config.level_shapes.len()),
            ));
        }
        if config.l_target == 0 || config.time_len == 0 {
            return Err(Error::contract("aggregator", "time lengths must be >= 1"));
        }
        let d = config.dim;
        let mut spatial = Vec::new();
        let mut temporal = Vec::new();
        for (i, &(h, w)) in config.level_shapes.iter().enumerate() {
            let hw = h * w;
            let init = normal_tensor(rng, &[hw, d], 1.0 / (hw as f64).sqrt());
            spatial.push(store.add(format!("{prefix}.level{i}.spatial"), init, true)?);
            if config.time_axis == TimeAxis::Compress {
                let init = normal_tensor(rng, &[config.time_len, config.l_target], 1.0 / (config.time_len as f64).sqrt());
                temporal.push(store.add(format!("{prefix}.level{i}.temporal"), init, true)?);
            }
        }
        let cross = Attention::register(store, &format!("{prefix}.cross"), d, config.heads, rng)?;
        let refine = Attention::register(store, &format!("{prefix}.self"), d, config.heads, rng)?;
        let gamma1 = store.add(format!("{prefix}.gamma1"), Tensor::zeros(&[d]), true)?;
        let gamma2 = store.add(format!("{prefix}.gamma2"), Tensor::zeros(&[d]), true)?;
        Ok(Aggregator {
            config,
            spatial,
            temporal,
            cross,
            refine,
            gamma1,
            gamma2,
        })
    }

    /// Level `i` `[B, T, H, W]` to `[B, tokens, D]`.
    pub fn project_level<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        index: usize,
        level: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let &(h, w) = self
            .config
            .level_shapes
            .get(index)
            .ok_or_else(|| Error::contract("aggregator", format!("no registered level {index}")))?;
        let s = level.shape();
        let expected = [s.first().copied().unwrap_or(0), self.config.time_len, h, w];
        if s.len() != 4 || s[1..] != expected[1..] {
            return Err(NumError::shape("project_level", &s, &expected).into());
        }
        let tokens = level
            .reshape(&[s[0], s[1], h * w])?
            .matmul(tape.param(store, self.spatial[index]))?;
        match self.config.time_axis {
            TimeAxis::Preserve => Ok(tokens),
            TimeAxis::Compress => Ok(tokens
                .transpose()?
                .matmul(tape.param(store, self.temporal[index]))?
                .transpose()?),
        }
    }

    pub fn aggregate<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        pyramid: &FeaturePyramid<T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.aggregate_traced(tape, store, pyramid)?.visual)
    }

    /// Also exposes the intermediate token sets.
    pub fn aggregate_traced<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        pyramid: &FeaturePyramid<T>,
    ) -> Result<AggregateTrace<'t, T>> {
        let m = pyramid.levels.len();
        if m < 2 {
            return Err(Error::contract(
                "aggregator",
                format!("need at least 2 pyramid levels to attend over, got {m}"),
            ));
        }
        if m != self.config.level_shapes.len() {
            return Err(Error::contract(
                "aggregator",
                format!("pyramid has {m} levels, module registered {}", self.config.level_shapes.len()),
            ));
        }
        pyramid.validate()?;
        let projected = pyramid
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| self.project_level(tape, store, i, tape.constant(l.clone())))
            .collect::<Result<Vec<_>>>()?;
        let deep = projected[m - 1];
        let shallow = Var::concat(&projected[..m - 1], 1)?;
        let cross = self.cross.cross(tape, store, deep, shallow)?;
        let refined = self.refine.self_attn(tape, store, cross)?;
        let g1 = tape.param(store, self.gamma1);
        let g2 = tape.param(store, self.gamma2);
        let visual = deep.add(g2.mul(cross.add(g1.mul(refined)?)?)?)?;
        Ok(AggregateTrace {
            projected,
            cross,
            refined,
            visual,
        })
    }
}

pub struct AggregateTrace<'t, T: Scalar> {
    pub projected: Vec<Var<'t, T>>,
    pub cross: Var<'t, T>,
    pub refined: Var<'t, T>,
    pub visual: Var<'t, T>,
}
