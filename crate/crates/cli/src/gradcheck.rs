//! Finite-difference audit of every trainable module at tiny dimensions.

use physkit::aggregator::{Aggregator, AggregatorConfig, FeaturePyramid};
use physkit::cue::{clip_cues, CueConfig, CuePrompt, SceneMeta};
use physkit::dds::{Dds, DdsConfig};
use physkit::numcore::{grad_check, GradCheckOptions, GradCheckReport, ParamStore, Tape, Tensor, Var};
use physkit::pipeline::{mse_loss, Pipeline, PipelineConfig, Sample};
use physkit::rng::{normal_tensor, rng_for};
use physkit::tpg::{register_vocab, Tpg, TpgConfig};
use physkit::Result;

const DIM: usize = 8;
const TIME: usize = 32;

pub struct ModuleCheck {
    pub module: &'static str,
    pub report: GradCheckReport,
}

fn options(seed: u64, per_param: Option<usize>) -> GradCheckOptions {
    GradCheckOptions {
        seed,
        per_param,
        ..GradCheckOptions::default()
    }
}

/// Random weighted sum, so every output element matters.
fn probe<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = normal_tensor(&mut rng_for(seed, "probe"), &out.shape(), 1.0);
    Ok(out.mul(tape.constant(w))?.sum())
}

fn tiny_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        dim: DIM,
        heads: 2,
        vocab: 64,
        protos: 8,
        prompt_len: 4,
        l_target: 8,
        time_len: TIME,
        patch: 8,
        stride: 4,
        layers: 2,
        level_shapes: vec![(2, 2), (1, 2)],
        ..PipelineConfig::default()
    }
}

fn tiny_sample(cfg: &PipelineConfig, seed: u64) -> Result<Sample<f64>> {
    let mut rng = rng_for(seed, "gradcheck-sample");
    let noise = normal_tensor::<f64, _>(&mut rng, &[cfg.time_len], 0.3);
    let x: Vec<f64> = (0..cfg.time_len)
        .map(|t| (t as f64 * 0.7).sin() + noise.data()[t])
        .collect();
    let levels = cfg
        .level_shapes
        .iter()
        .map(|&(h, w)| normal_tensor(&mut rng, &[1, cfg.time_len, h, w], 1.0))
        .collect();
    let scene = SceneMeta {
        lighting: 0.6,
        motion: true,
        skin_tone: 4,
    };
    Ok(Sample {
        cues: clip_cues(&x, &scene, cfg.vocab)?,
        x_enc: x,
        pyramid: FeaturePyramid::new(levels)?,
    })
}

fn check_dds(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let dds = Dds::register(&mut store, "dds", DdsConfig::default())?;
    store.get_mut(dds.beta_raw).value = Tensor::scalar(0.3);
    let x = normal_tensor::<f64, _>(&mut rng_for(seed, "dds-x"), &[TIME], 1.0).into_data();
    grad_check(
        |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
            let (z, _) = dds.forward(tape, s, &x)?;
            probe(tape, z, seed)
        },
        &mut store,
        options(seed, None),
    )
}

fn check_aggregator(seed: u64) -> Result<GradCheckReport> {
    let cfg = AggregatorConfig {
        dim: DIM,
        heads: 2,
        time_len: 12,
        l_target: 4,
        level_shapes: vec![(3, 2), (2, 2), (1, 2)],
        ..AggregatorConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = rng_for(seed, "va");
    let agg = Aggregator::register(&mut store, "aggregator", cfg.clone(), &mut rng)?;
    for id in [agg.gamma1, agg.gamma2] {
        store.get_mut(id).value = normal_tensor(&mut rng, &[DIM], 0.5);
    }
    let pyramid = FeaturePyramid::new(
        cfg.level_shapes
            .iter()
            .map(|&(h, w)| normal_tensor(&mut rng, &[2, cfg.time_len, h, w], 1.0))
            .collect(),
    )?;
    grad_check(
        |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
            probe(tape, agg.aggregate(tape, s, &pyramid)?, seed)
        },
        &mut store,
        options(seed, None),
    )
}

fn check_tpg(seed: u64) -> Result<GradCheckReport> {
    let cfg = TpgConfig {
        vocab: 32,
        dim: DIM,
        protos: 8,
        heads: 2,
    };
    let mut store = ParamStore::new();
    let mut rng = rng_for(seed, "tpg");
    let vocab = register_vocab(&mut store, "vocab", cfg.vocab, DIM, &mut rng)?;
    let tpg = Tpg::register(&mut store, "tpg", cfg, vocab, &mut rng)?;
    let x = normal_tensor::<f64, _>(&mut rng, &[2, 5, DIM], 1.0);
    grad_check(
        |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
            probe(tape, tpg.reprogram(tape, s, tape.constant(x.clone()))?, seed)
        },
        &mut store,
        options(seed, None),
    )
}

fn check_cue(seed: u64) -> Result<GradCheckReport> {
    let pcfg = tiny_pipeline_config();
    let mut store = ParamStore::new();
    let mut rng = rng_for(seed, "cue");
    let vocab = register_vocab(&mut store, "vocab", pcfg.vocab, DIM, &mut rng)?;
    let cfg = CueConfig {
        prompt_len: 4,
        dim: DIM,
    };
    let cue = CuePrompt::register(&mut store, "cue", cfg, vocab, &mut rng)?;
    let cues = [tiny_sample(&pcfg, seed)?.cues, tiny_sample(&pcfg, seed + 1)?.cues];
    grad_check(
        |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
            probe(tape, cue.forward(tape, s, &cues)?, seed)
        },
        &mut store,
        options(seed, None),
    )
}

fn check_pipeline(seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_pipeline_config();
    let mut store = ParamStore::new();
    let model = Pipeline::register(&mut store, cfg.clone(), seed)?;
    for id in [model.aggregator.gamma1, model.aggregator.gamma2] {
        store.get_mut(id).value = normal_tensor(&mut rng_for(seed, "gates"), &[DIM], 0.5);
    }
    let samples = [tiny_sample(&cfg, seed)?, tiny_sample(&cfg, seed + 1)?];
    let target = normal_tensor::<f64, _>(&mut rng_for(seed, "target"), &[2, TIME], 1.0);
    grad_check(
        |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
            let pred = model.forward(tape, s, &[&samples[0], &samples[1]])?;
            mse_loss(pred, tape.constant(target.clone()))
        },
        &mut store,
        options(seed, Some(3)),
    )
}

pub fn run_all(seed: u64) -> Result<Vec<ModuleCheck>> {
    type Check = fn(u64) -> Result<GradCheckReport>;
    let checks: [(&'static str, Check); 5] = [
        ("dds", check_dds),
        ("aggregator", check_aggregator),
        ("tpg", check_tpg),
        ("cue", check_cue),
        ("pipeline", check_pipeline),
    ];
    checks
        .into_iter()
        .map(|(module, f)| Ok(ModuleCheck { module, report: f(seed)? }))
        .collect()
}
