//! Trains the default pipeline on 64 noisy clips and reports heart-rate error
//! on 16 clean held-out clips.

use std::time::Instant;

use physkit::pipeline::{hr_metrics, train, Example, Pipeline, PipelineConfig, Sample, TrainConfig};
use physkit::signal::{synth_dataset, DatasetSpec};
use physkit::ParamStore64;

fn main() -> physkit::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = PipelineConfig::default();
    let mut store = ParamStore64::new();
    let model = Pipeline::register(&mut store, cfg.clone(), seed)?;
    println!("trainable parameters: {}", store.num_trainable_elements());

    let train_clips = synth_dataset(&DatasetSpec {
        seed,
        ..DatasetSpec::default()
    })?;
    let test_clips = synth_dataset(&DatasetSpec {
        count: 16,
        snr_db: f64::INFINITY,
        seed: seed + 1,
        ..DatasetSpec::default()
    })?;
    let data = train_clips
        .iter()
        .map(|c| Example::from_clip(c, cfg.vocab))
        .collect::<physkit::Result<Vec<_>>>()?;

    let start = Instant::now();
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let log = train(&model, &mut store, &data, &tc, |step, loss| {
        if step % 20 == 0 {
            println!("step {step:>4}  loss {loss:.5}  {:.1}s", start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "running loss {:.4} -> {:.4}",
        log.initial_running(tc.window),
        log.final_running(tc.window)
    );

    let samples = test_clips
        .iter()
        .map(|c| Sample::from_clip(c, cfg.vocab))
        .collect::<physkit::Result<Vec<_>>>()?;
    let preds = model.predict(&store, &samples, 4)?;
    let truth: Vec<f64> = test_clips.iter().map(|c| c.spec.hr_bpm).collect();
    let (est, report) = hr_metrics(&preds, &truth, 30.0)?;
    for (e, t) in est.iter().zip(&truth) {
        println!("  est {e:6.1}  true {t:6.1}");
    }
    println!("{report:?}");
    Ok(())
}
