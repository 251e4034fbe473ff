use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use physkit::cue::signal_stats;
use physkit::dds::{dds_forward, stationarity_report};
use physkit::numcore::ParamStore;
use physkit::pipeline::{hr_metrics, train, Example, Pipeline, Sample};
use physkit::signal::{
    dataset_specs, estimate_hr, gen_clip, metrics, read_manifest, read_waveform, write_manifest, write_waveform,
    ManifestRecord, MetricsReport, SyntheticClip, Waveform,
};

use crate::config::{write_text, RunConfig};
use crate::gradcheck;
use crate::CliError;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn fmt_snr(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        snr.to_string()
    }
}

pub fn synth(cfg: &RunConfig, count: Option<usize>, out: &Path) -> Result<String, CliError> {
    let spec = physkit::signal::DatasetSpec {
        count: count.unwrap_or(cfg.count),
        ..cfg.dataset_spec()
    };
    let specs = dataset_specs(&spec)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut records = Vec::with_capacity(specs.len());
    for (i, (clip_spec, seed)) in specs.iter().enumerate() {
        let clip = gen_clip(clip_spec, *seed)?;
        let id = format!("clip{i:04}");
        let (bvp, x_enc) = (format!("{id}_bvp.csv"), format!("{id}_xenc.csv"));
        for (name, samples) in [(&bvp, &clip.bvp), (&x_enc, &clip.x_enc)] {
            let w = Waveform {
                fs: clip_spec.fs,
                samples: samples.clone(),
            };
            write_waveform(out.join(name), &w)?;
        }
        records.push(ManifestRecord {
            id,
            bvp,
            x_enc,
            hr_bpm: clip_spec.hr_bpm,
            fs: clip_spec.fs,
            len: clip_spec.len,
            snr_db: clip_spec.snr_db.is_finite().then_some(clip_spec.snr_db),
            seed: *seed,
            lighting: clip.scene.lighting,
            motion: clip.scene.motion,
            skin_tone: clip.scene.skin_tone,
        });
    }
    write_manifest(out.join("manifest.jsonl"), &records)?;
    let (lo, hi) = records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.hr_bpm), hi.max(r.hr_bpm)));
    Ok(format!(
        "clips: {}\nlen: {}\nfs: {}\nhr_bpm_min: {lo:.2}\nhr_bpm_max: {hi:.2}\nsnr_db: {}\nmanifest: {}\n",
        records.len(),
        spec.len,
        spec.fs,
        fmt_snr(spec.snr_db),
        out.join("manifest.jsonl").display()
    ))
}

pub fn dds(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let w = read_waveform(input).map_err(|e| CliError::in_file(input, e))?;
    let dcfg = cfg.dds_config()?;
    let trace = dds_forward(&w.samples, &dcfg, cfg.beta)?;
    let max_lag = cfg.max_lag.min(trace.z.len() / 8);
    let report = stationarity_report(&trace.z, max_lag.max(1), dcfg.alpha)?;
    if let Some(path) = out {
        let z = Waveform {
            fs: w.fs,
            samples: trace.z.clone(),
        };
        write_text(path, &physkit::signal::format_waveform(&z))?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "len: {}", report.len);
    let _ = writeln!(s, "alpha: {}", dcfg.alpha);
    let _ = writeln!(s, "beta: {}", cfg.beta);
    let _ = writeln!(s, "mean: {}", report.mean);
    let _ = writeln!(s, "variance: {}", report.variance);
    let _ = writeln!(s, "theoretical_variance: {}", report.theoretical_variance);
    for (k, r) in report.autocorr.iter().enumerate() {
        let _ = writeln!(s, "autocorr_lag{}: {r}", k + 1);
    }
    let _ = writeln!(s, "max_half_disagreement: {}", report.max_half_disagreement);
    let _ = writeln!(s, "degenerate: {}", report.degenerate);
    Ok(s)
}

pub fn stats(input: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let w = read_waveform(input).map_err(|e| CliError::in_file(input, e))?;
    let s = signal_stats(&w.samples)?;
    let record = serde_json::json!({
        "min": s.min,
        "max": s.max,
        "median": s.median,
        "trend": s.trend,
        "direction": s.direction,
        "top_lags": s.top_lags,
    });
    let text = format!("{}\n", serde_json::to_string_pretty(&record).expect("json value serializes"));
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    Ok(text)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Regenerates every clip of a manifest and checks it against the stored
/// ground-truth waveform.
fn load_clips(manifest: &Path) -> Result<Vec<(ManifestRecord, SyntheticClip)>, CliError> {
    let records = read_manifest(manifest).map_err(|e| CliError::in_file(manifest, e))?;
    if records.is_empty() {
        return Err(CliError::Config(format!("{}: manifest has no records", manifest.display())));
    }
    let dir = manifest_dir(manifest);
    records
        .into_iter()
        .map(|r| {
            let clip = gen_clip(&r.clip_spec(), r.seed)?;
            let path = dir.join(&r.bvp);
            let stored = read_waveform(&path).map_err(|e| CliError::in_file(&path, e))?;
            if stored.samples != clip.bvp {
                return Err(CliError::Config(format!(
                    "{}: waveform does not match manifest record {}",
                    path.display(),
                    r.id
                )));
            }
            Ok((r, clip))
        })
        .collect()
}

fn metrics_text(report: &MetricsReport) -> String {
    let r = report.pearson_r.map_or_else(|| "undefined".to_string(), |r| r.to_string());
    format!("mae_bpm: {}\nrmse_bpm: {}\npearson_r: {r}\n", report.mae, report.rmse)
}

pub fn train_cmd(
    cfg: &RunConfig,
    manifest: &Path,
    test: Option<&Path>,
    out: &Path,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<String, CliError> {
    let pcfg = cfg.pipeline_config()?;
    let clips = load_clips(manifest)?;
    let data = clips
        .iter()
        .map(|(_, c)| Example::<f64>::from_clip(c, pcfg.vocab))
        .collect::<physkit::Result<Vec<_>>>()?;
    let mut store = ParamStore::new();
    let model = Pipeline::register(&mut store, pcfg.clone(), cfg.seed)?;
    let tc = cfg.train_config();
    let log = train(&model, &mut store, &data, &tc, progress)?;

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in log.losses.iter().enumerate() {
        let _ = writeln!(curve, "{},{l}", i + 1);
    }
    write_text(&out.join("loss.csv"), &curve)?;
    store.save(out.join("model.params")).map_err(|e| CliError::io(&out.join("model.params"), e))?;
    write_text(&out.join("run.toml"), &cfg.to_toml())?;

    let eval_clips = match test {
        Some(path) => load_clips(path)?,
        None => clips,
    };
    let samples = eval_clips
        .iter()
        .map(|(_, c)| Sample::from_clip(c, pcfg.vocab))
        .collect::<physkit::Result<Vec<_>>>()?;
    let preds = model.predict(&store, &samples, tc.batch)?;
    let truth: Vec<f64> = eval_clips.iter().map(|(r, _)| r.hr_bpm).collect();
    let (est, report) = hr_metrics(&preds, &truth, cfg.fs)?;
    let mut hr = String::from("id,true_bpm,pred_bpm\n");
    for ((r, _), e) in eval_clips.iter().zip(&est) {
        let _ = writeln!(hr, "{},{},{e}", r.id, r.hr_bpm);
    }
    write_text(&out.join("hr.csv"), &hr)?;

    Ok(format!(
        "trainable_parameters: {}\nsteps: {}\ninitial_running_loss: {}\nfinal_running_loss: {}\n{}",
        store.num_trainable_elements(),
        log.losses.len(),
        log.initial_running(tc.window),
        log.final_running(tc.window),
        metrics_text(&report)
    ))
}

pub enum Predictions<'a> {
    Manifest(&'a Path),
    Checkpoint(&'a Path),
}

/// Heart rates from predicted waveforms against heart rates estimated from
/// the ground-truth waveforms.
pub fn eval(
    cfg: &RunConfig,
    gt: &Path,
    pred: Predictions<'_>,
    out: Option<&Path>,
    max_mae: Option<f64>,
) -> Result<(String, bool), CliError> {
    let gt_records = read_manifest(gt).map_err(|e| CliError::in_file(gt, e))?;
    if gt_records.is_empty() {
        return Err(CliError::Config(format!("{}: manifest has no records", gt.display())));
    }
    let gt_dir = manifest_dir(gt);
    let mut gt_bpm = Vec::with_capacity(gt_records.len());
    for r in &gt_records {
        let path = gt_dir.join(&r.bvp);
        let w = read_waveform(&path).map_err(|e| CliError::in_file(&path, e))?;
        gt_bpm.push(estimate_hr(&w.samples, w.fs)?.bpm);
    }
    let pred_bpm: Vec<f64> = match pred {
        Predictions::Manifest(path) => {
            let records = read_manifest(path).map_err(|e| CliError::in_file(path, e))?;
            let dir = manifest_dir(path);
            gt_records
                .iter()
                .map(|g| {
                    let r = records
                        .iter()
                        .find(|r| r.id == g.id)
                        .ok_or_else(|| CliError::Config(format!("{}: no prediction for {}", path.display(), g.id)))?;
                    let wpath = dir.join(&r.bvp);
                    let w = read_waveform(&wpath).map_err(|e| CliError::in_file(&wpath, e))?;
                    Ok(estimate_hr(&w.samples, w.fs)?.bpm)
                })
                .collect::<Result<_, CliError>>()?
        }
        Predictions::Checkpoint(path) => {
            let pcfg = cfg.pipeline_config()?;
            let mut store = ParamStore::new();
            let model = Pipeline::register(&mut store, pcfg.clone(), cfg.seed)?;
            let saved = ParamStore::<f64>::load(path).map_err(|e| CliError::in_file(path, e))?;
            store.load_values_from(&saved).map_err(|e| CliError::in_file(path, e.into()))?;
            let clips = load_clips(gt)?;
            let samples = clips
                .iter()
                .map(|(_, c)| Sample::from_clip(c, pcfg.vocab))
                .collect::<physkit::Result<Vec<_>>>()?;
            let preds = model.predict(&store, &samples, cfg.batch)?;
            let fs = clips[0].0.fs;
            preds
                .iter()
                .map(|p| Ok(estimate_hr(p, fs)?.bpm))
                .collect::<Result<_, CliError>>()?
        }
    };
    let report = metrics(&pred_bpm, &gt_bpm)?;
    let mut text = metrics_text(&report);
    if let Some(path) = out {
        let mut csv = String::from("id,gt_bpm,pred_bpm\n");
        for ((r, g), p) in gt_records.iter().zip(&gt_bpm).zip(&pred_bpm) {
            let _ = writeln!(csv, "{},{g},{p}", r.id);
        }
        write_text(path, &csv)?;
    }
    let pass = max_mae.is_none_or(|m| report.mae <= m);
    if let Some(m) = max_mae {
        let _ = writeln!(text, "max_mae_bpm: {m}\nstatus: {}", if pass { "pass" } else { "fail" });
    }
    Ok((text, pass))
}

pub fn gradcheck_cmd(cfg: &RunConfig, out: Option<&Path>) -> Result<(String, bool), CliError> {
    let checks = gradcheck::run_all(cfg.seed)?;
    let mut text = String::from("module,checked,max_rel_err,status\n");
    let mut all_pass = true;
    for c in &checks {
        let err = c.report.max_rel_err();
        let pass = err < GRADCHECK_TOLERANCE;
        all_pass &= pass;
        let _ = writeln!(
            text,
            "{},{},{err:e},{}",
            c.module,
            c.report.entries.len(),
            if pass { "pass" } else { "fail" }
        );
    }
    if let Some(path) = out {
        write_text(path, &text)?;
    }
    Ok((text, all_pass))
}

pub fn hr(inputs: &[PathBuf]) -> Result<String, CliError> {
    let mut text = String::new();
    for path in inputs {
        let w = read_waveform(path).map_err(|e| CliError::in_file(path, e))?;
        let est = estimate_hr(&w.samples, w.fs).map_err(|e| CliError::in_file(path, e))?;
        let _ = writeln!(text, "{}\t{:.2}", path.display(), est.bpm);
    }
    Ok(text)
}
