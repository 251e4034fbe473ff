//! Waveform CSV and JSON-lines dataset manifests.
//!
//! A waveform file is a `fs=<rate>` header followed by one decimal sample per
//! line. Samples are written in shortest round-trip form, so a read after a
//! write returns the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClipSpec;
use crate::cue::SceneMeta;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub fs: f64,
    pub samples: Vec<f64>,
}

pub fn format_waveform(w: &Waveform) -> String {
    let mut out = format!("fs={}\n", w.fs);
    for v in &w.samples {
        writeln!(out, "{v}").expect("writing to a String cannot fail");
    }
    out
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_waveform(text: &str) -> Result<Waveform> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty waveform file".into(),
    })?;
    let fs = header
        .trim()
        .strip_prefix("fs=")
        .and_then(|r| r.trim().parse::<f64>().ok())
        .filter(|fs| *fs > 0.0 && fs.is_finite())
        .ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected header fs=<rate>, got {header:?}"),
        })?;
    let samples = lines
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("invalid sample {l:?}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::Parse {
            line: i + 1,
            msg: "waveform has no samples".into(),
        });
    }
    Ok(Waveform { fs, samples })
}

pub fn write_waveform(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    Ok(fs::write(path, format_waveform(w))?)
}

pub fn read_waveform(path: impl AsRef<Path>) -> Result<Waveform> {
    parse_waveform(&fs::read_to_string(path)?)
}

/// One clip. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub bvp: String,
    pub x_enc: String,
    pub hr_bpm: f64,
    pub fs: f64,
    pub len: usize,
    /// `None` for noiseless clips.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub lighting: f64,
    pub motion: bool,
    pub skin_tone: u8,
}

impl ManifestRecord {
    pub fn clip_spec(&self) -> ClipSpec {
        ClipSpec {
            hr_bpm: self.hr_bpm,
            fs: self.fs,
            len: self.len,
            snr_db: self.snr_db.unwrap_or(f64::INFINITY),
        }
    }

    pub fn scene(&self) -> SceneMeta {
        SceneMeta {
            lighting: self.lighting,
            motion: self.motion,
            skin_tone: self.skin_tone,
        }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::contract("signal", e.to_string()))?);
        out.push('\n');
    }
    Ok(fs::write(path, out)?)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
