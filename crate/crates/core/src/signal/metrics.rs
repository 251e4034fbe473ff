use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when either list has zero variance.
    pub pearson_r: Option<f64>,
}

impl MetricsReport {
    pub fn r(&self) -> Result<f64> {
        self.pearson_r.ok_or(Error::UndefinedCorrelation)
    }
}

fn check_lengths(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != gt.len() {
        return Err(Error::contract(
            "signal",
            format!("metrics need equal non-empty lists, got {} and {}", pred.len(), gt.len()),
        ));
    }
    Ok(())
}

pub fn metrics(pred: &[f64], gt: &[f64]) -> Result<MetricsReport> {
    check_lengths(pred, gt)?;
    let n = pred.len() as f64;
    let mae = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n;
    Ok(MetricsReport {
        mae,
        rmse: mse.sqrt(),
        pearson_r: pearson(pred, gt).ok(),
    })
}

fn centered(x: &[f64]) -> Option<Vec<f64>> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 16.0 * f64::EPSILON * scale;
    dev.iter().any(|d| d.abs() > tol).then_some(dev)
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let (Some(dx), Some(dy)) = (centered(x), centered(y)) else {
        return Err(Error::UndefinedCorrelation);
    };
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let sxx: f64 = dx.iter().map(|a| a * a).sum();
    let syy: f64 = dy.iter().map(|b| b * b).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
