//! Curve statistics: log-log slopes and noise-floor estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SLOPE_POINTS: usize = 10;
pub const MIN_FLOOR_POINTS: usize = 4;

fn tail_len(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction {fraction} outside (0, 1]"
        )));
    }
    Ok(((n as f64 * fraction).ceil() as usize).min(n))
}

/// Least-squares slope of `log(value)` against `log(t)` over the last
/// `window` fraction of the points.
pub fn fit_loglog_slope(series: &[(f64, f64)], window: f64) -> Result<f64> {
    let k = tail_len(series.len(), window)?;
    let tail = &series[series.len() - k..];
    if tail.len() < MIN_SLOPE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least {MIN_SLOPE_POINTS} points in the window, got {}",
            tail.len()
        )));
    }
    if let Some(&(t, v)) = tail.iter().find(|&&(t, v)| !(t > 0.0 && v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "log-log fit needs positive values, got ({t}, {v})"
        )));
    }
    let n = tail.len() as f64;
    let xs: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct t values".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorEstimate {
    /// Mean of the tail window.
    pub value: f64,
    /// Sample standard deviation of the tail window.
    pub std: f64,
    pub points: usize,
    /// The two halves of the tail have means within three standard errors
    /// of their difference.
    pub stationary: bool,
}

/// Mean of the last `tail_fraction` of `values` with a stationarity check.
pub fn estimate_floor(values: &[f64], tail_fraction: f64) -> Result<FloorEstimate> {
    let k = tail_len(values.len(), tail_fraction)?;
    let tail = &values[values.len() - k..];
    if tail.len() < MIN_FLOOR_POINTS {
        return Err(Error::InvalidArgument(format!(
            "floor estimate needs at least {MIN_FLOOR_POINTS} points, got {}",
            tail.len()
        )));
    }
    if tail.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("floor series"));
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let half = tail.len() / 2;
    let (a, b) = tail.split_at(half);
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let se_diff = std * (1.0 / a.len() as f64 + 1.0 / b.len() as f64).sqrt();
    Ok(FloorEstimate {
        value: mean,
        std,
        points: tail.len(),
        stationary: (ma - mb).abs() <= 3.0 * se_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn series(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (1..=40)
            .map(|k| {
                let t = 1.3f64.powi(k);
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn slopes_of_power_laws() {
        assert!((fit_loglog_slope(&series(|t| 1.0 / t), 0.5).unwrap() + 1.0).abs() < 1e-6);
        assert!(fit_loglog_slope(&series(|_| 3.0), 0.5).unwrap().abs() < 1e-12);
        assert!((fit_loglog_slope(&series(|t| t.powi(-2)), 1.0).unwrap() + 2.0).abs() < 1e-6);
    }

    #[test]
    fn slope_errors() {
        let mut s = series(|t| 1.0 / t);
        s[39].1 = 0.0;
        assert!(fit_loglog_slope(&s, 0.5).is_err());
        assert!(fit_loglog_slope(&series(|t| 1.0 / t)[..9], 1.0).is_err());
        assert!(fit_loglog_slope(&series(|t| 1.0 / t), 0.1).is_err());
    }

    #[test]
    fn floor_of_constant_and_decay() {
        let f = estimate_floor(&[0.5; 20], 0.5).unwrap();
        assert_eq!(f.value, 0.5);
        assert!(f.stationary);
        let decay: Vec<f64> = (1..=100).map(|t| 1.0 / t as f64).collect();
        assert!(!estimate_floor(&decay, 0.5).unwrap().stationary);
        assert!(estimate_floor(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn floor_of_iid_noise() {
        let mut rng = RngStream::new(12);
        let v: Vec<f64> = (0..400).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        let f = estimate_floor(&v, 0.5).unwrap();
        let se = 0.3 / (200f64).sqrt();
        assert!((f.value - 1.0).abs() < 4.0 * se);
        assert!(f.stationary);
    }
}
