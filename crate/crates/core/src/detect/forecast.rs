use super::{median_mad, DetectorConfig, Window};
use crate::store::Point;
use crate::telemetry::Timestamp;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Hourly windows per day: the seasonal period.
pub const SEASON_WINDOWS: i64 = 24;
/// Weight of the newest window mean in the EWMA fallback.
pub const EWMA_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMethod {
    SeasonalNaive,
    Ewma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub window: Window,
    pub mean: f64,
    /// MAD of the most recent baseline window means.
    pub uncertainty: f64,
    pub method: ForecastMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForecastError {
    #[error("insufficient-history: {0} complete windows, need at least 2")]
    InsufficientHistory(usize),
}

/// Means of the aligned windows of length `window_s` that end at or before
/// `until`. Windows without data are absent.
pub fn window_means(series: &[Point], window_s: i64, until: Timestamp) -> BTreeMap<Timestamp, f64> {
    let mut acc: BTreeMap<Timestamp, (f64, usize)> = BTreeMap::new();
    for p in series {
        let w = Window::aligned(p.ts, window_s);
        if w.end <= until {
            let e = acc.entry(w.start).or_insert((0.0, 0));
            e.0 += p.value;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Predicts the mean of the window starting at `next_start`.
///
/// With at least 25 complete windows of history the prediction is the mean
/// of the window one day earlier (seasonal naive). Otherwise, or when that
/// window has no data, it is the EWMA of the window means with weight 0.3
/// on the newest.
pub fn forecast_next(series: &[Point], cfg: &DetectorConfig, next_start: Timestamp) -> Result<Forecast, ForecastError> {
    let means = window_means(series, cfg.window_s, next_start);
    if means.len() < 2 {
        return Err(ForecastError::InsufficientHistory(means.len()));
    }
    let window = Window::new(next_start, next_start + cfg.window_s);
    let seasonal = (means.len() as i64 > SEASON_WINDOWS)
        .then(|| means.get(&(next_start - SEASON_WINDOWS * cfg.window_s)).copied())
        .flatten();
    let (mean, method) = match seasonal {
        Some(m) => (m, ForecastMethod::SeasonalNaive),
        None => {
            let mut it = means.values();
            let first = *it.next().expect("at least two means");
            let s = it.fold(first, |s, &m| EWMA_ALPHA * m + (1.0 - EWMA_ALPHA) * s);
            (s, ForecastMethod::Ewma)
        }
    };
    let recent: Vec<f64> = means.values().rev().take(cfg.baseline_windows).copied().collect();
    let (_, uncertainty) = median_mad(&recent);
    Ok(Forecast { window, mean, uncertainty, method })
}
