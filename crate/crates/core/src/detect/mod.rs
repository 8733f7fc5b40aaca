//! Windowed robust statistics and anomaly detection.
//!
//! The detector compares the mean of an evaluation window against the
//! median and MAD of the means of the trailing baseline windows, using the
//! modified z-score `0.6745 * (x - median) / MAD`. Error-rate metrics are
//! judged by an absolute threshold instead, because a clean link has an
//! all-zero baseline on which any error at all would look infinitely
//! anomalous.

mod forecast;

pub use forecast::{forecast_next, window_means, Forecast, ForecastError, ForecastMethod};

use crate::store::Point;
use crate::telemetry::Timestamp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Consistency constant that makes the MAD comparable to a standard
/// deviation under normality.
pub const MAD_SCALE: f64 = 0.6745;

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Self { start, end }
    }

    /// The aligned window of length `len` containing `ts`.
    pub fn aligned(ts: Timestamp, len: i64) -> Self {
        let start = ts.div_euclid(len) * len;
        Self { start, end: start + len }
    }

    pub fn len(&self) -> i64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }

    /// Gap in seconds between two windows; 0 when they overlap or touch.
    pub fn gap(&self, other: &Window) -> i64 {
        (self.start.max(other.start) - self.end.min(other.end)).max(0)
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn shifted(&self, by: i64) -> Self {
        Self { start: self.start + by, end: self.end + by }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window: Window,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub mad: f64,
    pub max: f64,
    pub min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warn,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Window mean deviates from the baseline by the modified z-score.
    Deviation,
    /// Error rate at or above the absolute threshold.
    ErrorSpike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub entity_id: String,
    pub metric: String,
    pub window: Window,
    pub observed: f64,
    pub score: f64,
    pub severity: Severity,
    pub direction: Direction,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub window_s: i64,
    pub baseline_windows: usize,
    pub z_warn: f64,
    pub z_critical: f64,
    /// The MAD floor is `mad_floor_rel * max(1, |median|)`.
    pub mad_floor_rel: f64,
    pub error_eps_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_s: 3600,
            baseline_windows: 24,
            z_warn: 3.5,
            z_critical: 7.0,
            mad_floor_rel: 1e-9,
            error_eps_threshold: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let ok = self.window_s > 0
            && self.baseline_windows >= 3
            && self.z_warn > 0.0
            && self.z_critical > self.z_warn
            && self.mad_floor_rel > 0.0
            && self.error_eps_threshold > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DetectError::InvalidConfig(format!("{self:?}")))
        }
    }

    pub fn mad_floor(&self, median: f64) -> f64 {
        self.mad_floor_rel * median.abs().max(1.0)
    }

    fn severity(&self, score: f64) -> Severity {
        if score.abs() >= self.z_critical {
            Severity::Critical
        } else {
            Severity::Warn
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("empty-window: no values in [{}, {})", .0.start, .0.end)]
    EmptyWindow(Window),
    #[error("insufficient-baseline: {available} of {required} baseline windows have data")]
    InsufficientBaseline { required: usize, available: usize },
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
}

/// Median of a slice, reordering it. Even lengths average the two middle
/// values.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (lower, upper_mid, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    if n % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower_mid + upper_mid) / 2.0
    }
}

/// Median and median absolute deviation.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let mut buf = values.to_vec();
    let median = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - median).abs();
    }
    let mad = median_in_place(&mut buf);
    (median, mad)
}

/// Exact statistics of the values whose timestamps fall in `window`.
pub fn window_stats(series: &[Point], window: Window) -> Result<WindowStats, DetectError> {
    let values: Vec<f64> = series.iter().filter(|p| window.contains(p.ts)).map(|p| p.value).collect();
    if values.is_empty() {
        return Err(DetectError::EmptyWindow(window));
    }
    let (median, mad) = median_mad(&values);
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(WindowStats { window, count: values.len(), mean, median: median.clamp(min, max), mad, max, min })
}

/// `0.6745 * (x - median) / max(mad, mad_floor)`.
pub fn modified_zscore(x: f64, median: f64, mad: f64, mad_floor: f64) -> f64 {
    MAD_SCALE * (x - median) / mad.max(mad_floor)
}

fn mean_in(series: &[Point], sorted: bool, window: Window) -> Option<f64> {
    let (sum, n) = if sorted {
        let lo = series.partition_point(|p| p.ts < window.start);
        let hi = series.partition_point(|p| p.ts < window.end);
        (series[lo..hi].iter().map(|p| p.value).sum::<f64>(), hi - lo)
    } else {
        series
            .iter()
            .filter(|p| window.contains(p.ts))
            .fold((0.0, 0usize), |(s, n), p| (s + p.value, n + 1))
    };
    (n > 0).then(|| sum / n as f64)
}

/// Runs the detector on one (entity, metric) series for `eval_window`.
///
/// The baseline is the mean of each of the `baseline_windows` windows of
/// length `window_s` immediately preceding `eval_window`; every one must
/// hold data. Returns no events when the evaluation window itself is empty.
pub fn detect(
    entity_id: &str,
    metric: &str,
    series: &[Point],
    cfg: &DetectorConfig,
    eval_window: Window,
) -> Result<Vec<AnomalyEvent>, DetectError> {
    cfg.validate()?;
    let sorted = series.is_sorted_by_key(|p| p.ts);
    let mut baseline = Vec::with_capacity(cfg.baseline_windows);
    for k in 1..=cfg.baseline_windows as i64 {
        let w = Window::new(eval_window.start - k * cfg.window_s, eval_window.start - (k - 1) * cfg.window_s);
        if let Some(m) = mean_in(series, sorted, w) {
            baseline.push(m);
        }
    }
    if baseline.len() < cfg.baseline_windows {
        return Err(DetectError::InsufficientBaseline {
            required: cfg.baseline_windows,
            available: baseline.len(),
        });
    }
    let Some(observed) = mean_in(series, sorted, eval_window) else {
        return Ok(Vec::new());
    };
    let (median, mad) = median_mad(&baseline);
    let score = modified_zscore(observed, median, mad, cfg.mad_floor(median));
    let direction = if score >= 0.0 { Direction::High } else { Direction::Low };
    let is_error_metric = matches!(metric, "eps_in" | "eps_out");

    let event = if is_error_metric {
        (observed >= cfg.error_eps_threshold).then_some(AnomalyEvent {
            entity_id: entity_id.to_string(),
            metric: metric.to_string(),
            window: eval_window,
            observed,
            score,
            severity: cfg.severity(score),
            direction: Direction::High,
            kind: EventKind::ErrorSpike,
        })
    } else {
        (score.abs() >= cfg.z_warn).then_some(AnomalyEvent {
            entity_id: entity_id.to_string(),
            metric: metric.to_string(),
            window: eval_window,
            observed,
            score,
            severity: cfg.severity(score),
            direction,
            kind: EventKind::Deviation,
        })
    };
    Ok(event.into_iter().collect())
}
