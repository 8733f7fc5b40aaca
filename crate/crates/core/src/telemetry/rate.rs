use super::{TelemetrySample, Timestamp};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Per-interval rates derived from two consecutive counter polls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    /// End of the interval.
    pub timestamp: Timestamp,
    pub interface_id: String,
    pub pps_in: f64,
    pub pps_out: f64,
    pub bps_in: f64,
    pub bps_out: f64,
    pub eps_in: f64,
    pub eps_out: f64,
    pub interval_s: i64,
    /// Set when any counter went backwards; all rates are then zero.
    pub reset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMetric {
    PpsIn,
    PpsOut,
    BpsIn,
    BpsOut,
    EpsIn,
    EpsOut,
}

impl RateMetric {
    pub const ALL: [RateMetric; 6] = [
        RateMetric::PpsIn,
        RateMetric::PpsOut,
        RateMetric::BpsIn,
        RateMetric::BpsOut,
        RateMetric::EpsIn,
        RateMetric::EpsOut,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RateMetric::PpsIn => "pps_in",
            RateMetric::PpsOut => "pps_out",
            RateMetric::BpsIn => "bps_in",
            RateMetric::BpsOut => "bps_out",
            RateMetric::EpsIn => "eps_in",
            RateMetric::EpsOut => "eps_out",
        }
    }

    pub fn is_error_rate(self) -> bool {
        matches!(self, RateMetric::EpsIn | RateMetric::EpsOut)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn value(self, r: &RateSample) -> f64 {
        match self {
            RateMetric::PpsIn => r.pps_in,
            RateMetric::PpsOut => r.pps_out,
            RateMetric::BpsIn => r.bps_in,
            RateMetric::BpsOut => r.bps_out,
            RateMetric::EpsIn => r.eps_in,
            RateMetric::EpsOut => r.eps_out,
        }
    }
}

impl fmt::Display for RateMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RateMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RateMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown rate metric `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RateError {
    #[error("non-monotonic-time: current sample at {curr} is not after previous at {prev}")]
    NonMonotonicTime { prev: Timestamp, curr: Timestamp },
    #[error("mismatched-entity: `{prev}` vs `{curr}`")]
    MismatchedEntity { prev: String, curr: String },
}

/// Differences two polls of the same interface into rates.
///
/// Any counter that went backwards (wrap or device restart, which cannot be
/// told apart at normal polling rates) yields a reset marker with all rates
/// zero instead of a guessed wrap correction.
pub fn counters_to_rate(prev: &TelemetrySample, curr: &TelemetrySample) -> Result<RateSample, RateError> {
    if prev.interface_id != curr.interface_id {
        return Err(RateError::MismatchedEntity {
            prev: prev.interface_id.clone(),
            curr: curr.interface_id.clone(),
        });
    }
    if curr.timestamp <= prev.timestamp {
        return Err(RateError::NonMonotonicTime { prev: prev.timestamp, curr: curr.timestamp });
    }
    let interval_s = curr.timestamp - prev.timestamp;
    let pairs = [
        (prev.pkts_in, curr.pkts_in),
        (prev.pkts_out, curr.pkts_out),
        (prev.octets_in, curr.octets_in),
        (prev.octets_out, curr.octets_out),
        (prev.errs_in, curr.errs_in),
        (prev.errs_out, curr.errs_out),
    ];
    let mut deltas = [0u64; 6];
    let mut reset = false;
    for (slot, (p, c)) in deltas.iter_mut().zip(pairs) {
        match c.checked_sub(p) {
            Some(d) => *slot = d,
            None => reset = true,
        }
    }
    if reset {
        return Ok(RateSample {
            timestamp: curr.timestamp,
            interface_id: curr.interface_id.clone(),
            pps_in: 0.0,
            pps_out: 0.0,
            bps_in: 0.0,
            bps_out: 0.0,
            eps_in: 0.0,
            eps_out: 0.0,
            interval_s,
            reset: true,
        });
    }
    let dt = interval_s as f64;
    let [pkts_in, pkts_out, octets_in, octets_out, errs_in, errs_out] = deltas.map(|d| d as f64);
    Ok(RateSample {
        timestamp: curr.timestamp,
        interface_id: curr.interface_id.clone(),
        pps_in: pkts_in / dt,
        pps_out: pkts_out / dt,
        bps_in: octets_in * 8.0 / dt,
        bps_out: octets_out * 8.0 / dt,
        eps_in: errs_in / dt,
        eps_out: errs_out / dt,
        interval_s,
        reset: false,
    })
}

/// Rates between consecutive polls of one interface, in timestamp order.
///
/// `samples` must all belong to one interface and be sorted by timestamp.
/// Polls that repeat the previous timestamp are skipped.
pub fn rate_series<'a, I>(samples: I) -> Vec<RateSample>
where
    I: IntoIterator<Item = &'a TelemetrySample>,
{
    let mut out = Vec::new();
    let mut prev: Option<&TelemetrySample> = None;
    for s in samples {
        match prev {
            Some(p) if s.timestamp <= p.timestamp => continue,
            Some(p) => {
                if let Ok(r) = counters_to_rate(p, s) {
                    out.push(r);
                }
            }
            None => {}
        }
        prev = Some(s);
    }
    out
}
