use super::{RateMetric, RateSample, Timestamp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub sum: f64,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub count: u64,
}

impl MetricAggregate {
    fn first(v: f64) -> Self {
        Self { sum: v, mean: v, max: v, min: v, count: 1 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
        self.max = self.max.max(v);
        self.min = self.min.min(v);
    }

    fn finish(&mut self) {
        self.mean = (self.sum / self.count as f64).clamp(self.min, self.max);
    }
}

/// Aggregates of every rate metric for one entity over one aligned window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidatedBucket {
    pub bucket_start: Timestamp,
    pub window_s: i64,
    pub entity_id: String,
    /// Indexed by [`RateMetric::index`].
    pub metrics: [MetricAggregate; 6],
}

impl ConsolidatedBucket {
    pub fn metric(&self, m: RateMetric) -> &MetricAggregate {
        &self.metrics[m.index()]
    }

    pub fn count(&self) -> u64 {
        self.metrics[0].count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    /// Window actually used, after any doubling.
    pub window_s: i64,
    /// Sorted by entity then bucket start.
    pub buckets: Vec<ConsolidatedBucket>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsolidateError {
    #[error("unsorted-input: sample {index} of `{entity}` precedes its predecessor")]
    UnsortedInput { entity: String, index: usize },
    #[error("budget-infeasible: budget {budget} is below the {entities} distinct entities")]
    BudgetInfeasible { budget: usize, entities: usize },
    #[error("window must be positive, got {0}")]
    InvalidWindow(i64),
}

fn align(ts: Timestamp, window_s: i64) -> Timestamp {
    ts.div_euclid(window_s) * window_s
}

/// Folds a rate stream into at most `budget` buckets, one per
/// (entity, aligned window). The window doubles until the bucket count fits.
pub fn consolidate(rates: &[RateSample], window_s: i64, budget: usize) -> Result<Consolidation, ConsolidateError> {
    if window_s <= 0 {
        return Err(ConsolidateError::InvalidWindow(window_s));
    }
    let mut last_ts: HashMap<&str, Timestamp> = HashMap::new();
    for (index, r) in rates.iter().enumerate() {
        if let Some(prev) = last_ts.insert(&r.interface_id, r.timestamp) {
            if r.timestamp < prev {
                return Err(ConsolidateError::UnsortedInput { entity: r.interface_id.clone(), index });
            }
        }
    }
    let entities = last_ts.len();
    if budget < entities {
        return Err(ConsolidateError::BudgetInfeasible { budget, entities });
    }

    let mut window = window_s;
    while bucket_count(rates, window) > budget {
        window = window.checked_mul(2).expect("window overflow while fitting budget");
    }

    let mut acc: BTreeMap<(&str, Timestamp), [MetricAggregate; 6]> = BTreeMap::new();
    for r in rates {
        let key = (r.interface_id.as_str(), align(r.timestamp, window));
        match acc.get_mut(&key) {
            Some(aggs) => {
                for m in RateMetric::ALL {
                    aggs[m.index()].push(m.value(r));
                }
            }
            None => {
                acc.insert(key, RateMetric::ALL.map(|m| MetricAggregate::first(m.value(r))));
            }
        }
    }
    let buckets = acc
        .into_iter()
        .map(|((entity, start), mut metrics)| {
            metrics.iter_mut().for_each(MetricAggregate::finish);
            ConsolidatedBucket { bucket_start: start, window_s: window, entity_id: entity.to_string(), metrics }
        })
        .collect();
    Ok(Consolidation { window_s: window, buckets })
}

fn bucket_count(rates: &[RateSample], window_s: i64) -> usize {
    // Input is sorted per entity, so a new bucket starts whenever the
    // aligned start changes for that entity.
    let mut last: HashMap<&str, Timestamp> = HashMap::new();
    let mut count = 0;
    for r in rates {
        let b = align(r.timestamp, window_s);
        if last.insert(&r.interface_id, b) != Some(b) {
            count += 1;
        }
    }
    count
}
