//! Cross-database incident correlation and root-cause ranking.
//!
//! Events from pattern reports are grouped when their entities are linked
//! in the [`TopologyMap`] and their windows lie within `gap_s` of each
//! other. Grouping is transitive (union-find), so the partition does not
//! depend on input order.

mod topology;

pub use topology::{TopologyError, TopologyMap};

use crate::agent::PatternReport;
use crate::detect::{AnomalyEvent, Direction, EventKind, Window};
use crate::telemetry::{DbKind, Timestamp};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const DEFAULT_GAP_S: i64 = 900;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncidentStatus {
    Open,
    Acknowledged,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub label: String,
    pub entity_id: String,
    pub db_kind: DbKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub incident_id: String,
    pub window: Window,
    pub members: BTreeMap<DbKind, Vec<AnomalyEvent>>,
    pub hypotheses: Vec<Hypothesis>,
    pub status: IncidentStatus,
}

impl Incident {
    pub fn member_count(&self) -> usize {
        self.members.values().map(Vec::len).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = (DbKind, &AnomalyEvent)> {
        self.members.iter().flat_map(|(k, evs)| evs.iter().map(move |e| (*k, e)))
    }

    /// The incident's members as one report per kind, for re-correlation.
    pub fn as_reports(&self) -> Vec<PatternReport> {
        self.members
            .iter()
            .map(|(kind, events)| {
                let mut keys: Vec<String> = events.iter().map(|e| e.entity_id.clone()).collect();
                keys.sort();
                keys.dedup();
                PatternReport {
                    report_id: format!("{}-{}", self.incident_id, kind),
                    agent_id: kind.as_str().to_string(),
                    db_kind: *kind,
                    window: self.window,
                    events: events.clone(),
                    summary: String::new(),
                    correlation_keys: keys,
                }
            })
            .collect()
    }
}

type EventKey = (Timestamp, DbKind, String, String, Timestamp, EventKind);

fn key(kind: DbKind, e: &AnomalyEvent) -> EventKey {
    (e.window.start, kind, e.entity_id.clone(), e.metric.clone(), e.window.end, e.kind)
}

/// Canonical, deduplicated list of (kind, event) from the reports.
fn collect_events(reports: &[PatternReport]) -> Vec<(DbKind, AnomalyEvent)> {
    let mut all: Vec<(DbKind, AnomalyEvent)> =
        reports.iter().flat_map(|r| r.events.iter().map(move |e| (r.db_kind, e.clone()))).collect();
    // Full-value tiebreak so duplicates with differing numbers resolve the
    // same way regardless of input order.
    all.sort_by(|a, b| {
        key(a.0, &a.1)
            .cmp(&key(b.0, &b.1))
            .then(a.1.observed.total_cmp(&b.1.observed))
            .then(a.1.score.total_cmp(&b.1.score))
    });
    all.dedup_by(|b, a| key(a.0, &a.1) == key(b.0, &b.1));
    all
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups escalated events from `reports` into incidents, ordered by
/// window start then id.
pub fn correlate(reports: &[PatternReport], topo: &TopologyMap, gap_s: i64) -> Vec<Incident> {
    let events = collect_events(reports);
    let n = events.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&events[i].1, &events[j].1);
            if a.window.gap(&b.window) <= gap_s && topo.linked(&a.entity_id, &b.entity_id) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut incidents: Vec<Incident> = groups
        .into_values()
        .map(|idx| {
            // Indices are in canonical order, so idx[0] is the earliest member.
            let first = &events[idx[0]].1;
            let mut members: BTreeMap<DbKind, Vec<AnomalyEvent>> = BTreeMap::new();
            let mut window = first.window;
            for &i in &idx {
                let (kind, e) = &events[i];
                window = Window::new(window.start.min(e.window.start), window.end.max(e.window.end));
                members.entry(*kind).or_default().push(e.clone());
            }
            let mut inc = Incident {
                incident_id: format!("inc-{}-{}", first.window.start, first.entity_id),
                window,
                members,
                hypotheses: Vec::new(),
                status: IncidentStatus::Open,
            };
            inc.hypotheses = rank_root_cause(&inc, topo);
            inc
        })
        .collect();
    incidents.sort_by(|a, b| (a.window.start, &a.incident_id).cmp(&(b.window.start, &b.incident_id)));
    incidents
}

struct Candidate<'a> {
    kind: DbKind,
    entity: &'a str,
    onset: Timestamp,
    events: Vec<&'a AnomalyEvent>,
}

fn label(kind: DbKind, entity: &str, events: &[&AnomalyEvent]) -> String {
    let top = events
        .iter()
        .max_by(|a, b| a.score.abs().total_cmp(&b.score.abs()).then_with(|| b.metric.cmp(&a.metric)))
        .expect("candidate has events");
    match kind {
        DbKind::Optical if top.direction == Direction::Low => format!("optical degradation on port {entity}"),
        DbKind::Optical => format!("optical power surge on port {entity}"),
        DbKind::Interface if top.kind == EventKind::ErrorSpike => format!("error storm on interface {entity}"),
        DbKind::Interface if top.direction == Direction::High => format!("traffic surge on interface {entity}"),
        DbKind::Interface => format!("traffic loss on interface {entity}"),
        DbKind::Flow => format!("flow anomaly from {entity}"),
    }
}

/// Rule-based hypotheses, one per (kind, entity) in the incident.
///
/// Raw score = 2·layer/3 + explain + temporal + breadth, where `explain`
/// is 1 for an optical entity linked to an interface with error events,
/// `temporal` is 1 for the earliest onset falling linearly to 0 for the
/// latest, and `breadth` is the share of other candidates linked to this
/// one. Scores are normalized to sum to 1.
pub fn rank_root_cause(incident: &Incident, topo: &TopologyMap) -> Vec<Hypothesis> {
    let mut cands: BTreeMap<(DbKind, &str), Candidate> = BTreeMap::new();
    for (kind, e) in incident.events() {
        let c = cands.entry((kind, e.entity_id.as_str())).or_insert(Candidate {
            kind,
            entity: &e.entity_id,
            onset: e.window.start,
            events: Vec::new(),
        });
        c.onset = c.onset.min(e.window.start);
        c.events.push(e);
    }
    let cands: Vec<Candidate> = cands.into_values().collect();
    let earliest = cands.iter().map(|c| c.onset).min().unwrap_or(0);
    let latest = cands.iter().map(|c| c.onset).max().unwrap_or(0);
    let n = cands.len();

    let raw: Vec<f64> = cands
        .iter()
        .map(|c| {
            let layer = 2.0 * f64::from(c.kind.layer_rank()) / 3.0;
            let explain = if c.kind == DbKind::Optical
                && cands.iter().any(|o| {
                    o.kind == DbKind::Interface
                        && o.events.iter().any(|e| e.kind == EventKind::ErrorSpike)
                        && topo.linked(c.entity, o.entity)
                }) {
                1.0
            } else {
                0.0
            };
            let temporal =
                if latest > earliest { (latest - c.onset) as f64 / (latest - earliest) as f64 } else { 1.0 };
            let breadth = if n > 1 {
                let linked = cands
                    .iter()
                    .filter(|o| !std::ptr::eq(*o, c) && topo.linked(c.entity, o.entity))
                    .count();
                linked as f64 / (n - 1) as f64
            } else {
                0.0
            };
            layer + explain + temporal + breadth
        })
        .collect();
    let total: f64 = raw.iter().sum();

    let mut hyps: Vec<(Timestamp, Hypothesis)> = cands
        .iter()
        .zip(&raw)
        .map(|(c, r)| {
            (
                c.onset,
                Hypothesis {
                    label: label(c.kind, c.entity, &c.events),
                    entity_id: c.entity.to_string(),
                    db_kind: c.kind,
                    score: r / total,
                },
            )
        })
        .collect();
    hyps.sort_by(|(oa, a), (ob, b)| {
        b.score
            .total_cmp(&a.score)
            .then(oa.cmp(ob))
            .then_with(|| a.entity_id.cmp(&b.entity_id))
            .then(a.db_kind.cmp(&b.db_kind))
    });
    hyps.into_iter().map(|(_, h)| h).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IncidentError {
    #[error("unknown incident {0}")]
    NotFound(String),
    #[error("incident {id} is {from:?}; cannot move to {to:?}")]
    InvalidTransition { id: String, from: IncidentStatus, to: IncidentStatus },
}

/// Running incident state fed by agent ticks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncidentBook {
    pub gap_s: i64,
    /// Reports older than this (relative to the newest) are dropped.
    pub retention_s: i64,
    /// Open incidents with no event this close to the newest tick resolve.
    pub resolve_after_s: i64,
    reports: Vec<PatternReport>,
    incidents: BTreeMap<String, Incident>,
}

impl Default for IncidentBook {
    fn default() -> Self {
        Self::new(DEFAULT_GAP_S)
    }
}

impl IncidentBook {
    pub fn new(gap_s: i64) -> Self {
        Self {
            gap_s,
            retention_s: 48 * 3600,
            resolve_after_s: 2 * 3600,
            reports: Vec::new(),
            incidents: BTreeMap::new(),
        }
    }

    pub fn reports(&self) -> &[PatternReport] {
        &self.reports
    }

    /// Adds reports and recomputes incidents. `now` is the end of the
    /// evaluated window.
    pub fn ingest(&mut self, reports: Vec<PatternReport>, topo: &TopologyMap, now: Timestamp) {
        for r in reports {
            if !self.reports.iter().any(|x| x.report_id == r.report_id) {
                self.reports.push(r);
            }
        }
        let horizon = now - self.retention_s;
        self.reports.retain(|r| r.window.end > horizon);
        self.recompute(topo, now);
    }

    fn recompute(&mut self, topo: &TopologyMap, now: Timestamp) {
        let fresh = correlate(&self.reports, topo, self.gap_s);
        let live: BTreeSet<EventKey> =
            fresh.iter().flat_map(|i| i.events().map(|(k, e)| key(k, e))).collect();
        // Incidents whose events were regrouped under another id are
        // superseded; those whose reports aged out stay as history.
        let produced: BTreeSet<&str> = fresh.iter().map(|i| i.incident_id.as_str()).collect();
        self.incidents.retain(|id, old| {
            produced.contains(id.as_str()) || !old.events().any(|(k, e)| live.contains(&key(k, e)))
        });
        for mut inc in fresh {
            if let Some(old) = self.incidents.get(&inc.incident_id) {
                inc.status = old.status;
            }
            self.incidents.insert(inc.incident_id.clone(), inc);
        }
        for inc in self.incidents.values_mut() {
            if inc.status != IncidentStatus::Resolved && inc.window.end + self.resolve_after_s < now {
                inc.status = IncidentStatus::Resolved;
            }
        }
    }

    /// Incidents whose window ends after `since` (all when `None`), oldest first.
    pub fn list(&self, since: Option<Timestamp>) -> Vec<&Incident> {
        let mut v: Vec<&Incident> =
            self.incidents.values().filter(|i| since.is_none_or(|s| i.window.end > s)).collect();
        v.sort_by(|a, b| (a.window.start, &a.incident_id).cmp(&(b.window.start, &b.incident_id)));
        v
    }

    pub fn get(&self, id: &str) -> Option<&Incident> {
        self.incidents.get(id)
    }

    pub fn acknowledge(&mut self, id: &str) -> Result<&Incident, IncidentError> {
        self.transition(id, IncidentStatus::Acknowledged, &[IncidentStatus::Open])
    }

    pub fn resolve(&mut self, id: &str) -> Result<&Incident, IncidentError> {
        self.transition(id, IncidentStatus::Resolved, &[IncidentStatus::Open, IncidentStatus::Acknowledged])
    }

    fn transition(
        &mut self,
        id: &str,
        to: IncidentStatus,
        allowed_from: &[IncidentStatus],
    ) -> Result<&Incident, IncidentError> {
        let inc = self.incidents.get_mut(id).ok_or_else(|| IncidentError::NotFound(id.to_string()))?;
        if !allowed_from.contains(&inc.status) {
            return Err(IncidentError::InvalidTransition { id: id.to_string(), from: inc.status, to });
        }
        inc.status = to;
        Ok(inc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Severity;
    use proptest::prelude::*;

    const H: i64 = 3600;

    fn ev(entity: &str, metric: &str, start: Timestamp, kind: EventKind, direction: Direction) -> AnomalyEvent {
        AnomalyEvent {
            entity_id: entity.into(),
            metric: metric.into(),
            window: Window::new(start, start + H),
            observed: 1.0,
            score: if direction == Direction::Low { -9.0 } else { 9.0 },
            severity: Severity::Critical,
            direction,
            kind,
        }
    }

    fn report(kind: DbKind, id: &str, events: Vec<AnomalyEvent>) -> PatternReport {
        let mut keys: Vec<String> = events.iter().map(|e| e.entity_id.clone()).collect();
        keys.sort();
        keys.dedup();
        PatternReport {
            report_id: id.into(),
            agent_id: kind.as_str().into(),
            db_kind: kind,
            window: events[0].window,
            events,
            summary: String::new(),
            correlation_keys: keys,
        }
    }

    fn topo() -> TopologyMap {
        TopologyMap::parse(
            "link iface=booth12-eth0 port=opt-03\nlink iface=booth12-eth0 booth=booth12\n\
             link iface=booth12-eth1 booth=booth12\nlink iface=booth13-eth0 booth=booth13\n",
        )
        .unwrap()
    }

    #[test]
    fn single_event_single_incident() {
        let r = report(DbKind::Interface, "r", vec![ev("booth13-eth0", "pps_in", 0, EventKind::Deviation, Direction::High)]);
        let incs = correlate(&[r], &topo(), DEFAULT_GAP_S);
        assert_eq!(incs.len(), 1);
        assert_eq!(incs[0].incident_id, "inc-0-booth13-eth0");
        assert_eq!(incs[0].hypotheses.len(), 1);
        assert_eq!(incs[0].hypotheses[0].score, 1.0);
        assert_eq!(incs[0].hypotheses[0].label, "traffic surge on interface booth13-eth0");
    }

    #[test]
    fn optical_drop_and_linked_errors_form_one_incident() {
        let opt = report(DbKind::Optical, "o", vec![ev("opt-03", "rx_power_dbm", 0, EventKind::Deviation, Direction::Low)]);
        let ifc = report(DbKind::Interface, "i", vec![ev("booth12-eth0", "eps_in", H, EventKind::ErrorSpike, Direction::High)]);
        let incs = correlate(&[ifc, opt], &topo(), DEFAULT_GAP_S);
        assert_eq!(incs.len(), 1);
        let inc = &incs[0];
        assert_eq!(inc.member_count(), 2);
        assert_eq!(inc.window, Window::new(0, 2 * H));
        assert_eq!(inc.incident_id, "inc-0-opt-03");
        // By hand: optical = 2·3/3 + 1 + 1 + 1 = 5; interface = 2·2/3 + 0 + 0 + 1 = 7/3.
        let total = 5.0 + 7.0 / 3.0;
        assert_eq!(inc.hypotheses[0].label, "optical degradation on port opt-03");
        assert!((inc.hypotheses[0].score - 5.0 / total).abs() < 1e-12);
        assert!((inc.hypotheses[1].score - (7.0 / 3.0) / total).abs() < 1e-12);
    }

    #[test]
    fn unlinked_events_apart_stay_separate() {
        let a = report(DbKind::Interface, "a", vec![ev("booth12-eth0", "pps_in", 0, EventKind::Deviation, Direction::High)]);
        let b = report(DbKind::Interface, "b", vec![ev("booth13-eth0", "pps_in", 2 * H, EventKind::Deviation, Direction::High)]);
        assert_eq!(correlate(&[a, b], &topo(), DEFAULT_GAP_S).len(), 2);
    }

    #[test]
    fn gap_limits_grouping() {
        let a = report(DbKind::Interface, "a", vec![ev("booth12-eth0", "pps_in", 0, EventKind::Deviation, Direction::High)]);
        let b = report(DbKind::Interface, "b", vec![ev("booth12-eth1", "pps_in", H + 900, EventKind::Deviation, Direction::High)]);
        let c = report(DbKind::Interface, "c", vec![ev("booth12-eth1", "pps_in", H + 901, EventKind::Deviation, Direction::High)]);
        assert_eq!(correlate(&[a.clone(), b], &topo(), 900).len(), 1);
        assert_eq!(correlate(&[a, c], &topo(), 900).len(), 2);
    }

    #[test]
    fn simultaneous_same_layer_tie_is_lexicographic() {
        let r = report(
            DbKind::Interface,
            "r",
            vec![
                ev("booth12-eth1", "pps_in", 0, EventKind::Deviation, Direction::High),
                ev("booth12-eth0", "pps_in", 0, EventKind::Deviation, Direction::High),
            ],
        );
        let incs = correlate(&[r], &topo(), DEFAULT_GAP_S);
        assert_eq!(incs.len(), 1);
        let h = &incs[0].hypotheses;
        assert_eq!(h[0].score, h[1].score);
        assert_eq!((h[0].entity_id.as_str(), h[1].entity_id.as_str()), ("booth12-eth0", "booth12-eth1"));
    }

    #[test]
    fn book_acknowledge_and_conflicts() {
        let mut book = IncidentBook::default();
        let r = report(DbKind::Interface, "r", vec![ev("booth13-eth0", "pps_in", 0, EventKind::Deviation, Direction::High)]);
        book.ingest(vec![r], &topo(), H);
        let id = book.list(None)[0].incident_id.clone();
        assert_eq!(book.acknowledge(&id).unwrap().status, IncidentStatus::Acknowledged);
        assert!(matches!(book.acknowledge(&id), Err(IncidentError::InvalidTransition { .. })));
        assert!(matches!(book.acknowledge("nope"), Err(IncidentError::NotFound(_))));
        // Re-ingesting keeps the status; a later quiet tick resolves it.
        book.ingest(vec![], &topo(), 2 * H);
        assert_eq!(book.get(&id).unwrap().status, IncidentStatus::Acknowledged);
        book.ingest(vec![], &topo(), 10 * H);
        assert_eq!(book.get(&id).unwrap().status, IncidentStatus::Resolved);
        assert!(book.list(Some(H)).is_empty());
    }

    /// Reference partition: connected components by breadth-first search
    /// over an explicit pairwise adjacency matrix.
    fn reference_partition(reports: &[PatternReport], topo: &TopologyMap, gap_s: i64) -> BTreeSet<BTreeSet<EventKey>> {
        let mut evs: Vec<(DbKind, AnomalyEvent)> = Vec::new();
        for r in reports {
            for e in &r.events {
                if !evs.iter().any(|(k, x)| key(*k, x) == key(r.db_kind, e)) {
                    evs.push((r.db_kind, e.clone()));
                }
            }
        }
        let n = evs.len();
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b) = (&evs[i].1, &evs[j].1);
                        a.window.gap(&b.window) <= gap_s && topo.linked(&a.entity_id, &b.entity_id)
                    })
                    .collect()
            })
            .collect();
        let mut seen = vec![false; n];
        let mut out = BTreeSet::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            while let Some(i) = queue.pop_front() {
                comp.insert(key(evs[i].0, &evs[i].1));
                for j in 0..n {
                    if adj[i][j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            out.insert(comp);
        }
        out
    }

    fn partition(incs: &[Incident]) -> BTreeSet<BTreeSet<EventKey>> {
        incs.iter().map(|i| i.events().map(|(k, e)| key(k, e)).collect()).collect()
    }

    const ENTITIES: &[(DbKind, &str)] = &[
        (DbKind::Optical, "opt-03"),
        (DbKind::Interface, "booth12-eth0"),
        (DbKind::Interface, "booth12-eth1"),
        (DbKind::Interface, "booth13-eth0"),
        (DbKind::Flow, "10.0.12.5"),
    ];

    fn arb_reports() -> impl Strategy<Value = Vec<PatternReport>> {
        let event = (0..ENTITIES.len(), 0i64..8, 0usize..3, any::<bool>());
        proptest::collection::vec(proptest::collection::vec(event, 1..4), 1..6).prop_map(|groups| {
            groups
                .into_iter()
                .enumerate()
                .flat_map(|(gi, evs)| {
                    let mut by_kind: BTreeMap<DbKind, Vec<AnomalyEvent>> = BTreeMap::new();
                    for (ei, slot, m, low) in evs {
                        let (kind, entity) = ENTITIES[ei];
                        let metric = match (kind, m) {
                            (DbKind::Optical, _) => "rx_power_dbm",
                            (DbKind::Flow, _) => "bytes",
                            (_, 0) => "eps_in",
                            (_, 1) => "pps_in",
                            _ => "bps_out",
                        };
                        let ek = if metric == "eps_in" { EventKind::ErrorSpike } else { EventKind::Deviation };
                        let dir = if low && ek == EventKind::Deviation { Direction::Low } else { Direction::High };
                        by_kind.entry(kind).or_default().push(ev(entity, metric, slot * H, ek, dir));
                    }
                    by_kind
                        .into_iter()
                        .map(|(k, evs)| report(k, &format!("r{gi}-{k}"), evs))
                        .collect::<Vec<_>>()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn partition_matches_reference(reports in arb_reports()) {
            let t = topo();
            let incs = correlate(&reports, &t, DEFAULT_GAP_S);
            prop_assert_eq!(partition(&incs), reference_partition(&reports, &t, DEFAULT_GAP_S));
        }

        #[test]
        fn order_invariance(reports in arb_reports(), seed in any::<u64>()) {
            let t = topo();
            let mut shuffled = reports.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                shuffled.swap(i, (seed.rotate_left(i as u32) % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(correlate(&reports, &t, DEFAULT_GAP_S), correlate(&shuffled, &t, DEFAULT_GAP_S));
        }

        #[test]
        fn merge_idempotence(reports in arb_reports()) {
            let t = topo();
            let first = correlate(&reports, &t, DEFAULT_GAP_S);
            let again: Vec<PatternReport> = first.iter().flat_map(Incident::as_reports).collect();
            prop_assert_eq!(partition(&correlate(&again, &t, DEFAULT_GAP_S)), partition(&first));
        }

        #[test]
        fn hypotheses_are_normalized_and_ordered(reports in arb_reports()) {
            for inc in correlate(&reports, &topo(), DEFAULT_GAP_S) {
                prop_assert!(inc.member_count() >= 1);
                let sum: f64 = inc.hypotheses.iter().map(|h| h.score).sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(inc.hypotheses.windows(2).all(|w| w[0].score >= w[1].score));
                prop_assert!(inc.hypotheses.iter().all(|h| (0.0..=1.0).contains(&h.score)));
            }
        }
    }
}
