//! Isolation fuzzing against an independent reference checker. Shared by
//! the agent tests and the gateway acceptance suite.

use netagent_core::agent::{
    enforce_isolation, AgentMessage, AuditLog, MessageBus, MessageKind, PatternReport, Recipient, StoreRead,
};
use netagent_core::detect::{AnomalyEvent, Direction, EventKind, Severity, Window};
use netagent_core::telemetry::{
    format_record, parse_record, DbKind, FlowRecord, OpticalSample, Record, TelemetrySample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::sync::Arc;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzStats {
    pub messages: usize,
    pub delivered: usize,
    /// Delivered messages the reference rejects.
    pub leaks: usize,
    pub injected: usize,
    pub injected_blocked: usize,
    /// Clean messages the bus rejected although the reference allows them.
    pub clean_blocked: usize,
    /// Injections the reference itself failed to flag (a broken fixture).
    pub reference_misses: usize,
    pub verdict_mismatches: usize,
}

fn event(entity: &str, severity: Severity) -> AnomalyEvent {
    AnomalyEvent {
        entity_id: entity.into(),
        metric: "pps_in".into(),
        window: Window::new(0, 3600),
        observed: 1.0,
        score: 4.0,
        severity,
        direction: Direction::High,
        kind: EventKind::Deviation,
    }
}

fn reference_has_raw(v: &Value) -> bool {
    match v {
        Value::Object(_) => {
            serde_json::from_value::<Record>(v.clone()).is_ok()
                || serde_json::from_value::<TelemetrySample>(v.clone()).is_ok()
                || serde_json::from_value::<FlowRecord>(v.clone()).is_ok()
                || serde_json::from_value::<OpticalSample>(v.clone()).is_ok()
                || v.as_object().unwrap().values().any(reference_has_raw)
        }
        Value::Array(a) => a.iter().any(reference_has_raw),
        Value::String(s) => {
            let toks: Vec<&str> = s.split_whitespace().collect();
            for i in 0..toks.len() {
                for j in i + 1..=(i + 12).min(toks.len()) {
                    if parse_record(&toks[i..j].join(" "), None).is_ok() {
                        return true;
                    }
                }
            }
            let bytes = s.as_bytes();
            (0..bytes.len()).filter(|&i| bytes[i] == b'{').any(|i| {
                serde_json::Deserializer::from_str(&s[i..])
                    .into_iter::<Value>()
                    .next()
                    .and_then(Result::ok)
                    .is_some_and(|inner| reference_has_raw(&inner))
            })
        }
        _ => false,
    }
}

fn reference_allows(msg: &AgentMessage, scopes: &[(&str, Option<&str>)]) -> bool {
    let scope_of = |id: &str| scopes.iter().find(|(a, _)| *a == id).map(|(_, s)| *s);
    let Some(sender_scope) = scope_of(&msg.sender) else { return false };
    let recipient_ok = match &msg.recipient {
        Recipient::Agent(to) => to != &msg.sender && scope_of(to).is_some(),
        Recipient::Broadcast => msg.kind == MessageKind::Report,
    };
    recipient_ok
        && !reference_has_raw(&msg.payload)
        && msg.evidence.iter().all(|e| Some(e.store.as_str()) == sender_scope)
}

fn random_record(rng: &mut ChaCha8Rng) -> Record {
    match rng.random_range(0..3) {
        0 => Record::Interface(TelemetrySample {
            timestamp: rng.random_range(1_700_000_000..1_800_000_000),
            interface_id: format!("booth{:02}-eth{}", rng.random_range(1..30), rng.random_range(0..2)),
            pkts_in: rng.random(),
            pkts_out: rng.random(),
            octets_in: rng.random(),
            octets_out: rng.random(),
            errs_in: rng.random_range(0..100),
            errs_out: 0,
            speed_bps: 1_000_000_000,
            descr: "uplink".into(),
        }),
        1 => Record::Flow(FlowRecord {
            start_ts: 1_711_929_600,
            end_ts: 1_711_929_660,
            src_addr: format!("10.0.{}.5", rng.random_range(1..30)),
            dst_addr: "10.0.0.1".into(),
            src_port: rng.random(),
            dst_port: 443,
            proto: 6,
            bytes: rng.random_range(1..1_000_000),
            packets: rng.random_range(1..1000),
        }),
        _ => Record::Optical(OpticalSample {
            timestamp: 1_711_929_600,
            port_id: format!("opt-{:02}", rng.random_range(1..4)),
            tx_power_dbm: -1.5,
            rx_power_dbm: -(rng.random_range(0..200) as f64) / 10.0,
        }),
    }
}

fn record_object(r: &Record, rng: &mut ChaCha8Rng) -> Value {
    if rng.random_bool(0.5) {
        return serde_json::to_value(r).unwrap();
    }
    match r {
        Record::Interface(s) => serde_json::to_value(s).unwrap(),
        Record::Flow(f) => serde_json::to_value(f).unwrap(),
        Record::Optical(o) => serde_json::to_value(o).unwrap(),
    }
}

fn benign_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "booth12-eth0", "errors", "rising", "kind=flow", "opt-03", "pps_in", "{\"mean\": 4.2}", "ts=1711929600",
        "rx_power_dbm", "-12.5", "bytes=900", "window", "[1711929600, 1711933200)", "critical", "{", "}",
    ];
    (0..rng.random_range(1..25)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn sample_report(agent: &str, kind: DbKind, rng: &mut ChaCha8Rng) -> PatternReport {
    PatternReport {
        report_id: format!("rpt-{agent}-{}", rng.random_range(0..1000)),
        agent_id: agent.into(),
        db_kind: kind,
        window: Window::new(0, 3600),
        events: vec![event("booth01-eth0", Severity::Critical)],
        summary: benign_text(rng),
        correlation_keys: vec!["booth01-eth0".into()],
    }
}

pub fn run(n: usize, seed: u64) -> FuzzStats {
    let scopes: [(&str, Option<&str>); 4] =
        [("coordinator", None), ("interface", Some("interface")), ("flow", Some("flow")), ("optical", Some("optical"))];
    let audit = Arc::new(AuditLog::in_memory());
    let bus = MessageBus::new(audit.clone());
    for (a, s) in scopes {
        bus.register(a, s);
    }
    let kinds = [DbKind::Interface, DbKind::Flow, DbKind::Optical];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = FuzzStats::default();
    for _ in 0..n {
        let sender_idx = rng.random_range(0..4);
        let sender = if rng.random_bool(0.02) { "rogue" } else { scopes[sender_idx].0 };
        let mut msg = if sender_idx > 0 && rng.random_bool(0.3) {
            AgentMessage::report(&sample_report(sender, kinds[sender_idx - 1], &mut rng), 0)
        } else {
            let to = scopes[rng.random_range(0..4)].0;
            let kind = [MessageKind::Ask, MessageKind::Answer, MessageKind::Result][rng.random_range(0..3)];
            AgentMessage::text(sender, to, kind, &benign_text(&mut rng), 0)
        };
        if let Some(scope) = scopes.iter().find(|(a, _)| *a == sender).and_then(|(_, s)| *s) {
            if rng.random_bool(0.5) {
                msg.evidence.push(StoreRead { store: scope.into(), tool: "query_window".into() });
            }
        }
        let mut inject = rng.random_bool(0.3);
        if inject {
            let rec = random_record(&mut rng);
            let text_field = if msg.kind == MessageKind::Report { "summary" } else { "text" };
            match rng.random_range(0..5) {
                0 => {
                    let line = format_record(&rec);
                    let t = msg.payload[text_field].as_str().unwrap_or_default().to_string();
                    msg.payload[text_field] = json!(format!("{t} {line} trailing"));
                }
                1 => {
                    let line = format_record(&rec).replace(' ', if rng.random_bool(0.5) { "\n" } else { "\t " });
                    msg.payload[text_field] = json!(format!("see\n{line}"));
                }
                2 => {
                    let obj = record_object(&rec, &mut rng);
                    msg.payload[text_field] = json!(format!("raw: {obj}"));
                }
                3 => {
                    let obj = record_object(&rec, &mut rng);
                    if msg.kind == MessageKind::Report && rng.random_bool(0.5) {
                        msg.payload["events"][0]["raw"] = obj;
                    } else {
                        msg.payload["extra"] = json!([obj]);
                    }
                }
                _ => {
                    let other = ["interface", "flow", "optical"][rng.random_range(0..3)];
                    if Some(other) == scopes.iter().find(|(a, _)| *a == sender).and_then(|(_, s)| *s) {
                        inject = false;
                    } else {
                        msg.evidence.push(StoreRead { store: other.into(), tool: "query_window".into() });
                    }
                }
            }
        }
        let expected_ok = reference_allows(&msg, &scopes);
        if inject {
            st.injected += 1;
            if expected_ok {
                st.reference_misses += 1;
            }
        }
        st.messages += 1;
        let verdict = enforce_isolation(&msg, &bus.scopes());
        let sent = bus.send(msg.clone());
        if verdict.is_pass() != sent.is_ok() {
            st.verdict_mismatches += 1;
        }
        match sent {
            Ok(_) => {
                st.delivered += 1;
                if !expected_ok {
                    st.leaks += 1;
                    eprintln!("leak: {msg:?}");
                }
            }
            Err(_) if inject => st.injected_blocked += 1,
            Err(_) if expected_ok => st.clean_blocked += 1,
            Err(_) => {}
        }
    }
    st
}
