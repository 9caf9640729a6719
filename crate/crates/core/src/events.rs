//! Structured per-connection event logs.
//!
//! Every DoQ session records the packet-level milestones its timing analysis
//! needs. Logs export to qlog-flavoured JSON (one file per connection) and
//! load back losslessly: the exporter keeps a `kind` discriminator inside
//! each event's `data` object next to the qlog naming.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    InitialSent { with_token: bool },
    VersionNegotiationRcvd,
    RetryRcvd,
    InitialResent { with_token: bool },
    HandshakeKeysAvailable,
    NewTokenRcvd,
    CertificateRcvd { der_size: usize },
    AmplificationStallDetected,
    HandshakeConfirmed,
    StreamOpened,
    DnsResponseRcvd,
    ConnectionClosed { code: u64 },
}

impl EventKind {
    /// qlog event name; toolkit-specific milestones use the `doqlab:` namespace.
    fn qlog_name(&self) -> &'static str {
        match self {
            EventKind::InitialSent { .. } | EventKind::InitialResent { .. } => "transport:packet_sent",
            EventKind::VersionNegotiationRcvd | EventKind::RetryRcvd => "transport:packet_received",
            EventKind::HandshakeKeysAvailable => "security:key_updated",
            EventKind::NewTokenRcvd => "transport:frames_processed",
            EventKind::CertificateRcvd { .. } => "doqlab:certificate_received",
            EventKind::AmplificationStallDetected => "doqlab:amplification_stall_detected",
            EventKind::HandshakeConfirmed => "doqlab:handshake_confirmed",
            EventKind::StreamOpened => "transport:stream_state_updated",
            EventKind::DnsResponseRcvd => "doqlab:dns_response_received",
            EventKind::ConnectionClosed { .. } => "transport:connection_closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionEvent {
    /// Microseconds since the connection's first recorded event.
    pub at_micros: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionEventLog {
    /// Wall-clock anchor (unix ms) of the log's time zero.
    pub reference_unix_ms: i64,
    pub events: Vec<ConnectionEvent>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EventLogError {
    #[error("event timestamps not nondecreasing at index {0}")]
    TimestampOrder(usize),
    #[error("more than one {0} event")]
    DuplicateRestart(&'static str),
    #[error("HandshakeConfirmed must precede StreamOpened")]
    ConfirmAfterStream,
    #[error("not a recognized qlog event export: {0}")]
    BadQlog(String),
    #[error("io: {0}")]
    Io(String),
}

impl ConnectionEventLog {
    pub fn first(&self, pred: impl Fn(&EventKind) -> bool) -> Option<&ConnectionEvent> {
        self.events.iter().find(|e| pred(&e.kind))
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn contains(&self, pred: impl Fn(&EventKind) -> bool) -> bool {
        self.first(pred).is_some()
    }

    /// Check the log's causality invariants.
    pub fn validate(&self) -> Result<(), EventLogError> {
        let mut prev = 0u64;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.at_micros < prev {
                return Err(EventLogError::TimestampOrder(i));
            }
            prev = ev.at_micros;
        }
        if self.count(|k| matches!(k, EventKind::VersionNegotiationRcvd)) > 1 {
            return Err(EventLogError::DuplicateRestart("VersionNegotiationRcvd"));
        }
        if self.count(|k| matches!(k, EventKind::RetryRcvd)) > 1 {
            return Err(EventLogError::DuplicateRestart("RetryRcvd"));
        }
        let confirm = self.first(|k| matches!(k, EventKind::HandshakeConfirmed));
        let stream = self.first(|k| matches!(k, EventKind::StreamOpened));
        if let (Some(c), Some(s)) = (confirm, stream) {
            if c.at_micros > s.at_micros {
                return Err(EventLogError::ConfirmAfterStream);
            }
        }
        Ok(())
    }

    /// Export as a single-trace qlog JSON document.
    pub fn to_qlog(&self, title: &str) -> serde_json::Value {
        let events: Vec<serde_json::Value> = self
            .events
            .iter()
            .map(|ev| {
                let data = serde_json::to_value(&ev.kind).expect("event serializes");
                serde_json::json!({
                    "time": ev.at_micros as f64 / 1000.0,
                    "name": ev.kind.qlog_name(),
                    "data": data,
                })
            })
            .collect();
        serde_json::json!({
            "qlog_version": "0.3",
            "qlog_format": "JSON",
            "title": title,
            "traces": [{
                "vantage_point": {"type": "client"},
                "common_fields": {
                    "time_format": "relative",
                    "reference_time": self.reference_unix_ms,
                },
                "events": events,
            }],
        })
    }

    pub fn from_qlog(doc: &serde_json::Value) -> Result<Self, EventLogError> {
        let trace = doc
            .get("traces")
            .and_then(|t| t.get(0))
            .ok_or_else(|| EventLogError::BadQlog("missing traces[0]".into()))?;
        let reference_unix_ms = trace
            .pointer("/common_fields/reference_time")
            .and_then(serde_json::Value::as_i64)
            .unwrap_or(0);
        let raw_events = trace
            .get("events")
            .and_then(serde_json::Value::as_array)
            .ok_or_else(|| EventLogError::BadQlog("missing events".into()))?;
        let mut events = Vec::with_capacity(raw_events.len());
        for ev in raw_events {
            let time_ms = ev
                .get("time")
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| EventLogError::BadQlog("event without time".into()))?;
            let data = ev
                .get("data")
                .ok_or_else(|| EventLogError::BadQlog("event without data".into()))?;
            let kind: EventKind = serde_json::from_value(data.clone())
                .map_err(|e| EventLogError::BadQlog(format!("event data: {e}")))?;
            events.push(ConnectionEvent {
                at_micros: (time_ms * 1000.0).round() as u64,
                kind,
            });
        }
        Ok(ConnectionEventLog {
            reference_unix_ms,
            events,
        })
    }

    pub fn write_qlog_file(&self, path: &Path, title: &str) -> Result<(), EventLogError> {
        let doc = self.to_qlog(title);
        let mut f = std::fs::File::create(path).map_err(|e| EventLogError::Io(e.to_string()))?;
        serde_json::to_writer_pretty(&mut f, &doc).map_err(|e| EventLogError::Io(e.to_string()))?;
        f.write_all(b"\n").map_err(|e| EventLogError::Io(e.to_string()))
    }

    pub fn read_qlog_file(path: &Path) -> Result<Self, EventLogError> {
        let raw = std::fs::read(path).map_err(|e| EventLogError::Io(e.to_string()))?;
        let doc: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| EventLogError::BadQlog(e.to_string()))?;
        Self::from_qlog(&doc)
    }
}

/// Monotonic recorder a live session appends to.
pub struct EventRecorder {
    t0: Instant,
    log: ConnectionEventLog,
}

impl EventRecorder {
    pub fn new() -> Self {
        EventRecorder {
            t0: Instant::now(),
            log: ConnectionEventLog {
                reference_unix_ms: chrono::Utc::now().timestamp_millis(),
                events: Vec::new(),
            },
        }
    }

    /// Record `kind` now; returns the event's offset in microseconds.
    pub fn record(&mut self, kind: EventKind) -> u64 {
        let at_micros = self.t0.elapsed().as_micros() as u64;
        self.log.events.push(ConnectionEvent { at_micros, kind });
        at_micros
    }

    pub fn elapsed_micros(&self) -> u64 {
        self.t0.elapsed().as_micros() as u64
    }

    pub fn log(&self) -> &ConnectionEventLog {
        &self.log
    }

    pub fn finish(self) -> ConnectionEventLog {
        self.log
    }
}

impl Default for EventRecorder {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> ConnectionEventLog {
        ConnectionEventLog {
            reference_unix_ms: 1_700_000_000_000,
            events: vec![
                ConnectionEvent { at_micros: 0, kind: EventKind::InitialSent { with_token: false } },
                ConnectionEvent { at_micros: 100_100, kind: EventKind::RetryRcvd },
                ConnectionEvent { at_micros: 100_200, kind: EventKind::InitialResent { with_token: true } },
                ConnectionEvent { at_micros: 200_300, kind: EventKind::HandshakeKeysAvailable },
                ConnectionEvent { at_micros: 200_350, kind: EventKind::CertificateRcvd { der_size: 800 } },
                ConnectionEvent { at_micros: 200_400, kind: EventKind::HandshakeConfirmed },
                ConnectionEvent { at_micros: 200_450, kind: EventKind::StreamOpened },
                ConnectionEvent { at_micros: 300_500, kind: EventKind::NewTokenRcvd },
                ConnectionEvent { at_micros: 300_600, kind: EventKind::DnsResponseRcvd },
                ConnectionEvent { at_micros: 300_700, kind: EventKind::ConnectionClosed { code: 0 } },
            ],
        }
    }

    #[test]
    fn valid_log_passes_invariants() {
        sample_log().validate().unwrap();
    }

    #[test]
    fn invariant_violations_detected() {
        let mut log = sample_log();
        log.events[3].at_micros = 1;
        assert_eq!(log.validate(), Err(EventLogError::TimestampOrder(3)));

        let mut log = sample_log();
        log.events.push(ConnectionEvent {
            at_micros: 400_000,
            kind: EventKind::RetryRcvd,
        });
        assert!(matches!(log.validate(), Err(EventLogError::DuplicateRestart(_))));

        let mut log = sample_log();
        log.events[5].kind = EventKind::StreamOpened;
        log.events[6].kind = EventKind::HandshakeConfirmed;
        assert_eq!(log.validate(), Err(EventLogError::ConfirmAfterStream));
    }

    #[test]
    fn qlog_roundtrip_is_lossless() {
        let log = sample_log();
        let doc = log.to_qlog("test-conn");
        assert_eq!(doc["qlog_version"], "0.3");
        assert_eq!(doc["traces"][0]["events"][1]["name"], "transport:packet_received");
        let back = ConnectionEventLog::from_qlog(&doc).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn qlog_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conn.qlog.json");
        let log = sample_log();
        log.write_qlog_file(&path, "conn").unwrap();
        let back = ConnectionEventLog::read_qlog_file(&path).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn recorder_timestamps_are_monotonic() {
        let mut rec = EventRecorder::new();
        rec.record(EventKind::InitialSent { with_token: false });
        std::thread::sleep(std::time::Duration::from_millis(2));
        rec.record(EventKind::HandshakeConfirmed);
        let log = rec.finish();
        log.validate().unwrap();
        assert!(log.events[1].at_micros >= 2000);
    }
}
