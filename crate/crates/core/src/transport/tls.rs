//! Record-layer handshake over a lab stream.
//!
//! Reproduces the round-trip shape of TLS session establishment: one flight
//! pair for 1.3 (ClientHello -> ServerHello+certificate, client may send
//! data immediately after), two for 1.2 (adds ClientKeyExchange ->
//! ServerFinished). Version preference is client-ordered, server-constrained,
//! matching how the measurement clients offer 1.3 first.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::segment::{StreamClient, TransportError};

pub const TLS12: u16 = 0x0303;
pub const TLS13: u16 = 0x0304;

const REC_CLIENT_HELLO: u8 = 0x01;
const REC_SERVER_HELLO: u8 = 0x02;
const REC_CLIENT_FINISHED: u8 = 0x03;
const REC_CLIENT_KEY_EXCHANGE: u8 = 0x05;
const REC_SERVER_FINISHED: u8 = 0x06;
const REC_APP_DATA: u8 = 0x17;

const MAX_RECORD: usize = 60_000;

/// Negotiated TLS version as recorded on measurement results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlsVersion {
    V12,
    V13,
}

impl TlsVersion {
    pub fn wire(self) -> u16 {
        match self {
            TlsVersion::V12 => TLS12,
            TlsVersion::V13 => TLS13,
        }
    }

    pub fn from_wire(code: u16) -> Option<Self> {
        match code {
            TLS12 => Some(TlsVersion::V12),
            TLS13 => Some(TlsVersion::V13),
            _ => None,
        }
    }
}

impl fmt::Display for TlsVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TlsVersion::V12 => f.write_str("1.2"),
            TlsVersion::V13 => f.write_str("1.3"),
        }
    }
}

fn encode_record(rtype: u8, body: &[u8]) -> Vec<u8> {
    assert!(body.len() <= MAX_RECORD);
    let mut buf = Vec::with_capacity(3 + body.len());
    buf.push(rtype);
    buf.extend_from_slice(&(body.len() as u16).to_be_bytes());
    buf.extend_from_slice(body);
    buf
}

/// Length of the complete record at the head of `bytes`, when present.
fn record_len(bytes: &[u8]) -> Option<usize> {
    if bytes.len() < 3 {
        return None;
    }
    let len = usize::from(u16::from_be_bytes([bytes[1], bytes[2]]));
    if bytes.len() < 3 + len {
        None
    } else {
        Some(3 + len)
    }
}

fn encode_client_hello(versions: &[u16], sni: Option<&str>) -> Vec<u8> {
    let mut body = vec![versions.len() as u8];
    for v in versions {
        body.extend_from_slice(&v.to_be_bytes());
    }
    let sni = sni.unwrap_or("");
    body.push(sni.len() as u8);
    body.extend_from_slice(sni.as_bytes());
    encode_record(REC_CLIENT_HELLO, &body)
}

fn decode_client_hello(body: &[u8]) -> Option<(Vec<u16>, Option<String>)> {
    let count = usize::from(*body.first()?);
    let mut pos = 1;
    let mut versions = Vec::with_capacity(count);
    for _ in 0..count {
        let b = body.get(pos..pos + 2)?;
        versions.push(u16::from_be_bytes([b[0], b[1]]));
        pos += 2;
    }
    let sni_len = usize::from(*body.get(pos)?);
    pos += 1;
    let sni_bytes = body.get(pos..pos + sni_len)?;
    let sni = if sni_len == 0 {
        None
    } else {
        Some(String::from_utf8_lossy(sni_bytes).into_owned())
    };
    Some((versions, sni))
}

fn encode_server_hello(version: u16, cert: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(6 + cert.len());
    body.extend_from_slice(&version.to_be_bytes());
    body.extend_from_slice(&(cert.len() as u32).to_be_bytes());
    body.extend_from_slice(cert);
    encode_record(REC_SERVER_HELLO, &body)
}

fn decode_server_hello(body: &[u8]) -> Option<(u16, Vec<u8>)> {
    let version = u16::from_be_bytes([*body.first()?, *body.get(1)?]);
    let len = u32::from_be_bytes([*body.get(2)?, *body.get(3)?, *body.get(4)?, *body.get(5)?]) as usize;
    let cert = body.get(6..6 + len)?;
    Some((version, cert.to_vec()))
}

/// Client side: session facade over an established stream.
pub struct TlsClient {
    stream: StreamClient,
    pub version: TlsVersion,
    pub peer_cert_der: Vec<u8>,
    app_in: Vec<u8>,
    app_read: usize,
}

impl TlsClient {
    /// Run the handshake, preferring TLS 1.3. Completes, from the client's
    /// view, on receipt of the server's first flight for 1.3 and on
    /// ServerFinished for 1.2.
    pub fn handshake(
        mut stream: StreamClient,
        sni: Option<&str>,
        deadline: Instant,
    ) -> Result<TlsClient, TransportError> {
        stream.send_bytes(&encode_client_hello(&[TLS13, TLS12], sni))?;
        let rec = stream.read_delimited(deadline, record_len)?;
        if rec[0] != REC_SERVER_HELLO {
            return Err(TransportError::Closed);
        }
        let (version_code, cert) = decode_server_hello(&rec[3..]).ok_or(TransportError::Closed)?;
        let version = TlsVersion::from_wire(version_code).ok_or(TransportError::Closed)?;
        match version {
            TlsVersion::V13 => {
                stream.send_bytes(&encode_record(REC_CLIENT_FINISHED, &[]))?;
            }
            TlsVersion::V12 => {
                stream.send_bytes(&encode_record(REC_CLIENT_KEY_EXCHANGE, &[]))?;
                let rec = stream.read_delimited(deadline, record_len)?;
                if rec[0] != REC_SERVER_FINISHED {
                    return Err(TransportError::Closed);
                }
            }
        }
        Ok(TlsClient {
            stream,
            version,
            peer_cert_der: cert,
            app_in: Vec::new(),
            app_read: 0,
        })
    }

    pub fn send_app(&mut self, data: &[u8]) -> Result<(), TransportError> {
        for chunk in data.chunks(MAX_RECORD) {
            self.stream.send_bytes(&encode_record(REC_APP_DATA, chunk))?;
        }
        Ok(())
    }

    fn buffered(&self) -> &[u8] {
        &self.app_in[self.app_read..]
    }

    /// Consume exactly `n` application bytes.
    pub fn read_app_exact(&mut self, n: usize, deadline: Instant) -> Result<Vec<u8>, TransportError> {
        while self.buffered().len() < n {
            self.pump_app(deadline)?;
        }
        let out = self.app_in[self.app_read..self.app_read + n].to_vec();
        self.app_read += n;
        Ok(out)
    }

    /// Consume a complete item recognized by `probe` (same contract as
    /// [`StreamClient::read_delimited`], over decrypted bytes).
    pub fn read_app_delimited(
        &mut self,
        deadline: Instant,
        probe: impl Fn(&[u8]) -> Option<usize>,
    ) -> Result<Vec<u8>, TransportError> {
        loop {
            if let Some(len) = probe(self.buffered()) {
                return self.read_app_exact(len, deadline);
            }
            self.pump_app(deadline)?;
        }
    }

    fn pump_app(&mut self, deadline: Instant) -> Result<(), TransportError> {
        let rec = self.stream.read_delimited(deadline, record_len)?;
        if rec[0] == REC_APP_DATA {
            self.app_in.extend_from_slice(&rec[3..]);
        }
        Ok(())
    }

    pub fn close(self) {
        self.stream.close();
    }
}

#[derive(Debug, Clone)]
pub struct TlsServerConfig {
    /// Versions the server is willing to negotiate.
    pub versions: Vec<TlsVersion>,
    pub cert_der: Vec<u8>,
}

#[derive(Debug, Default)]
enum TlsServerState {
    #[default]
    AwaitClientHello,
    AwaitKeyExchange,
    Established,
}

/// Server side: byte-stream state machine driven by the testbed.
#[derive(Debug, Default)]
pub struct TlsServerConn {
    state: TlsServerState,
    buf: Vec<u8>,
    pub negotiated: Option<TlsVersion>,
    pub sni: Option<String>,
}

impl TlsServerConn {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed stream bytes; returns (bytes to send, new application bytes).
    pub fn on_bytes(&mut self, bytes: &[u8], cfg: &TlsServerConfig) -> (Vec<u8>, Vec<u8>) {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut app = Vec::new();
        while let Some(len) = record_len(&self.buf) {
            let rec: Vec<u8> = self.buf.drain(..len).collect();
            let (rtype, body) = (rec[0], &rec[3..]);
            match (&self.state, rtype) {
                (TlsServerState::AwaitClientHello, REC_CLIENT_HELLO) => {
                    let Some((offered, sni)) = decode_client_hello(body) else {
                        continue;
                    };
                    self.sni = sni;
                    let chosen = offered
                        .iter()
                        .filter_map(|code| TlsVersion::from_wire(*code))
                        .find(|v| cfg.versions.contains(v));
                    match chosen {
                        Some(v) => {
                            self.negotiated = Some(v);
                            out.extend_from_slice(&encode_server_hello(v.wire(), &cfg.cert_der));
                            self.state = match v {
                                TlsVersion::V13 => TlsServerState::Established,
                                TlsVersion::V12 => TlsServerState::AwaitKeyExchange,
                            };
                        }
                        None => {
                            // No shared version: stay silent, client times out.
                        }
                    }
                }
                (TlsServerState::AwaitKeyExchange, REC_CLIENT_KEY_EXCHANGE) => {
                    out.extend_from_slice(&encode_record(REC_SERVER_FINISHED, &[]));
                    self.state = TlsServerState::Established;
                }
                (_, REC_CLIENT_FINISHED) => {}
                (TlsServerState::Established, REC_APP_DATA) => app.extend_from_slice(body),
                _ => {}
            }
        }
        (out, app)
    }

    pub fn wrap_app(&self, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for chunk in data.chunks(MAX_RECORD) {
            out.extend_from_slice(&encode_record(REC_APP_DATA, chunk));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_framing() {
        let rec = encode_record(REC_APP_DATA, b"abc");
        assert_eq!(record_len(&rec), Some(6));
        assert_eq!(record_len(&rec[..2]), None);
        assert_eq!(record_len(&rec[..5]), None);
    }

    #[test]
    fn hello_codecs_roundtrip() {
        let ch = encode_client_hello(&[TLS13, TLS12], Some("dns.example"));
        let (versions, sni) = decode_client_hello(&ch[3..]).unwrap();
        assert_eq!(versions, vec![TLS13, TLS12]);
        assert_eq!(sni.as_deref(), Some("dns.example"));

        let sh = encode_server_hello(TLS13, &[7; 900]);
        let (v, cert) = decode_server_hello(&sh[3..]).unwrap();
        assert_eq!(v, TLS13);
        assert_eq!(cert.len(), 900);
    }

    #[test]
    fn server_negotiates_client_preference_within_its_set() {
        let cfg = TlsServerConfig {
            versions: vec![TlsVersion::V12],
            cert_der: vec![1, 2, 3],
        };
        let mut conn = TlsServerConn::new();
        let (out, _) = conn.on_bytes(&encode_client_hello(&[TLS13, TLS12], None), &cfg);
        assert_eq!(conn.negotiated, Some(TlsVersion::V12));
        assert_eq!(out[0], REC_SERVER_HELLO);

        let cfg13 = TlsServerConfig {
            versions: vec![TlsVersion::V13, TlsVersion::V12],
            cert_der: vec![1],
        };
        let mut conn = TlsServerConn::new();
        conn.on_bytes(&encode_client_hello(&[TLS13, TLS12], None), &cfg13);
        assert_eq!(conn.negotiated, Some(TlsVersion::V13));
    }

    #[test]
    fn tls12_requires_key_exchange_before_app_data() {
        let cfg = TlsServerConfig {
            versions: vec![TlsVersion::V12],
            cert_der: vec![0; 10],
        };
        let mut conn = TlsServerConn::new();
        conn.on_bytes(&encode_client_hello(&[TLS12], None), &cfg);
        let (out, app) = conn.on_bytes(&encode_record(REC_CLIENT_KEY_EXCHANGE, &[]), &cfg);
        assert_eq!(out[0], REC_SERVER_FINISHED);
        assert!(app.is_empty());
        let (_, app) = conn.on_bytes(&conn.wrap_app(b"ping").clone(), &cfg);
        // wrap_app produces records the peer would send; feeding them back in
        // simulates client app data.
        assert_eq!(app, b"ping");
    }
}
