//! Server side of the model QUIC/DoQ protocol.
//!
//! One `DoqServerConn` per client socket address. Behavior injection points:
//! Retry policy, NEW_TOKEN issuance, amplification-limit enforcement mode,
//! certificate profile (flight size), served versions/ALPNs, 0-RTT
//! acceptance, and stream-reset fault injection.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::quic::handshake::{ClientHello, ServerHello, CLIENT_FINISHED, SERVER_FINISHED};
use crate::quic::packet::{
    build_retry, build_version_negotiation, encode_packet, parse_datagram, Packet, PacketType,
    ParsedDatagram,
};
use crate::quic::token::{now_unix, TokenKind, TokenMinter};
use crate::quic::{Frame, MIN_INITIAL_DATAGRAM};

use super::zone::ZoneAnswerer;
use super::{RetryMode, TestbedBehavior};

/// QUIC transport error code for a TLS `no_application_protocol` alert.
pub const CLOSE_ALPN_FAILURE: u64 = 0x178;
pub const CLOSE_NO_ERROR: u64 = 0x0;

/// Crypto chunk size per handshake packet; keeps each flight datagram within
/// the model MTU.
const CRYPTO_CHUNK: usize = 1100;
const TOKEN_MAX_AGE: Duration = Duration::from_secs(3600);

/// How a connection's client address ended up validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidatedBy {
    NewTokenToken,
    RetryToken,
    SecondFlight,
}

/// Per-connection byte counters and outcomes, emitted as JSON-lines for
/// oracle checks.
#[derive(Debug, Clone, Serialize)]
pub struct DoqConnRecord {
    pub proto: String,
    pub peer: SocketAddr,
    pub quic_version: u32,
    pub alpn: Option<String>,
    pub sni: Option<String>,
    pub validated_by: Option<ValidatedBy>,
    pub stalled: bool,
    pub bytes_rx: usize,
    pub bytes_tx: usize,
    /// Bytes sent while the amplification budget was active.
    pub tx_while_budgeted: usize,
    /// Bytes received when the budget was last consulted.
    pub rx_at_budget: usize,
    pub retry_sent: bool,
    pub vn_sent: bool,
    pub early_data_accepted: Option<bool>,
    pub queries_answered: u32,
    pub close_code: Option<u64>,
}

/// State shared by every DoQ endpoint of one testbed instance.
pub struct DoqShared {
    pub minter: TokenMinter,
    pub validated_addrs: Mutex<HashSet<std::net::IpAddr>>,
    pub tickets: Mutex<HashSet<Vec<u8>>>,
}

impl DoqShared {
    pub fn new() -> Self {
        DoqShared {
            minter: TokenMinter::new(),
            validated_addrs: Mutex::new(HashSet::new()),
            tickets: Mutex::new(HashSet::new()),
        }
    }
}

impl Default for DoqShared {
    fn default() -> Self {
        Self::new()
    }
}

struct StreamBuf {
    data: Vec<u8>,
    fin: bool,
    answered: bool,
}

pub struct DoqServerConn {
    peer: SocketAddr,
    version: u32,
    client_scid: Vec<u8>,
    our_cid: Vec<u8>,
    alpn: Option<String>,
    sni: Option<String>,
    framing_prefix: bool,

    validated_by: Option<ValidatedBy>,
    budget_active: bool,
    bytes_rx: usize,
    bytes_tx: usize,
    tx_while_budgeted: usize,
    rx_at_budget: usize,
    stalled: bool,
    flight_started: bool,
    pending: Vec<Vec<u8>>,

    handshake_complete: bool,
    post_handshake_sent: bool,
    early_data_accepted: Option<bool>,
    early_streams: Vec<(u64, Vec<u8>)>,
    streams: HashMap<u64, StreamBuf>,
    queries_answered: u32,
    retry_sent: bool,
    vn_sent: bool,
    close_code: Option<u64>,
    pub last_active: Instant,
    pub done: bool,
}

impl DoqServerConn {
    pub fn new(peer: SocketAddr) -> Self {
        DoqServerConn {
            peer,
            version: 0,
            client_scid: Vec::new(),
            our_cid: rand::random::<[u8; 8]>().to_vec(),
            alpn: None,
            sni: None,
            framing_prefix: true,
            validated_by: None,
            budget_active: false,
            bytes_rx: 0,
            bytes_tx: 0,
            tx_while_budgeted: 0,
            rx_at_budget: 0,
            stalled: false,
            flight_started: false,
            pending: Vec::new(),
            handshake_complete: false,
            post_handshake_sent: false,
            early_data_accepted: None,
            early_streams: Vec::new(),
            streams: HashMap::new(),
            queries_answered: 0,
            retry_sent: false,
            vn_sent: false,
            close_code: None,
            last_active: Instant::now(),
            done: false,
        }
    }

    pub fn record(&self) -> DoqConnRecord {
        DoqConnRecord {
            proto: "doq".into(),
            peer: self.peer,
            quic_version: self.version,
            alpn: self.alpn.clone(),
            sni: self.sni.clone(),
            validated_by: self.validated_by,
            stalled: self.stalled,
            bytes_rx: self.bytes_rx,
            bytes_tx: self.bytes_tx,
            tx_while_budgeted: self.tx_while_budgeted,
            rx_at_budget: self.rx_at_budget,
            retry_sent: self.retry_sent,
            vn_sent: self.vn_sent,
            early_data_accepted: self.early_data_accepted,
            queries_answered: self.queries_answered,
            close_code: self.close_code,
        }
    }

    /// Process one inbound datagram; returns datagrams to send.
    pub fn on_datagram(
        &mut self,
        bytes: &[u8],
        behavior: &TestbedBehavior,
        shared: &DoqShared,
        zone: &ZoneAnswerer,
    ) -> Vec<(SocketAddr, Vec<u8>)> {
        self.last_active = Instant::now();
        self.bytes_rx += bytes.len();
        let mut out: Vec<Vec<u8>> = Vec::new();

        let parsed = match parse_datagram(bytes) {
            Ok(p) => p,
            Err(_) => return Vec::new(),
        };

        match parsed {
            ParsedDatagram::VersionZero { dcid, scid, .. } => {
                // Discovery probe: answer statelessly iff padded to the
                // Initial minimum, echoing the connection ids swapped.
                if bytes.len() >= MIN_INITIAL_DATAGRAM {
                    self.vn_sent = true;
                    out.push(build_version_negotiation(
                        &scid,
                        &dcid,
                        &behavior.quic_versions_served,
                    ));
                }
            }
            ParsedDatagram::Packet(pkt) => match pkt.ptype {
                PacketType::Initial => self.on_initial(pkt, bytes.len(), behavior, shared, &mut out),
                PacketType::Handshake => self.on_client_handshake(pkt, behavior, shared, zone, &mut out),
                PacketType::ZeroRtt => self.on_zero_rtt(pkt),
                PacketType::OneRtt => self.on_one_rtt(pkt, behavior, zone, &mut out),
                PacketType::Retry => {} // clients never send Retry
            },
        }

        self.flush(&mut out);
        out.into_iter().map(|b| (self.peer, b)).collect()
    }

    fn on_initial(
        &mut self,
        pkt: Packet,
        datagram_len: usize,
        behavior: &TestbedBehavior,
        shared: &DoqShared,
        out: &mut Vec<Vec<u8>>,
    ) {
        if datagram_len < MIN_INITIAL_DATAGRAM {
            return; // RFC 9000 §14.1: drop undersized client Initials
        }
        if !behavior.quic_versions_served.contains(&pkt.version) {
            self.vn_sent = true;
            out.push(build_version_negotiation(
                &pkt.scid,
                &pkt.dcid,
                &behavior.quic_versions_served,
            ));
            return;
        }
        if self.flight_started {
            return; // duplicate Initial after the flight is underway
        }

        let hello = pkt.frames.iter().find_map(|f| match f {
            Frame::Crypto { offset: 0, data } => ClientHello::decode(data).ok(),
            _ => None,
        });
        let Some(hello) = hello else { return };

        self.version = pkt.version;
        self.client_scid = pkt.scid.clone();
        self.sni = hello.sni.clone();

        // ALPN selection honors the client's preference order.
        let chosen = hello
            .alpns
            .iter()
            .find(|a| behavior.alpns_served.iter().any(|s| s == *a))
            .cloned();
        let Some(alpn) = chosen else {
            self.close_code = Some(CLOSE_ALPN_FAILURE);
            self.done = true;
            let close = Packet::initial(
                pkt.version,
                &pkt.scid,
                &self.our_cid,
                &[],
                vec![Frame::ConnectionClose {
                    code: CLOSE_ALPN_FAILURE,
                    reason: "no shared application protocol".into(),
                }],
            );
            out.push(encode_packet(&close, None));
            return;
        };

        let token_kind = if pkt.token.is_empty() {
            None
        } else {
            shared
                .minter
                .validate(&pkt.token, self.peer.ip(), now_unix(), TOKEN_MAX_AGE)
        };
        let needs_retry = match behavior.retry_mode {
            RetryMode::Never => false,
            RetryMode::Always => token_kind.is_none(),
            RetryMode::FirstContactOnly => {
                token_kind.is_none()
                    && !shared.validated_addrs.lock().unwrap().contains(&self.peer.ip())
            }
        };
        if needs_retry {
            self.retry_sent = true;
            let token = shared.minter.mint(TokenKind::Retry, self.peer.ip(), now_unix());
            out.push(build_retry(pkt.version, &pkt.scid, &self.our_cid, &token));
            return;
        }

        self.validated_by = token_kind.map(|k| match k {
            TokenKind::Retry => ValidatedBy::RetryToken,
            TokenKind::NewToken => ValidatedBy::NewTokenToken,
        });
        if self.validated_by.is_some() {
            shared.validated_addrs.lock().unwrap().insert(self.peer.ip());
        }

        // Amplification budget: conformant mode caps an unvalidated address;
        // enforcement mode keeps the cap until the client's next flight even
        // though the address is already validated.
        self.budget_active = if behavior.enforce_amplification_after_validation {
            true
        } else {
            self.validated_by.is_none()
        };

        let accept_early = behavior.zero_rtt
            && hello.early_data
            && hello
                .resumption_ticket
                .as_ref()
                .is_some_and(|t| shared.tickets.lock().unwrap().contains(t));
        if hello.early_data {
            self.early_data_accepted = Some(accept_early);
        }

        self.alpn = Some(alpn.clone());
        self.framing_prefix = crate::doq::framing_for_alpn(&alpn).length_prefixed();
        self.flight_started = true;

        // Crypto stream: ServerHello || certificate DER || finished marker.
        let sh = ServerHello {
            alpn,
            early_data_accepted: accept_early,
            cert_len: behavior.cert_der.len() as u32,
        };
        let mut crypto = sh.encode();
        crypto.extend_from_slice(&behavior.cert_der);
        crypto.push(SERVER_FINISHED);

        let first_chunk_len = crypto.len().min(CRYPTO_CHUNK);
        let initial_pkt = Packet::initial(
            self.version,
            &self.client_scid,
            &self.our_cid,
            &[],
            vec![
                Frame::Ack { largest: 0 },
                Frame::Crypto {
                    offset: 0,
                    data: crypto[..first_chunk_len].to_vec(),
                },
            ],
        );
        self.pending.push(encode_packet(&initial_pkt, None));
        let mut offset = first_chunk_len;
        while offset < crypto.len() {
            let end = (offset + CRYPTO_CHUNK).min(crypto.len());
            let hs = Packet::handshake(
                self.version,
                &self.client_scid,
                &self.our_cid,
                vec![Frame::Crypto {
                    offset: offset as u64,
                    data: crypto[offset..end].to_vec(),
                }],
            );
            self.pending.push(encode_packet(&hs, None));
            offset = end;
        }

        if accept_early {
            let early = std::mem::take(&mut self.early_streams);
            for (stream_id, data) in early {
                self.answer_stream(stream_id, &data, behavior, zone);
            }
        }
    }

    fn on_client_handshake(
        &mut self,
        pkt: Packet,
        behavior: &TestbedBehavior,
        shared: &DoqShared,
        zone: &ZoneAnswerer,
        _out: &mut [Vec<u8>],
    ) {
        if !self.flight_started {
            return;
        }
        // Any client packet past the Initial both releases the budget and
        // validates the address implicitly.
        if self.budget_active {
            self.budget_active = false;
        }
        if self.validated_by.is_none() {
            self.validated_by = Some(ValidatedBy::SecondFlight);
            shared.validated_addrs.lock().unwrap().insert(self.peer.ip());
        }
        let finished = pkt.frames.iter().any(|f| {
            matches!(f, Frame::Crypto { data, .. } if data.contains(&CLIENT_FINISHED))
        });
        if finished && !self.handshake_complete {
            self.handshake_complete = true;
            self.send_post_handshake(behavior, shared);
            // Answer any early streams that arrived before the finished but
            // were rejected for 0-RTT: the client will resend instead, so
            // nothing to do here.
            let _ = zone;
        }
    }

    fn on_zero_rtt(&mut self, pkt: Packet) {
        // Buffered until the Initial decides acceptance; dropped when 0-RTT
        // is rejected (the client retransmits on a regular stream).
        for f in pkt.frames {
            if let Frame::Stream { id, data, fin, .. } = f {
                if fin {
                    if self.flight_started && self.early_data_accepted != Some(true) {
                        continue;
                    }
                    self.early_streams.push((id, data));
                }
            }
        }
    }

    fn on_one_rtt(
        &mut self,
        pkt: Packet,
        behavior: &TestbedBehavior,
        zone: &ZoneAnswerer,
        _out: &mut [Vec<u8>],
    ) {
        if self.budget_active {
            self.budget_active = false;
        }
        for f in pkt.frames {
            match f {
                Frame::Stream { id, offset, fin, data } => {
                    let buf = self.streams.entry(id).or_insert_with(|| StreamBuf {
                        data: Vec::new(),
                        fin: false,
                        answered: false,
                    });
                    let offset = offset as usize;
                    if buf.data.len() < offset + data.len() {
                        buf.data.resize(offset + data.len(), 0);
                    }
                    buf.data[offset..offset + data.len()].copy_from_slice(&data);
                    buf.fin |= fin;
                    if buf.fin && !buf.answered {
                        buf.answered = true;
                        let stream_data = buf.data.clone();
                        self.answer_stream(id, &stream_data, behavior, zone);
                    }
                }
                Frame::ConnectionClose { code, .. } => {
                    self.close_code = Some(code);
                    self.done = true;
                }
                _ => {}
            }
        }
    }

    /// HANDSHAKE_DONE plus optional NEW_TOKEN and the resumption ticket.
    fn send_post_handshake(&mut self, behavior: &TestbedBehavior, shared: &DoqShared) {
        if self.post_handshake_sent {
            return;
        }
        self.post_handshake_sent = true;
        let mut frames = vec![Frame::HandshakeDone];
        if behavior.issue_new_token {
            frames.push(Frame::NewToken {
                token: shared.minter.mint(TokenKind::NewToken, self.peer.ip(), now_unix()),
            });
        }
        let ticket = rand::random::<[u8; 16]>().to_vec();
        shared.tickets.lock().unwrap().insert(ticket.clone());
        frames.push(Frame::SessionTicket { ticket });
        let pkt = Packet::one_rtt(&self.client_scid, frames);
        self.pending.push(encode_packet(&pkt, None));
    }

    /// Decode a DoQ query stream, answer it on the same stream id.
    fn answer_stream(&mut self, stream_id: u64, data: &[u8], behavior: &TestbedBehavior, zone: &ZoneAnswerer) {
        if behavior.doq_reset_stream {
            let pkt = Packet::one_rtt(
                &self.client_scid,
                vec![Frame::Stream {
                    id: stream_id,
                    offset: 0,
                    fin: true,
                    data: Vec::new(),
                }],
            );
            self.pending.push(encode_packet(&pkt, None));
            return;
        }
        let query_bytes = if self.framing_prefix {
            if data.len() < 2 {
                return;
            }
            let len = usize::from(u16::from_be_bytes([data[0], data[1]]));
            match data.get(2..2 + len) {
                Some(b) => b,
                None => return,
            }
        } else {
            data
        };
        // edns-tcp-keepalive is a TCP-session option; never echoed here.
        let Some(response) = zone.answer_bytes(query_bytes, false, None) else {
            return;
        };
        let framed = if self.framing_prefix {
            let mut v = Vec::with_capacity(2 + response.len());
            v.extend_from_slice(&(response.len() as u16).to_be_bytes());
            v.extend_from_slice(&response);
            v
        } else {
            response
        };
        self.queries_answered += 1;
        let pkt = Packet::one_rtt(
            &self.client_scid,
            vec![Frame::Stream {
                id: stream_id,
                offset: 0,
                fin: true,
                data: framed,
            }],
        );
        self.pending.push(encode_packet(&pkt, None));
    }

    /// Send pending datagrams as far as the amplification budget allows.
    fn flush(&mut self, out: &mut Vec<Vec<u8>>) {
        while let Some(next) = self.pending.first() {
            if self.budget_active {
                let budget = crate::cert::AMPLIFICATION_FACTOR * self.bytes_rx;
                if self.bytes_tx + next.len() > budget {
                    self.stalled = true;
                    self.rx_at_budget = self.bytes_rx;
                    break;
                }
                self.tx_while_budgeted += next.len();
            }
            let dgram = self.pending.remove(0);
            self.bytes_tx += dgram.len();
            out.push(dgram);
        }
    }
}
