//! Connection-oriented segment protocol over UDP.
//!
//! Wire layout: magic(1) | flags(1) | seq(u32) | ack(u32) | opt_len(1) |
//! options | payload. A connection opens with SYN / SYN+ACK / ACK; the SYN
//! carries a randomized sequence number and may request a fast-open cookie
//! (RFC 7413 semantics). Data segments use 0-based per-direction stream
//! offsets in `seq`; receivers reassemble out-of-order segments. Segments are
//! never retransmitted: a lost packet surfaces as a timeout, like every other
//! single-shot measurement in the toolkit.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use rand::Rng;

pub const SEGMENT_MAGIC: u8 = 0x54;
/// Maximum payload bytes per segment.
pub const MSS: usize = 1200;

pub const FLAG_SYN: u8 = 0x01;
pub const FLAG_ACK: u8 = 0x02;
pub const FLAG_FIN: u8 = 0x04;
pub const FLAG_RST: u8 = 0x08;
pub const FLAG_TFO_REQ: u8 = 0x10;
pub const FLAG_TFO_GRANT: u8 = 0x20;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("timeout")]
    Timeout,
    #[error("connection refused")]
    Refused,
    #[error("connection reset by peer")]
    Reset,
    #[error("stream closed before enough data arrived")]
    Closed,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub flags: u8,
    pub seq: u32,
    pub ack: u32,
    pub options: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Segment {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(11 + self.options.len() + self.payload.len());
        buf.push(SEGMENT_MAGIC);
        buf.push(self.flags);
        buf.extend_from_slice(&self.seq.to_be_bytes());
        buf.extend_from_slice(&self.ack.to_be_bytes());
        buf.push(self.options.len() as u8);
        buf.extend_from_slice(&self.options);
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Option<Segment> {
        if bytes.len() < 11 || bytes[0] != SEGMENT_MAGIC {
            return None;
        }
        let opt_len = usize::from(bytes[10]);
        let payload_start = 11 + opt_len;
        if bytes.len() < payload_start {
            return None;
        }
        Some(Segment {
            flags: bytes[1],
            seq: u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]),
            ack: u32::from_be_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]),
            options: bytes[11..payload_start].to_vec(),
            payload: bytes[payload_start..].to_vec(),
        })
    }

    fn data(seq: u32, payload: Vec<u8>) -> Segment {
        Segment {
            flags: 0,
            seq,
            ack: 0,
            options: Vec::new(),
            payload,
        }
    }
}

/// Result of the SYN exchange alone, shared by `connect` and the RTT/TFO
/// probes.
#[derive(Debug)]
pub struct SynExchange {
    pub sock: UdpSocket,
    pub syn_rtt: Duration,
    pub tfo_granted: bool,
    pub server_isn: u32,
}

/// Send a SYN from a fresh ephemeral-port socket and wait for the SYN+ACK.
pub fn syn_exchange(
    peer: SocketAddr,
    timeout: Duration,
    request_tfo: bool,
) -> Result<SynExchange, TransportError> {
    let sock = crate::util::bind_random_udp(local_bind_ip(peer))?;
    sock.connect(peer)?;
    let isn: u32 = rand::rng().random();
    let mut flags = FLAG_SYN;
    if request_tfo {
        flags |= FLAG_TFO_REQ;
    }
    let syn = Segment {
        flags,
        seq: isn,
        ack: 0,
        options: Vec::new(),
        payload: Vec::new(),
    };
    let started = Instant::now();
    sock.send(&syn.encode())?;
    let deadline = started + timeout;
    let mut buf = [0u8; 2048];
    loop {
        let remaining = deadline
            .checked_duration_since(Instant::now())
            .ok_or(TransportError::Timeout)?;
        sock.set_read_timeout(Some(remaining))?;
        match sock.recv(&mut buf) {
            Ok(n) => {
                let Some(seg) = Segment::decode(&buf[..n]) else {
                    continue;
                };
                if seg.flags & FLAG_RST != 0 {
                    return Err(TransportError::Reset);
                }
                if seg.flags & FLAG_SYN != 0 && seg.flags & FLAG_ACK != 0 && seg.ack == isn.wrapping_add(1) {
                    return Ok(SynExchange {
                        syn_rtt: started.elapsed(),
                        tfo_granted: seg.flags & FLAG_TFO_GRANT != 0,
                        server_isn: seg.seq,
                        sock,
                    });
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                return Err(TransportError::Timeout)
            }
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => return Err(TransportError::Refused),
            Err(e) => return Err(TransportError::Io(e)),
        }
    }
}

fn local_bind_ip(peer: SocketAddr) -> IpAddr {
    match peer.ip() {
        IpAddr::V4(ip) if ip.is_loopback() => IpAddr::V4(Ipv4Addr::LOCALHOST),
        IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::UNSPECIFIED),
        IpAddr::V6(_) => IpAddr::V6(std::net::Ipv6Addr::UNSPECIFIED),
    }
}

#[derive(Debug)]
pub struct ConnectOutcome {
    pub stream: StreamClient,
    /// SYN to SYN+ACK interval: the connection-establishment round trip.
    pub syn_rtt: Duration,
    pub tfo_granted: bool,
}

/// Open a connection: SYN, SYN+ACK, ACK.
pub fn connect(peer: SocketAddr, timeout: Duration, request_tfo: bool) -> Result<ConnectOutcome, TransportError> {
    let ex = syn_exchange(peer, timeout, request_tfo)?;
    let ack = Segment {
        flags: FLAG_ACK,
        seq: 0,
        ack: ex.server_isn.wrapping_add(1),
        options: Vec::new(),
        payload: Vec::new(),
    };
    ex.sock.send(&ack.encode())?;
    Ok(ConnectOutcome {
        stream: StreamClient {
            sock: ex.sock,
            send_off: 0,
            recv_next: 0,
            ooo: BTreeMap::new(),
            inbox: Vec::new(),
            inbox_read: 0,
            peer_fin: false,
        },
        syn_rtt: ex.syn_rtt,
        tfo_granted: ex.tfo_granted,
    })
}

/// Client half of an established connection: ordered byte stream both ways.
#[derive(Debug)]
pub struct StreamClient {
    sock: UdpSocket,
    send_off: u32,
    recv_next: u32,
    ooo: BTreeMap<u32, Vec<u8>>,
    inbox: Vec<u8>,
    inbox_read: usize,
    peer_fin: bool,
}

impl StreamClient {
    pub fn send_bytes(&mut self, data: &[u8]) -> Result<(), TransportError> {
        for chunk in data.chunks(MSS) {
            let seg = Segment::data(self.send_off, chunk.to_vec());
            self.sock.send(&seg.encode())?;
            self.send_off = self.send_off.wrapping_add(chunk.len() as u32);
        }
        Ok(())
    }

    /// Bytes buffered and not yet consumed.
    pub fn available(&self) -> usize {
        self.inbox.len() - self.inbox_read
    }

    /// Block until at least `n` in-order bytes are available, then consume
    /// them.
    pub fn read_exact(&mut self, n: usize, deadline: Instant) -> Result<Vec<u8>, TransportError> {
        while self.available() < n {
            if self.peer_fin {
                return Err(TransportError::Closed);
            }
            self.pump(deadline)?;
        }
        let out = self.inbox[self.inbox_read..self.inbox_read + n].to_vec();
        self.inbox_read += n;
        Ok(out)
    }

    /// Wait until `probe` finds a complete item at the head of the buffered
    /// bytes, then consume the reported length. Used for self-delimiting
    /// payloads like HTTP responses.
    pub fn read_delimited(
        &mut self,
        deadline: Instant,
        probe: impl Fn(&[u8]) -> Option<usize>,
    ) -> Result<Vec<u8>, TransportError> {
        loop {
            if let Some(len) = probe(&self.inbox[self.inbox_read..]) {
                return self.read_exact(len, deadline);
            }
            if self.peer_fin {
                return Err(TransportError::Closed);
            }
            self.pump(deadline)?;
        }
    }

    /// Receive one datagram and fold it into the stream buffers.
    fn pump(&mut self, deadline: Instant) -> Result<(), TransportError> {
        let mut buf = [0u8; 2048];
        loop {
            let remaining = deadline
                .checked_duration_since(Instant::now())
                .ok_or(TransportError::Timeout)?;
            self.sock.set_read_timeout(Some(remaining))?;
            match self.sock.recv(&mut buf) {
                Ok(n) => {
                    let Some(seg) = Segment::decode(&buf[..n]) else {
                        continue;
                    };
                    if seg.flags & FLAG_RST != 0 {
                        return Err(TransportError::Reset);
                    }
                    if seg.flags & FLAG_FIN != 0 {
                        self.peer_fin = true;
                    }
                    if !seg.payload.is_empty() {
                        self.ooo.insert(seg.seq, seg.payload);
                        self.drain_in_order();
                    }
                    return Ok(());
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                    return Err(TransportError::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => return Err(TransportError::Refused),
                Err(e) => return Err(TransportError::Io(e)),
            }
        }
    }

    fn drain_in_order(&mut self) {
        while let Some(payload) = self.ooo.remove(&self.recv_next) {
            self.recv_next = self.recv_next.wrapping_add(payload.len() as u32);
            self.inbox.extend_from_slice(&payload);
        }
    }

    /// Normal close: FIN out, socket dropped.
    pub fn close(self) {
        let fin = Segment {
            flags: FLAG_FIN,
            seq: self.send_off,
            ack: 0,
            options: Vec::new(),
            payload: Vec::new(),
        };
        let _ = self.sock.send(&fin.encode());
    }

    /// Abortive close.
    pub fn reset(self) {
        let rst = Segment {
            flags: FLAG_RST,
            seq: self.send_off,
            ack: 0,
            options: Vec::new(),
            payload: Vec::new(),
        };
        let _ = self.sock.send(&rst.encode());
    }
}

/// Server-side connection state machine; the testbed feeds it decoded
/// segments and forwards whatever it returns.
#[derive(Debug)]
pub struct StreamServerConn {
    pub established: bool,
    send_off: u32,
    recv_next: u32,
    ooo: BTreeMap<u32, Vec<u8>>,
    pub got_fin: bool,
    pub got_rst: bool,
}

impl StreamServerConn {
    pub fn new() -> Self {
        StreamServerConn {
            established: false,
            send_off: 0,
            recv_next: 0,
            ooo: BTreeMap::new(),
            got_fin: false,
            got_rst: false,
        }
    }

    /// Process one inbound segment: returns segments to send plus any newly
    /// in-order application bytes.
    pub fn handle(&mut self, seg: &Segment, tfo_enabled: bool, tfo_cookie: &[u8]) -> (Vec<Segment>, Vec<u8>) {
        let mut out = Vec::new();
        let mut app = Vec::new();
        if seg.flags & FLAG_RST != 0 {
            self.got_rst = true;
            return (out, app);
        }
        if seg.flags & FLAG_SYN != 0 {
            let mut flags = FLAG_SYN | FLAG_ACK;
            let mut options = Vec::new();
            if tfo_enabled && seg.flags & FLAG_TFO_REQ != 0 {
                flags |= FLAG_TFO_GRANT;
                options.extend_from_slice(tfo_cookie);
            }
            out.push(Segment {
                flags,
                seq: rand::rng().random(),
                ack: seg.seq.wrapping_add(1),
                options,
                payload: Vec::new(),
            });
            self.established = true;
            return (out, app);
        }
        if seg.flags & FLAG_FIN != 0 {
            self.got_fin = true;
        }
        if !seg.payload.is_empty() {
            self.ooo.insert(seg.seq, seg.payload.clone());
            while let Some(payload) = self.ooo.remove(&self.recv_next) {
                self.recv_next = self.recv_next.wrapping_add(payload.len() as u32);
                app.extend_from_slice(&payload);
            }
        }
        (out, app)
    }

    /// Chunk application bytes into data segments.
    pub fn send_app(&mut self, data: &[u8]) -> Vec<Segment> {
        let mut out = Vec::new();
        for chunk in data.chunks(MSS) {
            out.push(Segment::data(self.send_off, chunk.to_vec()));
            self.send_off = self.send_off.wrapping_add(chunk.len() as u32);
        }
        out
    }

    pub fn fin(&mut self) -> Segment {
        Segment {
            flags: FLAG_FIN,
            seq: self.send_off,
            ack: 0,
            options: Vec::new(),
            payload: Vec::new(),
        }
    }
}

impl Default for StreamServerConn {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_roundtrip() {
        let seg = Segment {
            flags: FLAG_SYN | FLAG_TFO_REQ,
            seq: 0xdead_beef,
            ack: 42,
            options: vec![1, 2, 3],
            payload: b"hello".to_vec(),
        };
        assert_eq!(Segment::decode(&seg.encode()), Some(seg));
        assert_eq!(Segment::decode(&[0x55, 0, 0]), None);
        assert_eq!(Segment::decode(&[]), None);
    }

    #[test]
    fn server_conn_reassembles_out_of_order() {
        let mut conn = StreamServerConn::new();
        let syn = Segment {
            flags: FLAG_SYN,
            seq: 7,
            ack: 0,
            options: Vec::new(),
            payload: Vec::new(),
        };
        let (out, _) = conn.handle(&syn, false, &[]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].flags, FLAG_SYN | FLAG_ACK);
        assert_eq!(out[0].ack, 8);

        let (_, app) = conn.handle(&Segment::data(3, b"def".to_vec()), false, &[]);
        assert!(app.is_empty());
        let (_, app) = conn.handle(&Segment::data(0, b"abc".to_vec()), false, &[]);
        assert_eq!(app, b"abcdef");
    }

    #[test]
    fn tfo_cookie_granted_only_when_enabled() {
        let syn = Segment {
            flags: FLAG_SYN | FLAG_TFO_REQ,
            seq: 1,
            ack: 0,
            options: Vec::new(),
            payload: Vec::new(),
        };
        let cookie = [9u8; 8];
        let (out, _) = StreamServerConn::new().handle(&syn, true, &cookie);
        assert!(out[0].flags & FLAG_TFO_GRANT != 0);
        assert_eq!(out[0].options, cookie);
        let (out, _) = StreamServerConn::new().handle(&syn, false, &cookie);
        assert!(out[0].flags & FLAG_TFO_GRANT == 0);
    }

    /// Loopback echo peer speaking the segment protocol by hand.
    fn spawn_echo_server() -> SocketAddr {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = sock.local_addr().unwrap();
        std::thread::spawn(move || {
            let mut conns: std::collections::HashMap<SocketAddr, StreamServerConn> =
                std::collections::HashMap::new();
            let mut buf = [0u8; 2048];
            while let Ok((n, peer)) = sock.recv_from(&mut buf) {
                let Some(seg) = Segment::decode(&buf[..n]) else {
                    continue;
                };
                let conn = conns.entry(peer).or_default();
                let (out, app) = conn.handle(&seg, false, &[]);
                for seg in out {
                    sock.send_to(&seg.encode(), peer).unwrap();
                }
                if !app.is_empty() {
                    for seg in conn.send_app(&app) {
                        sock.send_to(&seg.encode(), peer).unwrap();
                    }
                }
            }
        });
        addr
    }

    #[test]
    fn connect_and_echo_roundtrip() {
        let addr = spawn_echo_server();
        let outcome = connect(addr, Duration::from_secs(2), false).unwrap();
        let mut stream = outcome.stream;
        let msg = vec![0xabu8; 3000]; // forces multiple segments
        stream.send_bytes(&msg).unwrap();
        let deadline = Instant::now() + Duration::from_secs(2);
        let back = stream.read_exact(3000, deadline).unwrap();
        assert_eq!(back, msg);
        stream.close();
    }

    #[test]
    fn connect_to_dead_port_is_refused_or_times_out() {
        // An unbound localhost port produces ICMP port-unreachable, which
        // surfaces as ConnectionRefused on the connected UDP socket.
        let err = connect(
            "127.0.0.1:9".parse().unwrap(),
            Duration::from_millis(300),
            false,
        )
        .unwrap_err();
        assert!(
            matches!(err, TransportError::Refused | TransportError::Timeout),
            "unexpected: {err:?}"
        );
    }
}
