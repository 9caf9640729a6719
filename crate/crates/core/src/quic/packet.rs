//! Packet encoding and parsing.
//!
//! Version-independent fields (first byte, version, connection ids) and the
//! Version Negotiation body are RFC 9000 §17.2 exact. Model simplifications
//! behind those fields: one packet per datagram, no header protection, no
//! packet numbers, and short headers carry an explicit dcid length byte.

use sha2::{Digest, Sha256};

use super::frame::{decode_frames, encode_frames, Frame, FrameError};
use super::varint::{read_varint, write_varint, VarintError};

/// Longest connection id RFC 9000 permits.
pub const MAX_CID_LEN: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("datagram truncated ({0})")]
    Truncated(&'static str),
    #[error("connection id longer than 20 bytes")]
    CidTooLong,
    #[error("unknown packet type byte {0:#04x}")]
    UnknownType(u8),
    #[error("bad varint: {0}")]
    Varint(#[from] VarintError),
    #[error("bad frame: {0}")]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketType {
    Initial,
    ZeroRtt,
    Handshake,
    Retry,
    OneRtt,
}

impl PacketType {
    fn long_header_byte(self) -> u8 {
        match self {
            PacketType::Initial => 0xc0,
            PacketType::ZeroRtt => 0xd0,
            PacketType::Handshake => 0xe0,
            PacketType::Retry => 0xf0,
            PacketType::OneRtt => 0x40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub ptype: PacketType,
    /// Wire version for long headers; ignored for 1-RTT packets.
    pub version: u32,
    pub dcid: Vec<u8>,
    pub scid: Vec<u8>,
    /// Address-validation token (Initial packets only).
    pub token: Vec<u8>,
    pub frames: Vec<Frame>,
}

impl Packet {
    pub fn initial(version: u32, dcid: &[u8], scid: &[u8], token: &[u8], frames: Vec<Frame>) -> Self {
        Packet {
            ptype: PacketType::Initial,
            version,
            dcid: dcid.to_vec(),
            scid: scid.to_vec(),
            token: token.to_vec(),
            frames,
        }
    }

    pub fn handshake(version: u32, dcid: &[u8], scid: &[u8], frames: Vec<Frame>) -> Self {
        Packet {
            ptype: PacketType::Handshake,
            version,
            dcid: dcid.to_vec(),
            scid: scid.to_vec(),
            token: Vec::new(),
            frames,
        }
    }

    pub fn zero_rtt(version: u32, dcid: &[u8], scid: &[u8], frames: Vec<Frame>) -> Self {
        Packet {
            ptype: PacketType::ZeroRtt,
            version,
            dcid: dcid.to_vec(),
            scid: scid.to_vec(),
            token: Vec::new(),
            frames,
        }
    }

    pub fn one_rtt(dcid: &[u8], frames: Vec<Frame>) -> Self {
        Packet {
            ptype: PacketType::OneRtt,
            version: 0,
            dcid: dcid.to_vec(),
            scid: Vec::new(),
            token: Vec::new(),
            frames,
        }
    }
}

/// One parsed datagram. Version-0 long headers are surfaced raw: from a
/// server's point of view they are discovery probes, from a client's point of
/// view they are Version Negotiation packets.
#[derive(Debug, Clone)]
pub enum ParsedDatagram {
    Packet(Packet),
    VersionZero {
        first_byte: u8,
        dcid: Vec<u8>,
        scid: Vec<u8>,
        /// Bytes after the connection ids: a VN version list or probe padding.
        tail: Vec<u8>,
    },
}

/// Serialize a packet, zero-padding the datagram to `pad_to` when given.
pub fn encode_packet(p: &Packet, pad_to: Option<usize>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(128);
    buf.push(p.ptype.long_header_byte());
    match p.ptype {
        PacketType::OneRtt => {
            buf.push(p.dcid.len() as u8);
            buf.extend_from_slice(&p.dcid);
            encode_frames(&mut buf, &p.frames);
        }
        PacketType::Retry => unreachable!("use build_retry for Retry packets"),
        _ => {
            buf.extend_from_slice(&p.version.to_be_bytes());
            buf.push(p.dcid.len() as u8);
            buf.extend_from_slice(&p.dcid);
            buf.push(p.scid.len() as u8);
            buf.extend_from_slice(&p.scid);
            if p.ptype == PacketType::Initial {
                write_varint(&mut buf, p.token.len() as u64);
                buf.extend_from_slice(&p.token);
            }
            let mut payload = Vec::new();
            encode_frames(&mut payload, &p.frames);
            write_varint(&mut buf, payload.len() as u64);
            buf.extend_from_slice(&payload);
        }
    }
    if let Some(target) = pad_to {
        if buf.len() < target {
            buf.resize(target, 0);
        }
    }
    buf
}

/// Parse one datagram. Trailing datagram padding past the packet's declared
/// length is ignored.
pub fn parse_datagram(bytes: &[u8]) -> Result<ParsedDatagram, PacketError> {
    let first = *bytes.first().ok_or(PacketError::Truncated("empty"))?;
    if first & 0x80 == 0 {
        // Short header (model layout: explicit dcid length).
        if first & 0x40 == 0 {
            return Err(PacketError::UnknownType(first));
        }
        let (dcid, pos) = read_cid(bytes, 1)?;
        let frames = decode_frames(&bytes[pos..])?;
        return Ok(ParsedDatagram::Packet(Packet {
            ptype: PacketType::OneRtt,
            version: 0,
            dcid,
            scid: Vec::new(),
            token: Vec::new(),
            frames,
        }));
    }
    if bytes.len() < 7 {
        return Err(PacketError::Truncated("long header"));
    }
    let version = u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]);
    let (dcid, pos) = read_cid(bytes, 5)?;
    let (scid, pos) = read_cid(bytes, pos)?;
    if version == 0 {
        return Ok(ParsedDatagram::VersionZero {
            first_byte: first,
            dcid,
            scid,
            tail: bytes[pos..].to_vec(),
        });
    }
    let ptype = match first & 0x30 {
        0x00 => PacketType::Initial,
        0x10 => PacketType::ZeroRtt,
        0x20 => PacketType::Handshake,
        0x30 => PacketType::Retry,
        _ => unreachable!(),
    };
    if ptype == PacketType::Retry {
        // Token runs to the 16-byte integrity tag at the end.
        let rest = &bytes[pos..];
        if rest.len() < 16 {
            return Err(PacketError::Truncated("retry tag"));
        }
        let token = rest[..rest.len() - 16].to_vec();
        return Ok(ParsedDatagram::Packet(Packet {
            ptype,
            version,
            dcid,
            scid,
            token,
            frames: Vec::new(),
        }));
    }
    let (token, pos) = if ptype == PacketType::Initial {
        let (token_len, p) = read_varint(bytes, pos)?;
        let token = bytes
            .get(p..p + token_len as usize)
            .ok_or(PacketError::Truncated("token"))?
            .to_vec();
        (token, p + token_len as usize)
    } else {
        (Vec::new(), pos)
    };
    let (payload_len, pos) = read_varint(bytes, pos)?;
    let payload = bytes
        .get(pos..pos + payload_len as usize)
        .ok_or(PacketError::Truncated("payload"))?;
    let frames = decode_frames(payload)?;
    Ok(ParsedDatagram::Packet(Packet {
        ptype,
        version,
        dcid,
        scid,
        token,
        frames,
    }))
}

fn read_cid(bytes: &[u8], pos: usize) -> Result<(Vec<u8>, usize), PacketError> {
    let len = usize::from(*bytes.get(pos).ok_or(PacketError::Truncated("cid length"))?);
    if len > MAX_CID_LEN {
        return Err(PacketError::CidTooLong);
    }
    let cid = bytes
        .get(pos + 1..pos + 1 + len)
        .ok_or(PacketError::Truncated("cid"))?
        .to_vec();
    Ok((cid, pos + 1 + len))
}

/// Build a Version Negotiation datagram (RFC 9000 §17.2.1). `dcid`/`scid`
/// must already be the swapped connection ids of the triggering packet.
pub fn build_version_negotiation(dcid: &[u8], scid: &[u8], versions: &[u32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(7 + dcid.len() + scid.len() + versions.len() * 4);
    // High bit set; remaining seven bits are arbitrary on the wire.
    buf.push(0x80 | (rand::random::<u8>() & 0x7f));
    buf.extend_from_slice(&0u32.to_be_bytes());
    buf.push(dcid.len() as u8);
    buf.extend_from_slice(dcid);
    buf.push(scid.len() as u8);
    buf.extend_from_slice(scid);
    for v in versions {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf
}

/// Strictly parse a VN version list: nonempty, a whole number of 32-bit
/// values, none of them zero. Echoed probe padding fails these checks.
pub fn parse_version_list(tail: &[u8]) -> Option<Vec<u32>> {
    if tail.is_empty() || tail.len() % 4 != 0 {
        return None;
    }
    let mut versions = Vec::with_capacity(tail.len() / 4);
    for chunk in tail.chunks_exact(4) {
        let v = u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if v == 0 {
            return None;
        }
        versions.push(v);
    }
    Some(versions)
}

/// Build a Retry packet: long header type 0b11, token, 16-byte pseudo
/// integrity tag.
pub fn build_retry(version: u32, dcid: &[u8], scid: &[u8], token: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(23 + dcid.len() + scid.len() + token.len());
    buf.push(0xf0);
    buf.extend_from_slice(&version.to_be_bytes());
    buf.push(dcid.len() as u8);
    buf.extend_from_slice(dcid);
    buf.push(scid.len() as u8);
    buf.extend_from_slice(scid);
    buf.extend_from_slice(token);
    buf.extend_from_slice(&retry_tag(version, dcid, scid, token));
    buf
}

/// Pseudo integrity tag binding a Retry to its connection ids and token.
pub fn retry_tag(version: u32, dcid: &[u8], scid: &[u8], token: &[u8]) -> [u8; 16] {
    let mut hasher = Sha256::new();
    hasher.update(version.to_be_bytes());
    hasher.update([dcid.len() as u8]);
    hasher.update(dcid);
    hasher.update([scid.len() as u8]);
    hasher.update(scid);
    hasher.update(token);
    let digest = hasher.finalize();
    let mut tag = [0u8; 16];
    tag.copy_from_slice(&digest[..16]);
    tag
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quic::{QUIC_DRAFT_29, QUIC_V1};

    #[test]
    fn initial_roundtrip_with_token_and_padding() {
        let pkt = Packet::initial(
            QUIC_V1,
            &[1; 8],
            &[2; 8],
            &[9, 9, 9],
            vec![Frame::Crypto {
                offset: 0,
                data: vec![0xab; 40],
            }],
        );
        let wire = encode_packet(&pkt, Some(1200));
        assert_eq!(wire.len(), 1200);
        assert_eq!(wire[0], 0xc0);
        assert_eq!(&wire[1..5], &QUIC_V1.to_be_bytes());
        match parse_datagram(&wire).unwrap() {
            ParsedDatagram::Packet(p) => {
                assert_eq!(p.ptype, PacketType::Initial);
                assert_eq!(p.token, vec![9, 9, 9]);
                assert_eq!(p.dcid, vec![1; 8]);
                assert_eq!(p.frames.len(), 1);
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn version_negotiation_layout_is_exact() {
        let wire = build_version_negotiation(&[5; 8], &[6; 4], &[QUIC_V1, QUIC_DRAFT_29]);
        assert!(wire[0] & 0x80 != 0);
        assert_eq!(&wire[1..5], &[0, 0, 0, 0]);
        assert_eq!(wire[5], 8);
        assert_eq!(&wire[6..14], &[5; 8]);
        assert_eq!(wire[14], 4);
        assert_eq!(&wire[15..19], &[6; 4]);
        assert_eq!(&wire[19..23], &QUIC_V1.to_be_bytes());
        assert_eq!(&wire[23..27], &QUIC_DRAFT_29.to_be_bytes());
        match parse_datagram(&wire).unwrap() {
            ParsedDatagram::VersionZero { dcid, scid, tail, .. } => {
                assert_eq!(dcid, vec![5; 8]);
                assert_eq!(scid, vec![6; 4]);
                assert_eq!(parse_version_list(&tail), Some(vec![QUIC_V1, QUIC_DRAFT_29]));
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn version_list_rejects_padding_and_zeroes() {
        assert_eq!(parse_version_list(&[]), None);
        assert_eq!(parse_version_list(&[0, 0, 0]), None);
        assert_eq!(parse_version_list(&vec![0u8; 1177]), None);
        assert_eq!(parse_version_list(&[0, 0, 0, 0]), None);
        assert_eq!(parse_version_list(&[0, 0, 0, 1]), Some(vec![1]));
    }

    #[test]
    fn retry_roundtrip() {
        let wire = build_retry(QUIC_V1, &[7; 8], &[8; 8], b"tok");
        match parse_datagram(&wire).unwrap() {
            ParsedDatagram::Packet(p) => {
                assert_eq!(p.ptype, PacketType::Retry);
                assert_eq!(p.token, b"tok");
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn one_rtt_roundtrip() {
        let pkt = Packet::one_rtt(
            &[3; 8],
            vec![Frame::Stream {
                id: 0,
                offset: 0,
                fin: true,
                data: vec![1, 2, 3],
            }],
        );
        let wire = encode_packet(&pkt, None);
        match parse_datagram(&wire).unwrap() {
            ParsedDatagram::Packet(p) => {
                assert_eq!(p.ptype, PacketType::OneRtt);
                assert_eq!(p.dcid, vec![3; 8]);
                assert_eq!(p.frames.len(), 1);
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn oversized_cid_rejected() {
        let mut wire = vec![0xc0];
        wire.extend_from_slice(&QUIC_V1.to_be_bytes());
        wire.push(21);
        wire.extend_from_slice(&[0; 21]);
        wire.push(0);
        assert_eq!(parse_datagram(&wire).unwrap_err(), PacketError::CidTooLong);
    }

    #[test]
    fn garbage_and_truncation_fail_cleanly() {
        assert!(parse_datagram(&[]).is_err());
        assert!(parse_datagram(&[0x00, 1, 2]).is_err());
        let pkt = Packet::handshake(QUIC_V1, &[1; 8], &[2; 8], vec![Frame::HandshakeDone]);
        let wire = encode_packet(&pkt, None);
        for cut in 1..wire.len() {
            let _ = parse_datagram(&wire[..cut]);
        }
    }
}
