//! RFC 1035 DNS wire-format codec.
//!
//! Covers what the measurement pipeline needs: encoding A/IN queries with a
//! configurable Recursion Desired flag, decoding responses (resolving name
//! compression), and EDNS(0) OPT records per RFC 6891 including the
//! edns-tcp-keepalive option (code 11, RFC 7828). Record types other than A
//! and OPT carry opaque rdata. Name compression is decoded but never emitted.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub const TYPE_A: u16 = 1;
pub const TYPE_OPT: u16 = 41;
pub const CLASS_IN: u16 = 1;
/// edns-tcp-keepalive option code (RFC 7828).
pub const OPTION_TCP_KEEPALIVE: u16 = 11;
/// Default requestor payload size advertised in OPT records we emit.
pub const DEFAULT_EDNS_PAYLOAD: u16 = 1232;

const HEADER_LEN: usize = 12;
const MAX_LABEL: usize = 63;
const MAX_NAME: usize = 255;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DnsError {
    #[error("invalid domain name: {0}")]
    InvalidName(String),
    #[error("message truncated ({0})")]
    Truncated(&'static str),
    #[error("malformed compression pointer loop at offset {0}")]
    MalformedPointerLoop(usize),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

/// DNS header flag bits (QR, Opcode, AA, TC, RD, RA, Z, RCODE).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsFlags {
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    pub z: u8,
    /// 4-bit response code; see [`DnsMessage::rcode`] for the EDNS-extended value.
    pub rcode: u8,
}

impl DnsFlags {
    fn to_word(self) -> u16 {
        (u16::from(self.qr) << 15)
            | (u16::from(self.opcode & 0x0f) << 11)
            | (u16::from(self.aa) << 10)
            | (u16::from(self.tc) << 9)
            | (u16::from(self.rd) << 8)
            | (u16::from(self.ra) << 7)
            | (u16::from(self.z & 0x07) << 4)
            | u16::from(self.rcode & 0x0f)
    }

    fn from_word(w: u16) -> Self {
        DnsFlags {
            qr: w & 0x8000 != 0,
            opcode: ((w >> 11) & 0x0f) as u8,
            aa: w & 0x0400 != 0,
            tc: w & 0x0200 != 0,
            rd: w & 0x0100 != 0,
            ra: w & 0x0080 != 0,
            z: ((w >> 4) & 0x07) as u8,
            rcode: (w & 0x000f) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl ResourceRecord {
    pub fn a(name: &str, addr: Ipv4Addr, ttl: u32) -> Self {
        ResourceRecord {
            name: name.to_string(),
            rtype: TYPE_A,
            class: CLASS_IN,
            ttl,
            rdata: addr.octets().to_vec(),
        }
    }

    pub fn a_addr(&self) -> Option<Ipv4Addr> {
        if self.rtype == TYPE_A && self.rdata.len() == 4 {
            Some(Ipv4Addr::new(
                self.rdata[0],
                self.rdata[1],
                self.rdata[2],
                self.rdata[3],
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdnsOption {
    pub code: u16,
    pub value: Vec<u8>,
}

/// EDNS(0) pseudo-record state (RFC 6891 OPT).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edns {
    pub payload_size: u16,
    pub ext_rcode: u8,
    pub version: u8,
    pub do_flag: bool,
    pub options: Vec<EdnsOption>,
}

impl Default for Edns {
    fn default() -> Self {
        Edns {
            payload_size: DEFAULT_EDNS_PAYLOAD,
            ext_rcode: 0,
            version: 0,
            do_flag: false,
            options: Vec::new(),
        }
    }
}

/// A decoded DNS message. `decode(encode(m)) == m` for messages this codec
/// produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsMessage {
    pub id: u16,
    pub flags: DnsFlags,
    pub questions: Vec<Question>,
    pub answers: Vec<ResourceRecord>,
    pub authorities: Vec<ResourceRecord>,
    pub additionals: Vec<ResourceRecord>,
    pub edns: Option<Edns>,
    /// Set when the buffer carried bytes past the last record (reported, not fatal).
    #[serde(default, skip_serializing_if = "is_false")]
    pub trailing_garbage: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl DnsMessage {
    /// New A/IN query for `name` with a caller-chosen id.
    pub fn query(id: u16, name: &str, rd: bool, edns_options: &[EdnsOption]) -> Result<Self, DnsError> {
        validate_name(name)?;
        let edns = if edns_options.is_empty() {
            None
        } else {
            Some(Edns {
                options: edns_options.to_vec(),
                ..Edns::default()
            })
        };
        Ok(DnsMessage {
            id,
            flags: DnsFlags {
                rd,
                ..DnsFlags::default()
            },
            questions: vec![Question {
                name: name.trim_end_matches('.').to_string(),
                qtype: TYPE_A,
                qclass: CLASS_IN,
            }],
            answers: Vec::new(),
            authorities: Vec::new(),
            additionals: Vec::new(),
            edns,
            trailing_garbage: false,
        })
    }

    /// Response code combined with the EDNS extended-RCODE bits when present.
    pub fn rcode(&self) -> u16 {
        let base = u16::from(self.flags.rcode & 0x0f);
        match &self.edns {
            Some(e) => (u16::from(e.ext_rcode) << 4) | base,
            None => base,
        }
    }

    pub fn a_answers(&self) -> Vec<Ipv4Addr> {
        self.answers.iter().filter_map(ResourceRecord::a_addr).collect()
    }

    /// Serialize to RFC 1035 wire format. The OPT record, when present, is
    /// emitted as the final additional record.
    pub fn encode(&self) -> Result<Vec<u8>, DnsError> {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&self.id.to_be_bytes());
        buf.extend_from_slice(&self.flags.to_word().to_be_bytes());
        let arcount = self.additionals.len() + usize::from(self.edns.is_some());
        for count in [
            self.questions.len(),
            self.answers.len(),
            self.authorities.len(),
            arcount,
        ] {
            let count = u16::try_from(count).map_err(|_| DnsError::Malformed("section too large"))?;
            buf.extend_from_slice(&count.to_be_bytes());
        }
        for q in &self.questions {
            encode_name(&mut buf, &q.name)?;
            buf.extend_from_slice(&q.qtype.to_be_bytes());
            buf.extend_from_slice(&q.qclass.to_be_bytes());
        }
        for rr in self.answers.iter().chain(&self.authorities).chain(&self.additionals) {
            encode_rr(&mut buf, rr)?;
        }
        if let Some(edns) = &self.edns {
            encode_opt(&mut buf, edns)?;
        }
        Ok(buf)
    }
}

/// Encode an A/IN query with the RD flag per `rd` and a uniformly random
/// message id. EDNS options, when given, ride in an OPT record.
pub fn encode_query(name: &str, rd: bool, edns_options: &[EdnsOption]) -> Result<Vec<u8>, DnsError> {
    let id: u16 = rand::random();
    encode_query_with_id(id, name, rd, edns_options)
}

/// Deterministic-id variant of [`encode_query`]; also returns nothing extra so
/// golden vectors can pin every byte.
pub fn encode_query_with_id(
    id: u16,
    name: &str,
    rd: bool,
    edns_options: &[EdnsOption],
) -> Result<Vec<u8>, DnsError> {
    DnsMessage::query(id, name, rd, edns_options)?.encode()
}

/// Decode a wire-format message, resolving compression pointers. Trailing
/// bytes are reported via [`DnsMessage::trailing_garbage`] rather than failing
/// the decode.
pub fn decode_message(bytes: &[u8]) -> Result<DnsMessage, DnsError> {
    if bytes.len() < HEADER_LEN {
        return Err(DnsError::Truncated("header"));
    }
    let id = u16::from_be_bytes([bytes[0], bytes[1]]);
    let flags = DnsFlags::from_word(u16::from_be_bytes([bytes[2], bytes[3]]));
    let qdcount = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let ancount = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
    let nscount = u16::from_be_bytes([bytes[8], bytes[9]]) as usize;
    let arcount = u16::from_be_bytes([bytes[10], bytes[11]]) as usize;

    let mut pos = HEADER_LEN;
    let mut questions = Vec::with_capacity(qdcount.min(16));
    for _ in 0..qdcount {
        let (name, next) = decode_name(bytes, pos)?;
        if next + 4 > bytes.len() {
            return Err(DnsError::Truncated("question"));
        }
        questions.push(Question {
            name,
            qtype: u16::from_be_bytes([bytes[next], bytes[next + 1]]),
            qclass: u16::from_be_bytes([bytes[next + 2], bytes[next + 3]]),
        });
        pos = next + 4;
    }

    let mut sections: [Vec<ResourceRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut edns = None;
    for (idx, (section, count)) in sections.iter_mut().zip([ancount, nscount, arcount]).enumerate() {
        // OPT is interpreted as EDNS only where RFC 6891 places it.
        let in_additionals = idx == 2;
        for _ in 0..count {
            let (rr, next, opt) = decode_rr(bytes, pos, in_additionals)?;
            pos = next;
            match opt {
                Some(e) => {
                    if edns.replace(e).is_some() {
                        return Err(DnsError::Malformed("duplicate OPT record"));
                    }
                }
                None => section.push(rr),
            }
        }
    }
    let [answers, authorities, additionals] = sections;

    Ok(DnsMessage {
        id,
        flags,
        questions,
        answers,
        authorities,
        additionals,
        edns,
        trailing_garbage: pos < bytes.len(),
    })
}

/// Return the edns-tcp-keepalive timeout (units of 100 ms) when the message
/// carries option code 11 with a 2-octet value; `None` otherwise. A query-form
/// option with an empty value states no timeout and also yields `None`.
pub fn extract_keepalive_timeout(m: &DnsMessage) -> Option<u16> {
    m.edns.as_ref()?.options.iter().find_map(|o| {
        if o.code == OPTION_TCP_KEEPALIVE && o.value.len() == 2 {
            Some(u16::from_be_bytes([o.value[0], o.value[1]]))
        } else {
            None
        }
    })
}

fn validate_name(name: &str) -> Result<(), DnsError> {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.is_empty() {
        return Err(DnsError::InvalidName("empty name".into()));
    }
    let mut encoded_len = 1; // root terminator
    for label in trimmed.split('.') {
        if label.is_empty() {
            return Err(DnsError::InvalidName(format!("empty label in {name:?}")));
        }
        if label.len() > MAX_LABEL {
            return Err(DnsError::InvalidName(format!(
                "label longer than {MAX_LABEL} bytes in {name:?}"
            )));
        }
        encoded_len += 1 + label.len();
    }
    if encoded_len > MAX_NAME {
        return Err(DnsError::InvalidName(format!(
            "encoded name longer than {MAX_NAME} bytes"
        )));
    }
    Ok(())
}

fn encode_name(buf: &mut Vec<u8>, name: &str) -> Result<(), DnsError> {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.is_empty() {
        // Root name (used by OPT records).
        buf.push(0);
        return Ok(());
    }
    validate_name(name)?;
    for label in trimmed.split('.') {
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(0);
    Ok(())
}

/// Decode a possibly-compressed name starting at `start`. Returns the name and
/// the offset just past its in-place encoding. Pointers must aim strictly
/// before their own position, which rules out loops.
fn decode_name(bytes: &[u8], start: usize) -> Result<(String, usize), DnsError> {
    let mut labels: Vec<String> = Vec::new();
    let mut pos = start;
    let mut end = None;
    let mut total = 1usize;
    loop {
        let len_byte = *bytes.get(pos).ok_or(DnsError::Truncated("name"))?;
        match len_byte {
            0 => {
                let end = end.unwrap_or(pos + 1);
                return Ok((labels.join("."), end));
            }
            l if l & 0xc0 == 0xc0 => {
                let second = *bytes.get(pos + 1).ok_or(DnsError::Truncated("pointer"))?;
                let target = (usize::from(l & 0x3f) << 8) | usize::from(second);
                if target >= pos {
                    return Err(DnsError::MalformedPointerLoop(pos));
                }
                end.get_or_insert(pos + 2);
                pos = target;
            }
            l if l & 0xc0 != 0 => return Err(DnsError::Malformed("reserved label type")),
            l => {
                let l = usize::from(l);
                if l > MAX_LABEL {
                    return Err(DnsError::Malformed("label too long"));
                }
                total += 1 + l;
                if total > MAX_NAME {
                    return Err(DnsError::Malformed("name too long"));
                }
                let label = bytes
                    .get(pos + 1..pos + 1 + l)
                    .ok_or(DnsError::Truncated("label"))?;
                labels.push(String::from_utf8_lossy(label).into_owned());
                pos += 1 + l;
            }
        }
    }
}

fn encode_rr(buf: &mut Vec<u8>, rr: &ResourceRecord) -> Result<(), DnsError> {
    encode_name(buf, &rr.name)?;
    buf.extend_from_slice(&rr.rtype.to_be_bytes());
    buf.extend_from_slice(&rr.class.to_be_bytes());
    buf.extend_from_slice(&rr.ttl.to_be_bytes());
    let rdlen = u16::try_from(rr.rdata.len()).map_err(|_| DnsError::Malformed("rdata too long"))?;
    buf.extend_from_slice(&rdlen.to_be_bytes());
    buf.extend_from_slice(&rr.rdata);
    Ok(())
}

fn encode_opt(buf: &mut Vec<u8>, edns: &Edns) -> Result<(), DnsError> {
    buf.push(0); // root name
    buf.extend_from_slice(&TYPE_OPT.to_be_bytes());
    buf.extend_from_slice(&edns.payload_size.to_be_bytes());
    let ttl = (u32::from(edns.ext_rcode) << 24)
        | (u32::from(edns.version) << 16)
        | (u32::from(edns.do_flag) << 15);
    buf.extend_from_slice(&ttl.to_be_bytes());
    let rdlen: usize = edns.options.iter().map(|o| 4 + o.value.len()).sum();
    let rdlen = u16::try_from(rdlen).map_err(|_| DnsError::Malformed("options too long"))?;
    buf.extend_from_slice(&rdlen.to_be_bytes());
    for opt in &edns.options {
        buf.extend_from_slice(&opt.code.to_be_bytes());
        let len = u16::try_from(opt.value.len()).map_err(|_| DnsError::Malformed("option too long"))?;
        buf.extend_from_slice(&len.to_be_bytes());
        buf.extend_from_slice(&opt.value);
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
fn decode_rr(
    bytes: &[u8],
    start: usize,
    interpret_opt: bool,
) -> Result<(ResourceRecord, usize, Option<Edns>), DnsError> {
    let (name, mut pos) = decode_name(bytes, start)?;
    if pos + 10 > bytes.len() {
        return Err(DnsError::Truncated("record header"));
    }
    let rtype = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]);
    let class = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]);
    let ttl = u32::from_be_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]]);
    let rdlen = u16::from_be_bytes([bytes[pos + 8], bytes[pos + 9]]) as usize;
    pos += 10;
    let rdata = bytes
        .get(pos..pos + rdlen)
        .ok_or(DnsError::Truncated("rdata"))?
        .to_vec();
    pos += rdlen;

    if rtype == TYPE_OPT && interpret_opt {
        let mut options = Vec::new();
        let mut off = 0usize;
        while off < rdata.len() {
            if off + 4 > rdata.len() {
                return Err(DnsError::Truncated("edns option header"));
            }
            let code = u16::from_be_bytes([rdata[off], rdata[off + 1]]);
            let len = u16::from_be_bytes([rdata[off + 2], rdata[off + 3]]) as usize;
            let value = rdata
                .get(off + 4..off + 4 + len)
                .ok_or(DnsError::Truncated("edns option value"))?
                .to_vec();
            options.push(EdnsOption { code, value });
            off += 4 + len;
        }
        let edns = Edns {
            payload_size: class,
            ext_rcode: (ttl >> 24) as u8,
            version: (ttl >> 16) as u8,
            do_flag: ttl & 0x8000 != 0,
            options,
        };
        let rr = ResourceRecord {
            name,
            rtype,
            class,
            ttl,
            rdata,
        };
        return Ok((rr, pos, Some(edns)));
    }

    Ok((
        ResourceRecord {
            name,
            rtype,
            class,
            ttl,
            rdata,
        },
        pos,
        None,
    ))
}
