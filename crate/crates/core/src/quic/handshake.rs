//! Model handshake messages carried in CRYPTO frames.
//!
//! The server's CRYPTO stream is `[ServerHello][certificate DER][0x14]`; the
//! client's is `[ClientHello]` followed by `[0x15]` once the server flight is
//! processed. Certificate bytes dominate the flight size, which is what the
//! amplification-limit behavior depends on.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HandshakeMsgError {
    #[error("handshake message truncated")]
    Truncated,
    #[error("unexpected handshake message tag {0:#04x}")]
    BadTag(u8),
}

pub const TAG_CLIENT_HELLO: u8 = 0x01;
pub const TAG_SERVER_HELLO: u8 = 0x02;
/// Single-byte marker closing the server's CRYPTO stream.
pub const SERVER_FINISHED: u8 = 0x14;
/// Single-byte marker closing the client's CRYPTO stream.
pub const CLIENT_FINISHED: u8 = 0x15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub sni: Option<String>,
    /// ALPN identifiers in descending preference order.
    pub alpns: Vec<String>,
    pub resumption_ticket: Option<Vec<u8>>,
    pub early_data: bool,
}

impl ClientHello {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![TAG_CLIENT_HELLO];
        let sni = self.sni.as_deref().unwrap_or("");
        buf.push(sni.len() as u8);
        buf.extend_from_slice(sni.as_bytes());
        buf.push(self.alpns.len() as u8);
        for alpn in &self.alpns {
            buf.push(alpn.len() as u8);
            buf.extend_from_slice(alpn.as_bytes());
        }
        buf.push(u8::from(self.early_data));
        let ticket = self.resumption_ticket.as_deref().unwrap_or(&[]);
        buf.extend_from_slice(&(ticket.len() as u16).to_be_bytes());
        buf.extend_from_slice(ticket);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, HandshakeMsgError> {
        let tag = *bytes.first().ok_or(HandshakeMsgError::Truncated)?;
        if tag != TAG_CLIENT_HELLO {
            return Err(HandshakeMsgError::BadTag(tag));
        }
        let mut pos = 1usize;
        let sni_len = usize::from(*bytes.get(pos).ok_or(HandshakeMsgError::Truncated)?);
        pos += 1;
        let sni_bytes = bytes.get(pos..pos + sni_len).ok_or(HandshakeMsgError::Truncated)?;
        let sni = if sni_len == 0 {
            None
        } else {
            Some(String::from_utf8_lossy(sni_bytes).into_owned())
        };
        pos += sni_len;
        let count = usize::from(*bytes.get(pos).ok_or(HandshakeMsgError::Truncated)?);
        pos += 1;
        let mut alpns = Vec::with_capacity(count);
        for _ in 0..count {
            let len = usize::from(*bytes.get(pos).ok_or(HandshakeMsgError::Truncated)?);
            pos += 1;
            let s = bytes.get(pos..pos + len).ok_or(HandshakeMsgError::Truncated)?;
            alpns.push(String::from_utf8_lossy(s).into_owned());
            pos += len;
        }
        let early_data = *bytes.get(pos).ok_or(HandshakeMsgError::Truncated)? != 0;
        pos += 1;
        let tlen = bytes.get(pos..pos + 2).ok_or(HandshakeMsgError::Truncated)?;
        let tlen = usize::from(u16::from_be_bytes([tlen[0], tlen[1]]));
        pos += 2;
        let ticket = bytes.get(pos..pos + tlen).ok_or(HandshakeMsgError::Truncated)?;
        Ok(ClientHello {
            sni,
            alpns,
            resumption_ticket: if tlen == 0 { None } else { Some(ticket.to_vec()) },
            early_data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerHello {
    pub alpn: String,
    pub early_data_accepted: bool,
    /// Total certificate bytes that follow in the CRYPTO stream.
    pub cert_len: u32,
}

impl ServerHello {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![TAG_SERVER_HELLO];
        buf.push(self.alpn.len() as u8);
        buf.extend_from_slice(self.alpn.as_bytes());
        buf.push(u8::from(self.early_data_accepted));
        buf.extend_from_slice(&self.cert_len.to_be_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), HandshakeMsgError> {
        let tag = *bytes.first().ok_or(HandshakeMsgError::Truncated)?;
        if tag != TAG_SERVER_HELLO {
            return Err(HandshakeMsgError::BadTag(tag));
        }
        let alpn_len = usize::from(*bytes.get(1).ok_or(HandshakeMsgError::Truncated)?);
        let alpn = bytes.get(2..2 + alpn_len).ok_or(HandshakeMsgError::Truncated)?;
        let mut pos = 2 + alpn_len;
        let early = *bytes.get(pos).ok_or(HandshakeMsgError::Truncated)? != 0;
        pos += 1;
        let cl = bytes.get(pos..pos + 4).ok_or(HandshakeMsgError::Truncated)?;
        let cert_len = u32::from_be_bytes([cl[0], cl[1], cl[2], cl[3]]);
        pos += 4;
        Ok((
            ServerHello {
                alpn: String::from_utf8_lossy(alpn).into_owned(),
                early_data_accepted: early,
                cert_len,
            },
            pos,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_hello_roundtrip() {
        let ch = ClientHello {
            sni: Some("dns.example".into()),
            alpns: vec!["doq".into(), "doq-i02".into()],
            resumption_ticket: Some(vec![7; 24]),
            early_data: true,
        };
        assert_eq!(ClientHello::decode(&ch.encode()).unwrap(), ch);

        let bare = ClientHello {
            sni: None,
            alpns: vec!["doq-i00".into()],
            resumption_ticket: None,
            early_data: false,
        };
        assert_eq!(ClientHello::decode(&bare.encode()).unwrap(), bare);
    }

    #[test]
    fn server_hello_roundtrip() {
        let sh = ServerHello {
            alpn: "doq-i03".into(),
            early_data_accepted: false,
            cert_len: 8192,
        };
        let wire = sh.encode();
        let (back, consumed) = ServerHello::decode(&wire).unwrap();
        assert_eq!(back, sh);
        assert_eq!(consumed, wire.len());
    }

    #[test]
    fn truncation_and_bad_tags_fail() {
        assert!(ClientHello::decode(&[]).is_err());
        assert!(ClientHello::decode(&[TAG_SERVER_HELLO]).is_err());
        let sh = ServerHello {
            alpn: "doq".into(),
            early_data_accepted: false,
            cert_len: 1,
        };
        let wire = sh.encode();
        assert!(ServerHello::decode(&wire[..wire.len() - 1]).is_err());
    }
}
