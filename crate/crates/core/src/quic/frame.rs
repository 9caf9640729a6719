//! Frame encoding for model packets. Frame type codes follow RFC 9000 §19
//! where an equivalent exists; SESSION_TICKET (0x30) is model-local, standing
//! in for the ticket a TLS layer would deliver inside CRYPTO.

use super::varint::{read_varint, write_varint, VarintError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u64),
    #[error("bad varint: {0}")]
    Varint(#[from] VarintError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Padding { len: usize },
    Ack { largest: u64 },
    Crypto { offset: u64, data: Vec<u8> },
    NewToken { token: Vec<u8> },
    Stream { id: u64, offset: u64, fin: bool, data: Vec<u8> },
    ConnectionClose { code: u64, reason: String },
    HandshakeDone,
    SessionTicket { ticket: Vec<u8> },
}

pub fn encode_frames(buf: &mut Vec<u8>, frames: &[Frame]) {
    for f in frames {
        match f {
            Frame::Padding { len } => buf.extend(std::iter::repeat_n(0u8, *len)),
            Frame::Ack { largest } => {
                write_varint(buf, 0x02);
                write_varint(buf, *largest);
            }
            Frame::Crypto { offset, data } => {
                write_varint(buf, 0x06);
                write_varint(buf, *offset);
                write_varint(buf, data.len() as u64);
                buf.extend_from_slice(data);
            }
            Frame::NewToken { token } => {
                write_varint(buf, 0x07);
                write_varint(buf, token.len() as u64);
                buf.extend_from_slice(token);
            }
            Frame::Stream { id, offset, fin, data } => {
                // STREAM with OFF and LEN bits, plus FIN when set.
                write_varint(buf, 0x0e | u64::from(*fin));
                write_varint(buf, *id);
                write_varint(buf, *offset);
                write_varint(buf, data.len() as u64);
                buf.extend_from_slice(data);
            }
            Frame::ConnectionClose { code, reason } => {
                write_varint(buf, 0x1c);
                write_varint(buf, *code);
                write_varint(buf, 0); // triggering frame type
                write_varint(buf, reason.len() as u64);
                buf.extend_from_slice(reason.as_bytes());
            }
            Frame::HandshakeDone => write_varint(buf, 0x1e),
            Frame::SessionTicket { ticket } => {
                write_varint(buf, 0x30);
                write_varint(buf, ticket.len() as u64);
                buf.extend_from_slice(ticket);
            }
        }
    }
}

pub fn decode_frames(mut payload: &[u8]) -> Result<Vec<Frame>, FrameError> {
    let mut frames = Vec::new();
    while !payload.is_empty() {
        if payload[0] == 0 {
            let len = payload.iter().take_while(|b| **b == 0).count();
            frames.push(Frame::Padding { len });
            payload = &payload[len..];
            continue;
        }
        let (ftype, pos) = read_varint(payload, 0)?;
        let rest = &payload[pos..];
        let (frame, consumed) = match ftype {
            0x02 => {
                let (largest, p) = read_varint(rest, 0)?;
                (Frame::Ack { largest }, p)
            }
            0x06 => {
                let (offset, p) = read_varint(rest, 0)?;
                let (len, p) = read_varint(rest, p)?;
                let data = rest
                    .get(p..p + len as usize)
                    .ok_or(FrameError::Truncated)?
                    .to_vec();
                (Frame::Crypto { offset, data }, p + len as usize)
            }
            0x07 => {
                let (len, p) = read_varint(rest, 0)?;
                let token = rest
                    .get(p..p + len as usize)
                    .ok_or(FrameError::Truncated)?
                    .to_vec();
                (Frame::NewToken { token }, p + len as usize)
            }
            0x08..=0x0f => {
                let fin = ftype & 0x01 != 0;
                let has_off = ftype & 0x04 != 0;
                let has_len = ftype & 0x02 != 0;
                let (id, mut p) = read_varint(rest, 0)?;
                let mut offset = 0;
                if has_off {
                    let (off, np) = read_varint(rest, p)?;
                    offset = off;
                    p = np;
                }
                let (data, consumed) = if has_len {
                    let (len, np) = read_varint(rest, p)?;
                    let data = rest
                        .get(np..np + len as usize)
                        .ok_or(FrameError::Truncated)?
                        .to_vec();
                    (data, np + len as usize)
                } else {
                    (rest[p..].to_vec(), rest.len())
                };
                (Frame::Stream { id, offset, fin, data }, consumed)
            }
            0x1c => {
                let (code, p) = read_varint(rest, 0)?;
                let (_frame_type, p) = read_varint(rest, p)?;
                let (len, p) = read_varint(rest, p)?;
                let reason = rest.get(p..p + len as usize).ok_or(FrameError::Truncated)?;
                (
                    Frame::ConnectionClose {
                        code,
                        reason: String::from_utf8_lossy(reason).into_owned(),
                    },
                    p + len as usize,
                )
            }
            0x1e => (Frame::HandshakeDone, 0),
            0x30 => {
                let (len, p) = read_varint(rest, 0)?;
                let ticket = rest
                    .get(p..p + len as usize)
                    .ok_or(FrameError::Truncated)?
                    .to_vec();
                (Frame::SessionTicket { ticket }, p + len as usize)
            }
            other => return Err(FrameError::UnknownType(other)),
        };
        frames.push(frame);
        payload = &rest[consumed..];
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_frames_roundtrip() {
        let frames = vec![
            Frame::Ack { largest: 7 },
            Frame::Crypto {
                offset: 1200,
                data: vec![1, 2, 3],
            },
            Frame::NewToken {
                token: vec![0xaa; 32],
            },
            Frame::Stream {
                id: 0,
                offset: 0,
                fin: true,
                data: b"payload".to_vec(),
            },
            Frame::ConnectionClose {
                code: 0x178,
                reason: "no shared alpn".into(),
            },
            Frame::HandshakeDone,
            Frame::SessionTicket {
                ticket: vec![9; 16],
            },
            Frame::Padding { len: 5 },
        ];
        let mut buf = Vec::new();
        encode_frames(&mut buf, &frames);
        assert_eq!(decode_frames(&buf).unwrap(), frames);
    }

    #[test]
    fn truncated_frame_fails() {
        let mut buf = Vec::new();
        encode_frames(
            &mut buf,
            &[Frame::Crypto {
                offset: 0,
                data: vec![7; 64],
            }],
        );
        assert_eq!(decode_frames(&buf[..buf.len() - 1]), Err(FrameError::Truncated));
    }

    #[test]
    fn unknown_type_reported() {
        assert!(matches!(
            decode_frames(&[0x3f]),
            Err(FrameError::UnknownType(0x3f))
        ));
    }
}
