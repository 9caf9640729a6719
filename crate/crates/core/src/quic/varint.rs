//! RFC 9000 §16 variable-length integers.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VarintError {
    #[error("varint truncated")]
    Truncated,
    #[error("value {0} exceeds varint range")]
    OutOfRange(u64),
}

pub const VARINT_MAX: u64 = (1 << 62) - 1;

/// Append the shortest varint encoding of `v`.
pub fn write_varint(buf: &mut Vec<u8>, v: u64) {
    assert!(v <= VARINT_MAX, "varint out of range: {v}");
    if v < 1 << 6 {
        buf.push(v as u8);
    } else if v < 1 << 14 {
        buf.extend_from_slice(&((v as u16) | 0x4000).to_be_bytes());
    } else if v < 1 << 30 {
        buf.extend_from_slice(&((v as u32) | 0x8000_0000).to_be_bytes());
    } else {
        buf.extend_from_slice(&(v | 0xc000_0000_0000_0000).to_be_bytes());
    }
}

/// Decode a varint at `pos`, returning the value and the offset just past it.
pub fn read_varint(buf: &[u8], pos: usize) -> Result<(u64, usize), VarintError> {
    let first = *buf.get(pos).ok_or(VarintError::Truncated)?;
    let len = 1usize << (first >> 6);
    let bytes = buf.get(pos..pos + len).ok_or(VarintError::Truncated)?;
    let mut v = u64::from(first & 0x3f);
    for b in &bytes[1..] {
        v = (v << 8) | u64::from(*b);
    }
    Ok((v, pos + len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfc_appendix_a_vectors() {
        // The four worked examples from RFC 9000 Appendix A.1.
        let cases: [(u64, &[u8]); 4] = [
            (151_288_809_941_952_652, &[0xc2, 0x19, 0x7c, 0x5e, 0xff, 0x14, 0xe8, 0x8c]),
            (494_878_333, &[0x9d, 0x7f, 0x3e, 0x7d]),
            (15_293, &[0x7b, 0xbd]),
            (37, &[0x25]),
        ];
        for (value, wire) in cases {
            let mut buf = Vec::new();
            write_varint(&mut buf, value);
            assert_eq!(buf, wire);
            assert_eq!(read_varint(wire, 0).unwrap(), (value, wire.len()));
        }
    }

    #[test]
    fn boundaries_roundtrip() {
        for v in [0, 63, 64, 16383, 16384, (1 << 30) - 1, 1 << 30, VARINT_MAX] {
            let mut buf = Vec::new();
            write_varint(&mut buf, v);
            assert_eq!(read_varint(&buf, 0).unwrap(), (v, buf.len()));
        }
    }

    #[test]
    fn truncated_input_fails() {
        assert_eq!(read_varint(&[], 0), Err(VarintError::Truncated));
        assert_eq!(read_varint(&[0x40], 0), Err(VarintError::Truncated));
        assert_eq!(read_varint(&[0xc0, 1, 2], 0), Err(VarintError::Truncated));
    }
}
