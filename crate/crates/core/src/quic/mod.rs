//! QUIC wire-format layer used by the discovery probe, the DoQ client, and
//! the testbed's server side.
//!
//! Long-header layout, connection-id fields, Version Negotiation, and varints
//! follow RFC 9000 §16/§17 byte-for-byte — the discovery probe and VN parsing
//! depend on that. Packet payloads carry a compact model handshake rather
//! than TLS 1.3 record protection: the toolkit measures round trips, not
//! ciphersuites, and every packet still crosses a real UDP socket.

pub mod frame;
pub mod handshake;
pub mod packet;
pub mod token;
pub mod varint;

pub use frame::Frame;
pub use packet::{Packet, PacketType};

/// QUIC version 1 (RFC 9000).
pub const QUIC_V1: u32 = 0x0000_0001;
/// draft-ietf-quic-transport-29.
pub const QUIC_DRAFT_29: u32 = 0xff00_001d;
/// draft-ietf-quic-transport-32.
pub const QUIC_DRAFT_32: u32 = 0xff00_0020;
/// draft-ietf-quic-transport-34.
pub const QUIC_DRAFT_34: u32 = 0xff00_0022;

/// Client offer order: highest preference first.
pub const DEFAULT_CLIENT_VERSIONS: [u32; 4] = [QUIC_V1, QUIC_DRAFT_34, QUIC_DRAFT_32, QUIC_DRAFT_29];

/// Minimum size of a client Initial datagram (RFC 9000 §14.1); also the
/// model's maximum datagram size.
pub const MIN_INITIAL_DATAGRAM: usize = 1200;

/// Human-readable QUIC version label for reports.
pub fn version_name(v: u32) -> String {
    match v {
        QUIC_V1 => "v1".to_string(),
        x if (0xff00_0000..=0xff00_00ff).contains(&x) => format!("draft-{}", x & 0xff),
        other => format!("{other:#010x}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_names() {
        assert_eq!(version_name(QUIC_V1), "v1");
        assert_eq!(version_name(QUIC_DRAFT_29), "draft-29");
        assert_eq!(version_name(QUIC_DRAFT_34), "draft-34");
        assert_eq!(version_name(0x1a2a_3a4a), "0x1a2a3a4a");
    }
}
