//! Lab stream transports.
//!
//! TCP-based DNS protocols are measured over a segment protocol that runs on
//! UDP datagrams, so the testbed's delay queues pace every packet of the
//! 3-way handshake and the TLS exchange the same way they pace QUIC and
//! DoUDP traffic. Payload framing above the stream layer (the DoT/DoTCP
//! 2-octet length prefix, DoH HTTP messages) is unchanged from the RFCs.

pub mod segment;
pub mod tls;

pub use segment::{ConnectOutcome, Segment, StreamClient, StreamServerConn, TransportError};
pub use tls::{TlsClient, TlsServerConfig, TlsServerConn, TlsVersion};
