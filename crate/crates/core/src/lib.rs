//! DNS-over-QUIC measurement toolkit.
//!
//! The crate is organized around a measurement pipeline:
//!
//! * [`dns`] — RFC 1035 wire codec for the A-record queries the toolkit sends
//!   and the responses it records, including EDNS(0) options.
//! * [`probe`] — stateless QUIC capability probe (version 0 Initial) and the
//!   protocol-specific RTT probes (UDP payload, TCP SYN, QUIC invalid-version).
//! * [`doq`] — DoQ client with version/ALPN negotiation, Retry and NEW_TOKEN
//!   handling, a token cache, and a structured per-connection event log.
//! * [`dox`] — DoUDP/DoTCP/DoT/DoH measurement clients plus TFO,
//!   edns-tcp-keepalive, and QUIC 0-RTT feature probes.
//! * [`scan`] — target-list ingestion, blocklist enforcement, the
//!   scan→verify→record pipeline, and weekly snapshot persistence.
//! * [`measure`] — the cache-warming + measurement campaign orchestrator.
//! * [`testbed`] — a configurable local server speaking all five protocols
//!   with behavior injection and symmetric latency emulation.
//! * [`analyzer`] — handshake RTT-cause classification, per-protocol
//!   distributions, adoption tallies, and CSV / plot-spec reports.
//!
//! All transports used for timing reproduction run in userspace over UDP so
//! the testbed can delay every packet — including handshake packets — inside
//! its own socket layer. Wire formats that cross tool boundaries (DNS
//! messages, the QUIC long header used by the discovery probe, Version
//! Negotiation packets, DoQ stream framing, the DoT length prefix, DoH HTTP
//! exchanges) follow their RFCs byte-for-byte.

pub mod analyzer;
pub mod cert;
pub mod dns;
pub mod doq;
pub mod dox;
pub mod events;
pub mod measure;
pub mod probe;
pub mod quic;
pub mod scan;
pub mod testbed;
pub mod transport;
pub mod util;
