//! Self-authenticating address-validation tokens.
//!
//! Layout: kind(1) | ip(16, v4-mapped) | issued-unix-secs(8) | nonce(8) |
//! mac(8). The mac keys on a per-server secret, so tokens only validate at
//! the server that minted them. Tokens bind to the client IP, not the port:
//! a follow-up session from a fresh socket must still validate.

use std::net::IpAddr;
use std::time::Duration;

use sha2::{Digest, Sha256};

pub const TOKEN_LEN: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    /// Minted for a Retry packet; proves the immediate round trip.
    Retry,
    /// Minted in a NEW_TOKEN frame for use by a future connection.
    NewToken,
}

impl TokenKind {
    fn to_byte(self) -> u8 {
        match self {
            TokenKind::Retry => 1,
            TokenKind::NewToken => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(TokenKind::Retry),
            2 => Some(TokenKind::NewToken),
            _ => None,
        }
    }
}

pub struct TokenMinter {
    secret: [u8; 16],
}

impl TokenMinter {
    pub fn new() -> Self {
        TokenMinter {
            secret: rand::random(),
        }
    }

    pub fn mint(&self, kind: TokenKind, ip: IpAddr, now_unix: u64) -> Vec<u8> {
        let mut token = Vec::with_capacity(TOKEN_LEN);
        token.push(kind.to_byte());
        token.extend_from_slice(&ip_bytes(ip));
        token.extend_from_slice(&now_unix.to_be_bytes());
        token.extend_from_slice(&rand::random::<[u8; 8]>());
        let mac = self.mac(&token);
        token.extend_from_slice(&mac);
        token
    }

    /// Validate a presented token against the sender address and a maximum
    /// age; returns the kind it was minted as.
    pub fn validate(&self, token: &[u8], ip: IpAddr, now_unix: u64, max_age: Duration) -> Option<TokenKind> {
        if token.len() != TOKEN_LEN {
            return None;
        }
        let (body, mac) = token.split_at(TOKEN_LEN - 8);
        if self.mac(body) != mac {
            return None;
        }
        let kind = TokenKind::from_byte(body[0])?;
        if body[1..17] != ip_bytes(ip) {
            return None;
        }
        let issued = u64::from_be_bytes(body[17..25].try_into().unwrap());
        if now_unix.saturating_sub(issued) > max_age.as_secs() {
            return None;
        }
        Some(kind)
    }

    fn mac(&self, body: &[u8]) -> [u8; 8] {
        let mut hasher = Sha256::new();
        hasher.update(self.secret);
        hasher.update(body);
        let digest = hasher.finalize();
        let mut mac = [0u8; 8];
        mac.copy_from_slice(&digest[..8]);
        mac
    }
}

impl Default for TokenMinter {
    fn default() -> Self {
        Self::new()
    }
}

fn ip_bytes(ip: IpAddr) -> [u8; 16] {
    match ip {
        IpAddr::V4(v4) => v4.to_ipv6_mapped().octets(),
        IpAddr::V6(v6) => v6.octets(),
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    const AGE: Duration = Duration::from_secs(3600);

    #[test]
    fn mint_validate_same_ip_any_port() {
        let minter = TokenMinter::new();
        let ip = IpAddr::V4(Ipv4Addr::new(127, 0, 0, 1));
        let t = minter.mint(TokenKind::NewToken, ip, 1000);
        assert_eq!(minter.validate(&t, ip, 1000, AGE), Some(TokenKind::NewToken));
        assert_eq!(minter.validate(&t, ip, 1500, AGE), Some(TokenKind::NewToken));
    }

    #[test]
    fn wrong_ip_or_server_rejected() {
        let minter = TokenMinter::new();
        let ip = IpAddr::V4(Ipv4Addr::new(127, 0, 0, 1));
        let other = IpAddr::V4(Ipv4Addr::new(127, 0, 0, 2));
        let t = minter.mint(TokenKind::Retry, ip, 1000);
        assert_eq!(minter.validate(&t, other, 1000, AGE), None);
        let stranger = TokenMinter::new();
        assert_eq!(stranger.validate(&t, ip, 1000, AGE), None);
    }

    #[test]
    fn expiry_and_tampering_rejected() {
        let minter = TokenMinter::new();
        let ip = IpAddr::V4(Ipv4Addr::new(127, 0, 0, 1));
        let mut t = minter.mint(TokenKind::Retry, ip, 1000);
        assert_eq!(minter.validate(&t, ip, 1000 + AGE.as_secs() + 1, AGE), None);
        t[0] = 2;
        assert_eq!(minter.validate(&t, ip, 1000, AGE), None);
        assert_eq!(minter.validate(&[], ip, 1000, AGE), None);
    }
}
