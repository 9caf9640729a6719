//! X.509 certificate capture and testbed certificate profiles.
//!
//! The testbed self-signs a certificate at startup. The `Large` profile pads
//! a private extension until the DER comfortably exceeds three client Initial
//! datagrams (3 x 1200 bytes), which is what pushes a handshake flight over
//! the traffic amplification limit; `Small` stays well under it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use x509_parser::prelude::{FromDer, GeneralName, X509Certificate};

/// Server budget multiplier before address validation (RFC 9000 §8.1).
pub const AMPLIFICATION_FACTOR: usize = 3;
/// Bytes a large-profile certificate must exceed: 3 x 1200.
pub const LARGE_CERT_MIN_DER: usize = AMPLIFICATION_FACTOR * crate::quic::MIN_INITIAL_DATAGRAM;

#[derive(Debug, thiserror::Error)]
pub enum CertError {
    #[error("certificate generation failed: {0}")]
    Generate(String),
    #[error("certificate parse failed: {0}")]
    Parse(String),
}

/// Metadata captured from a resolver's certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateInfo {
    pub common_name: String,
    pub subject_alt_names: Vec<String>,
    /// Lowercase hex SHA-256 of the DER (64 chars).
    pub fingerprint_sha256: String,
    pub der_size: usize,
    pub not_before_unix: i64,
    pub not_after_unix: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CertProfile {
    #[default]
    Small,
    Large,
}

#[derive(Debug, Clone)]
pub struct GeneratedCert {
    pub der: Vec<u8>,
    pub info: CertificateInfo,
}

/// Self-sign a certificate for `common_name` (plus `alt_names`) sized per the
/// profile.
pub fn generate_profile(
    common_name: &str,
    alt_names: &[String],
    profile: CertProfile,
) -> Result<GeneratedCert, CertError> {
    let mut sans: Vec<String> = vec![common_name.to_string()];
    sans.extend(alt_names.iter().cloned());
    sans.dedup();

    let mut params =
        rcgen::CertificateParams::new(sans).map_err(|e| CertError::Generate(e.to_string()))?;
    params
        .distinguished_name
        .push(rcgen::DnType::CommonName, common_name);
    let now = time::OffsetDateTime::now_utc();
    params.not_before = now - time::Duration::days(1);
    params.not_after = now + time::Duration::days(90);
    if profile == CertProfile::Large {
        // Private-arc extension padded so the DER clears the 3x1200 budget
        // with margin.
        let padding = vec![0x5au8; 2 * LARGE_CERT_MIN_DER];
        params.custom_extensions.push(rcgen::CustomExtension::from_oid_content(
            &[1, 3, 6, 1, 4, 1, 57252, 1],
            padding,
        ));
    }
    let key = rcgen::KeyPair::generate().map_err(|e| CertError::Generate(e.to_string()))?;
    let cert = params
        .self_signed(&key)
        .map_err(|e| CertError::Generate(e.to_string()))?;
    let der = cert.der().to_vec();

    match profile {
        CertProfile::Large if der.len() <= LARGE_CERT_MIN_DER => {
            return Err(CertError::Generate(format!(
                "large profile produced only {} DER bytes",
                der.len()
            )))
        }
        CertProfile::Small if der.len() >= LARGE_CERT_MIN_DER => {
            return Err(CertError::Generate(format!(
                "small profile produced {} DER bytes",
                der.len()
            )))
        }
        _ => {}
    }

    let info = parse_certificate(&der)?;
    Ok(GeneratedCert { der, info })
}

/// Extract [`CertificateInfo`] from DER bytes.
pub fn parse_certificate(der: &[u8]) -> Result<CertificateInfo, CertError> {
    let (_, cert) = X509Certificate::from_der(der).map_err(|e| CertError::Parse(e.to_string()))?;
    let common_name = cert
        .subject()
        .iter_common_name()
        .next()
        .and_then(|attr| attr.as_str().ok())
        .unwrap_or_default()
        .to_string();
    let subject_alt_names = cert
        .subject_alternative_name()
        .ok()
        .flatten()
        .map(|ext| {
            ext.value
                .general_names
                .iter()
                .filter_map(|gn| match gn {
                    GeneralName::DNSName(d) => Some((*d).to_string()),
                    GeneralName::IPAddress(b) if b.len() == 4 => {
                        Some(format!("{}.{}.{}.{}", b[0], b[1], b[2], b[3]))
                    }
                    _ => None,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(CertificateInfo {
        common_name,
        subject_alt_names,
        fingerprint_sha256: hex::encode(Sha256::digest(der)),
        der_size: der.len(),
        not_before_unix: cert.validity().not_before.timestamp(),
        not_after_unix: cert.validity().not_after.timestamp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_profile_under_amplification_budget() {
        let gen = generate_profile("doq.testbed.example", &[], CertProfile::Small).unwrap();
        assert!(gen.der.len() < LARGE_CERT_MIN_DER, "der {} bytes", gen.der.len());
        assert_eq!(gen.info.common_name, "doq.testbed.example");
        assert_eq!(gen.info.fingerprint_sha256.len(), 64);
        assert_eq!(gen.info.der_size, gen.der.len());
        assert!(gen.info.not_before_unix < gen.info.not_after_unix);
        assert!(gen
            .info
            .subject_alt_names
            .contains(&"doq.testbed.example".to_string()));
    }

    #[test]
    fn large_profile_exceeds_amplification_budget() {
        let gen = generate_profile("doq.testbed.example", &[], CertProfile::Large).unwrap();
        assert!(gen.der.len() > LARGE_CERT_MIN_DER, "der {} bytes", gen.der.len());
    }

    #[test]
    fn parse_matches_generation_inputs() {
        let alts = vec!["alt.example".to_string()];
        let gen = generate_profile("cn.example", &alts, CertProfile::Small).unwrap();
        let parsed = parse_certificate(&gen.der).unwrap();
        assert_eq!(parsed, gen.info);
        assert!(parsed.subject_alt_names.contains(&"alt.example".to_string()));
    }

    #[test]
    fn garbage_der_rejected() {
        assert!(parse_certificate(&[0u8; 16]).is_err());
    }

    #[test]
    fn fingerprints_are_unique_per_cert() {
        let a = generate_profile("a.example", &[], CertProfile::Small).unwrap();
        let b = generate_profile("b.example", &[], CertProfile::Small).unwrap();
        assert_ne!(a.info.fingerprint_sha256, b.info.fingerprint_sha256);
    }
}
