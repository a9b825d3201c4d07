//! Password strength policy and salted PBKDF2-HMAC-SHA256 digests.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub const MIN_LENGTH: usize = 8;
pub const ALGORITHM: &str = "pbkdf2_sha256";
pub const DEFAULT_ITERATIONS: u32 = 100_000;
pub const SALT_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;

const COMMON_PASSWORDS: &str = include_str!("common_passwords.txt");

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum PolicyError {
    #[error("password must contain at least {MIN_LENGTH} characters")]
    TooShort,
    #[error("password is too similar to the username")]
    SimilarToUsername,
    #[error("password is too common")]
    TooCommon,
    #[error("password cannot be entirely numeric")]
    AllNumeric,
}

/// The bundled list of rejected passwords, lowercase.
pub fn common_passwords() -> impl Iterator<Item = &'static str> {
    COMMON_PASSWORDS.lines().map(str::trim).filter(|l| !l.is_empty())
}

/// Checks length, similarity to the username, all-digit passwords and the
/// common-password list, in that order.
pub fn check_policy(username: &str, password: &str) -> Result<(), PolicyError> {
    if password.chars().count() < MIN_LENGTH {
        return Err(PolicyError::TooShort);
    }
    let user = username.to_lowercase();
    let pass = password.to_lowercase();
    if !user.is_empty() && (pass.contains(&user) || user.contains(&pass)) {
        return Err(PolicyError::SimilarToUsername);
    }
    if password.chars().all(|c| c.is_ascii_digit()) {
        return Err(PolicyError::AllNumeric);
    }
    if common_passwords().any(|c| c == pass) {
        return Err(PolicyError::TooCommon);
    }
    Ok(())
}

/// Stored password record. Salt and digest are lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasswordDigest {
    pub algorithm: String,
    pub iterations: u32,
    pub salt: String,
    pub digest: String,
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl PasswordDigest {
    pub fn create(password: &str, iterations: u32) -> Self {
        let mut salt = [0u8; SALT_LEN];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        Self::with_salt(password, &salt, iterations)
    }

    pub fn with_salt(password: &str, salt: &[u8], iterations: u32) -> Self {
        Self {
            algorithm: ALGORITHM.to_owned(),
            iterations,
            salt: hex::encode(salt),
            digest: hex::encode(derive(password, salt, iterations)),
        }
    }

    /// Constant-time comparison against a fresh derivation.
    pub fn verify(&self, password: &str) -> bool {
        if self.algorithm != ALGORITHM {
            return false;
        }
        let (Ok(salt), Ok(expected)) = (hex::decode(&self.salt), hex::decode(&self.digest)) else {
            return false;
        };
        ct_eq(&derive(password, &salt, self.iterations), &expected)
    }
}
