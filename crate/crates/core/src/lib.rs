pub mod autodiff;
pub mod cli;
pub mod data;
mod error;
pub mod fairness;
pub mod flows;
pub mod graph;
#[cfg(test)]
mod testutil;
pub mod training;
pub mod units;

pub use error::{Error, Result};

/// Lower-case hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
