//! Deterministic report emission: CSV, JSON sidecar, config hashing.

use super::eval::TransferReport;
use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;

/// Hex SHA-256 of the canonical JSON encoding of any config value.
pub fn config_hash<T: serde::Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// CSV rows (surrogate, attack, target, n_images, n_eligible, success_rate),
/// one line per (report, target) pair, in input order.
pub fn reports_to_csv(reports: &[&TransferReport]) -> String {
    let mut out = String::from("surrogate,attack,target,n_images,n_eligible,success_rate\n");
    for report in reports {
        let surrogate = report.surrogates.join("+");
        for target in &report.targets {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                surrogate,
                report.attack,
                target.target,
                target.n_images,
                target.n_eligible,
                target.success_rate
            ));
        }
    }
    out
}

pub fn write_csv(reports: &[&TransferReport], path: &Path) -> io::Result<()> {
    std::fs::write(path, reports_to_csv(reports))
}

/// JSON sidecar mirroring the CSV plus full diagnostics.
pub fn write_json(reports: &[&TransferReport], path: &Path) -> io::Result<()> {
    let value = serde_json::to_string_pretty(reports).expect("report serializes");
    std::fs::write(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_input_sensitive() {
        #[derive(serde::Serialize)]
        struct C {
            a: u32,
            b: f64,
        }
        let h1 = config_hash(&C { a: 1, b: 0.5 });
        let h2 = config_hash(&C { a: 1, b: 0.5 });
        let h3 = config_hash(&C { a: 2, b: 0.5 });
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 64);
    }
}
