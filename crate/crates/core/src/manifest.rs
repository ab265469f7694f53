//! Run manifests attached to every output file.
//!
//! CSV outputs start with a single `# manifest {...}` line; JSON outputs are
//! wrapped as `{"manifest": ..., "result": ...}`. `output_digest` is the
//! SHA-256 of the payload (the CSV body after the manifest line, or the
//! compact serialization of `result`), so [`verify`] can re-hash a file.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_VERSION: &str = concat!("ruralmimo ", env!("CARGO_PKG_VERSION"));
const CSV_PREFIX: &str = "# manifest ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical input description (scenario, grid, flags).
    pub scenario_digest: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub output_digest: String,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no manifest found")]
    Missing,
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("digest mismatch: manifest says {expected}, payload hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, inputs: &str, master_seed: u64, warnings: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            scenario_digest: sha256_hex(inputs.as_bytes()),
            master_seed,
            tool_version: TOOL_VERSION.to_string(),
            warnings,
            output_digest: String::new(),
        }
    }
}

/// Prepends the manifest line to a CSV body.
pub fn attach_csv(mut manifest: RunManifest, body: &str) -> String {
    manifest.output_digest = sha256_hex(body.as_bytes());
    let line = serde_json::to_string(&manifest).expect("manifest serializes");
    format!("{CSV_PREFIX}{line}\n{body}")
}

/// Wraps a JSON result with its manifest; pretty-printed, trailing newline.
pub fn attach_json(mut manifest: RunManifest, result: &Value) -> String {
    manifest.output_digest = sha256_hex(serde_json::to_string(result).expect("json").as_bytes());
    let doc = serde_json::json!({ "manifest": manifest, "result": result });
    let mut s = serde_json::to_string_pretty(&doc).expect("json");
    s.push('\n');
    s
}

/// Checks a CSV or JSON output file against its embedded digest.
pub fn verify(text: &str) -> Result<RunManifest, ManifestError> {
    let (manifest, actual) = if let Some(rest) = text.strip_prefix(CSV_PREFIX) {
        let (line, body) = rest.split_once('\n').ok_or(ManifestError::Missing)?;
        let m: RunManifest = serde_json::from_str(line).map_err(|e| ManifestError::Malformed(e.to_string()))?;
        (m, sha256_hex(body.as_bytes()))
    } else if text.trim_start().starts_with('{') {
        let doc: Value = serde_json::from_str(text).map_err(|e| ManifestError::Malformed(e.to_string()))?;
        let m = doc.get("manifest").ok_or(ManifestError::Missing)?;
        let m: RunManifest = serde_json::from_value(m.clone()).map_err(|e| ManifestError::Malformed(e.to_string()))?;
        let result = doc.get("result").ok_or(ManifestError::Missing)?;
        (m, sha256_hex(serde_json::to_string(result).expect("json").as_bytes()))
    } else {
        return Err(ManifestError::Missing);
    };
    if manifest.output_digest != actual {
        return Err(ManifestError::DigestMismatch {
            expected: manifest.output_digest,
            actual,
        });
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest::new("sweep", "seed = 1", 1, vec!["w".into()])
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn csv_roundtrip_and_tamper() {
        let out = attach_csv(manifest(), "a,b\n1,2\n");
        assert!(out.starts_with("# manifest {"));
        let m = verify(&out).unwrap();
        assert_eq!(m.scenario_digest, sha256_hex(b"seed = 1"));
        let tampered = out.replace("1,2", "1,3");
        assert!(matches!(verify(&tampered), Err(ManifestError::DigestMismatch { .. })));
    }

    #[test]
    fn json_roundtrip_and_tamper() {
        let out = attach_json(
            manifest(),
            &serde_json::json!({"n_cov": 27027, "rho": 55.06, "d": 10507.136517231504, "x": 0.1 + 0.2}),
        );
        verify(&out).unwrap();
        let tampered = out.replace("27027", "27028");
        assert!(matches!(verify(&tampered), Err(ManifestError::DigestMismatch { .. })));
        assert!(matches!(verify("x,y\n"), Err(ManifestError::Missing)));
    }

    #[test]
    fn deterministic_output() {
        assert_eq!(attach_csv(manifest(), "x\n"), attach_csv(manifest(), "x\n"));
    }
}
