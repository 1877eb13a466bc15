//! Deterministic artifact writers.
//!
//! Every file starts with a metadata block carrying the toolkit version
//! and the SHA-256 of the effective configuration, so identical
//! `(config, seed)` runs produce byte-identical output. Numbers are
//! written with 17 significant digits (round-trip exact).

use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// 17-significant-digit scientific rendering (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn config_hash(effective_config: &str) -> String {
    let digest = Sha256::digest(effective_config.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Comment-style metadata block prepended to CSV artifacts.
pub fn csv_metadata(hash: &str, seed: u64) -> String {
    format!("# cttx {VERSION}\n# config_sha256={hash}\n# seed={seed}\n")
}

/// Metadata object embedded in JSON artifacts.
pub fn json_metadata(hash: &str, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "version": VERSION,
        "config_sha256": hash,
        "seed": seed,
    })
}

/// Render a JSON artifact with its metadata, stable key order.
pub fn json_artifact(meta: serde_json::Value, data: serde_json::Value) -> String {
    let doc = serde_json::json!({ "meta": meta, "data": data });
    let mut out = serde_json::to_string_pretty(&doc).expect("json rendering");
    out.push('\n');
    out
}
