//! Tick charges for simulated events.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("reading cost model {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing cost model {path}: {message}")]
    Parse { path: String, message: String },
}

/// Ticks charged per event. Unset fields in a config file keep their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Every TLB lookup, hit or miss.
    pub tlb_hit: u64,
    /// Each page-table entry read or written by the walker or the defense.
    pub pt_level_access: u64,
    /// The data access once a translation is in hand.
    pub mem_access: u64,
    /// One internal-node hash in the integrity forest.
    pub hash_node: u64,
    /// Entry into the OS fault handler.
    pub os_fault: u64,
    /// Moving one page to or from the backing store.
    pub swap_io: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { tlb_hit: 1, pt_level_access: 20, mem_access: 10, hash_node: 200, os_fault: 1000, swap_io: 100_000 }
    }
}

impl CostModel {
    /// Loads a TOML file, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CostModelError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| CostModelError::Io { path: shown.clone(), source })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| CostModelError::Parse { path: shown, message })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn partial_toml_keeps_defaults() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "hash_node = 7\nswap_io = 5").unwrap();
        let c = CostModel::load(f.path()).unwrap();
        assert_eq!(c.hash_node, 7);
        assert_eq!(c.swap_io, 5);
        assert_eq!(c.os_fault, CostModel::default().os_fault);
    }

    #[test]
    fn json_and_unknown_fields() {
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(f, r#"{{"tlb_hit": 2}}"#).unwrap();
        assert_eq!(CostModel::load(f.path()).unwrap().tlb_hit, 2);

        let mut bad = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(bad, "bogus = 1").unwrap();
        assert!(matches!(CostModel::load(bad.path()), Err(CostModelError::Parse { .. })));
    }
}
