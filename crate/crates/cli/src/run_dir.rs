use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// First 8 hex digits of SHA-256 over `parts`.
pub fn hash8(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// `explicit` if given, else `<root>/<UTC timestamp>-<hash8>`. Created if missing.
pub fn prepare(explicit: Option<PathBuf>, root: &Path, config_text: &str, command: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d,
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            root.join(format!("{stamp}-{}", hash8(&[config_text, command])))
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("{}: cannot create run directory", dir.display()))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_separates_parts() {
        assert_eq!(hash8(&["a", "b"]), hash8(&["a", "b"]));
        assert_ne!(hash8(&["ab", ""]), hash8(&["a", "b"]));
        assert_eq!(hash8(&[]).len(), 8);
        // SHA-256 of the empty string starts e3b0c442
        let mut h = Sha256::new();
        h.update(b"");
        assert_eq!(format!("{:02x}", h.finalize()[0]), "e3");
    }

    #[test]
    fn generated_directory_is_created_under_root() {
        let tmp = tempfile::tempdir().unwrap();
        let d = prepare(None, tmp.path(), "x", "rank").unwrap();
        assert!(d.is_dir());
        assert!(d.file_name().unwrap().to_str().unwrap().ends_with(&hash8(&["x", "rank"])));
    }
}
