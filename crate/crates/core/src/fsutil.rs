use std::io::{self, Write};
use std::path::Path;

/// Writes `bytes` to `path` via a temp file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Filesystem-safe stem for an identifier. Identifiers that need escaping
/// get a short digest suffix so distinct ids never collide.
pub fn safe_stem(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if clean == id && !id.is_empty() && !id.starts_with('.') {
        clean
    } else {
        let digest = crate::digest::sha256_hex(id.as_bytes());
        format!("{}-{}", clean.trim_start_matches('.'), &digest[..8])
    }
}
