//! Output directory handling and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

pub const OUT_ENV: &str = "AGENTFLOW_OUT";
const DEFAULT_OUT: &str = "agentflow-out";

pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never see a partial file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
