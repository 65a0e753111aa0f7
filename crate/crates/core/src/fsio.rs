//! Atomic file output: write to a temporary file in the target directory,
//! then rename over the destination.

use std::io::Write;
use std::path::Path;

use crate::error::{CignError, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CignError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CignError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CignError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CignError::io(path, e))?;
    tmp.persist(path).map_err(|e| CignError::io(path, e.error))?;
    Ok(())
}
