//! Recordings, annotations, model files and synthetic data.

mod csv_io;
pub mod edf;
pub mod model;
mod record;
pub mod synth;

use std::io::Write;
use std::path::Path;

pub use csv_io::{read_annotations, read_annotations_from, read_csv, read_csv_from, write_annotations, write_csv};
pub use edf::{read_edf, EdfOptions};
pub use model::{ModelFile, Provenance, Weights};
pub use record::{validate_annotations, Annotation, Channel, EEGRecord};
pub use synth::{synth_generate, Schedule, SynthConfig};

use crate::error::{Error, Result};

/// Write `bytes` to a temporary file next to `path`, then rename it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
