use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Writes `name` inside `dir` through a temporary file and a rename, so
/// readers never see a half-written file.
pub fn write_atomic(
    dir: &Path,
    name: &str,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let target = dir.join(name);
    let ctx = || format!("writing {}", target.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(ctx()))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf).map_err(CliError::io(ctx()))?;
        buf.flush().map_err(CliError::io(ctx()))?;
    }
    tmp.persist(&target)
        .map_err(|e| CliError::io(ctx())(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}
