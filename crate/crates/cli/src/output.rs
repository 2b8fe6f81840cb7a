//! Output directory handling: every file is written under a temporary name
//! and only renamed into place once the whole command has succeeded.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct Outputs {
    dir: PathBuf,
    pending: Vec<(PathBuf, PathBuf)>,
    force: bool,
}

impl Outputs {
    pub fn new(dir: &Path, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(anyhow::anyhow!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), pending: Vec::new(), force })
    }

    /// Refuses up front if any of `names` already exists and `--force` was not
    /// given.
    pub fn claim(&self, names: &[&str]) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let path = self.dir.join(name);
            if path.exists() {
                return Err(CliError::Usage(format!(
                    "refusing to overwrite {} (pass --force to replace it)",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn write(&mut self, name: &str, emit: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        let io_err = |e: io::Error| CliError::Data(anyhow::anyhow!("{}: {e}", target.display()));
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        emit(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        self.pending.push((tmp, target));
        Ok(())
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let mut done = Vec::new();
        for (tmp, target) in std::mem::take(&mut self.pending) {
            fs::rename(&tmp, &target).map_err(|e| CliError::Data(anyhow::anyhow!("{}: {e}", target.display())))?;
            log::info!("wrote {}", target.display());
            done.push(target);
        }
        Ok(done)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}
