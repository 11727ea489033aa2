use std::path::{Path, PathBuf};

use crate::error::Result;

/// Files produced by the current invocation, removed again if it fails.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    /// Records a path some other code is about to write.
    pub fn claim(&mut self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        if !self.written.iter().any(|p| p == path) {
            self.written.push(path.to_path_buf());
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        self.claim(path)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn write_json(&mut self, path: &Path, value: &impl serde::Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write(path, s)
    }

    pub fn discard(self) {
        for p in self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}
