use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Scratch directory next to the destination. Outputs are written here and
/// moved into place by [`Stage::commit`]; dropping an uncommitted stage
/// deletes it.
pub struct Stage {
    dir: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Stage {
    /// Stage outputs destined for directory `dest`.
    pub fn new(dest: &Path) -> Result<Self> {
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = dest
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Stage {
            dir,
            dest: dest.to_path_buf(),
            committed: false,
        })
    }

    /// Stage files destined for the directory containing `file`.
    pub fn for_file(file: &Path) -> Result<Self> {
        match file.parent() {
            Some(p) if !p.as_os_str().is_empty() => Stage::new(p),
            _ => Stage::new(Path::new(".")),
        }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Move every staged entry into the destination, replacing entries of
    /// the same name.
    pub fn commit(mut self) -> Result<()> {
        fs::create_dir_all(&self.dest)
            .with_context(|| format!("creating {}", self.dest.display()))?;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let target = self.dest.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            }
            fs::rename(entry.path(), &target)
                .with_context(|| format!("moving output to {}", target.display()))?;
        }
        fs::remove_dir(&self.dir)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
