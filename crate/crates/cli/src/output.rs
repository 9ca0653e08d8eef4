//! Output files that only appear once a command has fully succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Collects files under a staging name and renames them into place on
/// [`Outputs::commit`]. Dropping without committing removes the staged files.
pub struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), staged: Vec::new() })
    }

    /// Returns a staging path for `name`; write the file there.
    pub fn stage(&mut self, name: &str) -> PathBuf {
        let tmp = self.dir.join(format!(".{name}.partial"));
        self.staged.push((tmp.clone(), self.dir.join(name)));
        tmp
    }

    /// Writes `contents` to the staging path of `name`.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let tmp = self.stage(name);
        fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let staged = std::mem::take(&mut self.staged);
        let mut done = Vec::new();
        for (tmp, dst) in staged {
            fs::rename(&tmp, &dst).with_context(|| format!("moving {} into place", dst.display()))?;
            done.push(dst);
        }
        Ok(done)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_files_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut out = Outputs::new(dir.path()).unwrap();
            out.write("a.csv", "x").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let mut out = Outputs::new(dir.path()).unwrap();
        out.write("a.csv", "x").unwrap();
        out.commit().unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap(), "x");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
