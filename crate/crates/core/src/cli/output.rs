//! Staged CSV output: nothing is written until [`OutputSet::commit`], which
//! writes each file to a temporary sibling and renames it into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metadata recorded at the top of every file.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub seed: u64,
    pub config_hash: String,
    pub command_line: String,
}

impl Header {
    pub fn render(&self) -> String {
        format!(
            "# spectator {VERSION}\n# seed: {}\n# config_sha256: {}\n# command: {}\n",
            self.seed, self.config_hash, self.command_line
        )
    }
}

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn body(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str())
    }

    /// Writes every staged file with `header` prepended; returns the paths.
    pub fn commit(&self, dir: &Path, header: &Header) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let head = header.render();
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, body) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
            let write = || -> std::io::Result<()> {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(head.as_bytes())?;
                f.write_all(body.as_bytes())?;
                f.sync_all()
            };
            if let Err(e) = write() {
                let _ = fs::remove_file(&tmp);
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(e.into());
            }
            staged.push((tmp, path));
        }
        let mut out = Vec::with_capacity(staged.len());
        for (tmp, path) in staged {
            fs::rename(&tmp, &path)?;
            out.push(path);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_header_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut set = OutputSet::new();
        set.add("a.csv", "x,y\n1,2\n".into());
        set.add("b.csv", "z\n".into());
        let h = Header { seed: 7, config_hash: "ab".into(), command_line: "spectator simulate".into() };
        let paths = set.commit(dir.path(), &h).unwrap();
        assert_eq!(paths.len(), 2);
        let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert!(a.starts_with("# spectator "));
        assert!(a.contains("# seed: 7\n# config_sha256: ab\n# command: spectator simulate\nx,y\n1,2\n"));
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }
}
