//! Dataset manifest: UTF-8 text, one `<id>\t<split>\t<hr-path>\t<topo-path>`
//! entry per line. Lines starting with `#` are comments; `# seed=<n>`
//! records the generator seed. Relative paths resolve against the
//! manifest's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub hr_path: PathBuf,
    pub topo_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed={seed}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.id,
                e.split,
                e.hr_path.display(),
                e.topo_path.display()
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(seed) = comment.trim().strip_prefix("seed=") {
                    manifest.seed = Some(seed.trim().parse().map_err(|_| {
                        Error::Manifest(format!("line {}: bad seed `{seed}`", lineno + 1))
                    })?);
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, split, hr, topo] = cols[..] else {
                return Err(Error::Manifest(format!(
                    "line {}: expected 4 tab-separated columns, found {}",
                    lineno + 1,
                    cols.len()
                )));
            };
            if !seen.insert(id.to_string()) {
                return Err(Error::Manifest(format!(
                    "line {}: duplicate id `{id}`",
                    lineno + 1
                )));
            }
            manifest.entries.push(ManifestEntry {
                id: id.to_string(),
                split: split.parse()?,
                hr_path: PathBuf::from(hr),
                topo_path: PathBuf::from(topo),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Reads a manifest, resolves relative paths against its directory and
    /// checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut manifest = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for e in &mut manifest.entries {
            for p in [&mut e.hr_path, &mut e.topo_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "entry `{}`: missing file {}",
                        e.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }
}
