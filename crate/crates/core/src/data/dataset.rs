//! CDD-style directory layout: `A/`, `B/` and `OUT/` hold the first image,
//! second image and change mask under the same file name. Splits live in
//! `train/`, `val/` and `test/` subdirectories of the root.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::{load_image_pair, load_mask};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.dir_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}` (expected train, val or test)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub image_a: PathBuf,
    pub image_b: PathBuf,
    pub mask: PathBuf,
}

impl Record {
    /// Loads `(t1, t2, mask)`; the mask must match the images' size.
    pub fn load(&self) -> Result<(Tensor, Tensor, Tensor)> {
        let (a, b) = load_image_pair(&self.image_a, &self.image_b)?;
        let m = load_mask(&self.mask)?;
        let (sa, sm) = (a.shape(), m.shape());
        if (sa.h, sa.w) != (sm.h, sm.w) {
            return Err(Error::ImageSizeMismatch {
                a: self.image_a.clone(),
                a_w: sa.w as u32,
                a_h: sa.h as u32,
                b: self.mask.clone(),
                b_w: sm.w as u32,
                b_h: sm.h as u32,
            });
        }
        Ok((a, b, m))
    }
}

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Option<Split>,
    /// Sorted by file name.
    pub records: Vec<Record>,
    /// One message per file that lacks a counterpart in another directory.
    pub warnings: Vec<String>,
}

const DIRS: [&str; 3] = ["A", "B", "OUT"];

fn list(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(dir, e))?.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// Indexes `root` (or `root/<split>` when a split is given).
pub fn index_dataset(root: &Path, split: Option<Split>) -> Result<DatasetIndex> {
    let base = match split {
        Some(s) => root.join(s.dir_name()),
        None => root.to_path_buf(),
    };
    let fail = |message: String| Error::Dataset {
        root: base.clone(),
        message,
    };
    if !base.is_dir() {
        return Err(fail("not a directory".into()));
    }
    let mut sets = Vec::with_capacity(3);
    for d in DIRS {
        let dir = base.join(d);
        if !dir.is_dir() {
            return Err(fail(format!("missing {d}/ subdirectory")));
        }
        sets.push(list(&dir)?);
    }
    let all: BTreeSet<&String> = sets.iter().flatten().collect();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for name in all {
        let missing: Vec<&str> = DIRS
            .iter()
            .zip(&sets)
            .filter(|(_, s)| !s.contains(name))
            .map(|(d, _)| *d)
            .collect();
        if missing.is_empty() {
            records.push(Record {
                name: name.clone(),
                image_a: base.join("A").join(name),
                image_b: base.join("B").join(name),
                mask: base.join("OUT").join(name),
            });
        } else {
            warnings.push(format!("{name}: no counterpart in {}", missing.join(", ")));
        }
    }
    if records.is_empty() {
        return Err(fail("no complete A/B/OUT triples".into()));
    }
    Ok(DatasetIndex {
        root: base,
        split,
        records,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, b"").unwrap();
    }

    #[test]
    fn three_triples_and_one_orphan() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.png", "a.png", "b.png"] {
            for d in DIRS {
                touch(&dir.path().join(d).join(name));
            }
        }
        touch(&dir.path().join("A").join("orphan.png"));
        let idx = index_dataset(dir.path(), None).unwrap();
        let names: Vec<&str> = idx.records.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]);
        assert_eq!(idx.warnings.len(), 1);
        assert!(idx.warnings[0].contains("orphan.png"));
        assert!(idx.warnings[0].contains("B, OUT"));
    }

    #[test]
    fn empty_root_and_missing_split_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(index_dataset(dir.path(), None), Err(Error::Dataset { .. })));
        for d in DIRS {
            std::fs::create_dir_all(dir.path().join(d)).unwrap();
        }
        assert!(matches!(index_dataset(dir.path(), None), Err(Error::Dataset { .. })));
        assert!(index_dataset(dir.path(), Some(Split::Val)).is_err());
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
