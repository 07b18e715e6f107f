use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CanError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

/// One manifest line. `person_id == -1` marks junk images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "id")]
    pub person_id: i64,
    #[serde(rename = "cam")]
    pub camera_id: u32,
    pub split: Split,
    pub file: String,
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
    index: BTreeMap<(Split, i64), Vec<usize>>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.file.as_str()) {
                return Err(CanError::Data(format!("duplicate path {}", r.file)));
            }
            if r.person_id < -1 {
                return Err(CanError::Data(format!("invalid person id {} for {}", r.person_id, r.file)));
            }
        }
        let mut index: BTreeMap<(Split, i64), Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            index.entry((r.split, r.person_id)).or_default().push(i);
        }
        Ok(Manifest {
            root: root.into(),
            records,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path_of(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.file)
    }

    /// Record indices of `id` within `split`, in file order.
    pub fn indices(&self, split: Split, id: i64) -> &[usize] {
        self.index.get(&(split, id)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ids present in `split`, ascending (junk included).
    pub fn ids(&self, split: Split) -> Vec<i64> {
        self.index.keys().filter(|(s, _)| *s == split).map(|&(_, id)| id).collect()
    }

    /// Non-junk training ids, ascending.
    pub fn train_ids(&self) -> Vec<i64> {
        self.ids(Split::Train).into_iter().filter(|&id| id >= 0).collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Every training id must have at least `k` images for PK sampling.
    pub fn validate_pk(&self, k: usize) -> Result<()> {
        for id in self.train_ids() {
            let n = self.indices(Split::Train, id).len();
            if n < k {
                return Err(CanError::Data(format!(
                    "train id {id} has {n} images, PK sampling needs K = {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let p = self.path_of(r);
            if !p.is_file() {
                return Err(CanError::Data(format!("missing blob {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| CanError::io(path, e))
    }
}

/// Parses a JSON-lines manifest. Paths resolve against the manifest's
/// directory; every referenced blob must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| CanError::io(&path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CanError::Manifest {
            path: path.clone(),
            line: n + 1,
            msg,
        };
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !seen.insert(rec.file.clone()) {
            return Err(err(format!("duplicate path {}", rec.file)));
        }
        if rec.person_id < -1 {
            return Err(err(format!("invalid person id {}", rec.person_id)));
        }
        records.push(rec);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest::new(root, records)?;
    manifest.check_files()?;
    Ok(manifest)
}

/// `(person id, camera id)` from a Market-1501 style name such as
/// `0002_c1s1_000451_03.cant`; junk images carry id `-1`.
pub fn parse_market_filename(name: &str) -> Option<(i64, u32)> {
    let (id, rest) = name.split_once('_')?;
    let id: i64 = id.parse().ok()?;
    let cam_digits: String = rest.strip_prefix('c')?.chars().take_while(char::is_ascii_digit).collect();
    Some((id, cam_digits.parse().ok()?))
}

/// Builds records for every Market-named `.cant` blob in `dir` (sorted by
/// file name), all assigned to `split`. Unparseable names are skipped.
pub fn manifest_from_market_dir(root: impl AsRef<Path>, subdir: &str, split: Split) -> Result<Vec<SampleRecord>> {
    let dir = root.as_ref().join(subdir);
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| CanError::io(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".cant"))
        .collect();
    names.sort();
    Ok(names
        .into_iter()
        .filter_map(|n| {
            let (id, cam) = parse_market_filename(&n)?;
            Some(SampleRecord {
                person_id: id,
                camera_id: cam,
                split,
                file: format!("{subdir}/{n}"),
            })
        })
        .collect())
}
