use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const SPLITS_FILE: &str = "splits.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    /// 1-based identity.
    pub person_id: u32,
    pub sequence_id: u32,
    /// Paths relative to the dataset root, in frame order.
    pub frames: Vec<PathBuf>,
    pub masks: Option<Vec<PathBuf>>,
    pub split: Split,
}

impl SequenceEntry {
    /// 0-based class label.
    pub fn label(&self) -> usize {
        self.person_id as usize - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub root: PathBuf,
    pub classes: usize,
    pub entries: Vec<SequenceEntry>,
    /// Directory entries that did not match the layout.
    pub skipped: Vec<SkippedEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &SequenceEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }

    pub fn frame_count(&self) -> usize {
        self.entries.iter().map(|e| e.frames.len()).sum()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::dataset(
                path,
                format!("unsupported manifest schema {}", m.schema_version),
            ));
        }
        Ok(m)
    }
}

fn parse_prefixed(name: &str, prefix: &str, suffix: &str) -> Option<u32> {
    let digits = name.strip_prefix(prefix)?.strip_suffix(suffix)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn sorted_dir(path: &Path) -> Result<Vec<(String, PathBuf, bool)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_dir = entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir();
        out.push((name, entry.path(), is_dir));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

const ROOT_METADATA: [&str; 4] = [SPLITS_FILE, "manifest.json", "synth_config.json", "resolved_config.toml"];

/// Scan `root/person_<id>/seq_<id>/frame_<n>.png` (+ optional
/// `mask_<n>.png`). Splits come from `root/splits.csv` when present;
/// otherwise each person's highest-numbered sequence is the test split
/// (if the person has at least two) and the rest are training data.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::dataset(root, "not a directory"));
    }
    let mut skipped = Vec::new();
    type FrameMap = BTreeMap<u32, PathBuf>;
    let mut persons: BTreeMap<u32, BTreeMap<u32, (FrameMap, FrameMap)>> = BTreeMap::new();
    let mut any_mask = false;

    for (name, path, is_dir) in sorted_dir(root)? {
        let Some(pid) = parse_prefixed(&name, "person_", "").filter(|_| is_dir) else {
            if !ROOT_METADATA.contains(&name.as_str()) {
                skipped.push(SkippedEntry {
                    path: path.clone(),
                    reason: "does not match person_<id>/".into(),
                });
            }
            continue;
        };
        if persons.contains_key(&pid) {
            return Err(Error::dataset(&path, format!("duplicate person id {pid}")));
        }
        let mut seqs = BTreeMap::new();
        for (sname, spath, sdir) in sorted_dir(&path)? {
            let Some(sid) = parse_prefixed(&sname, "seq_", "").filter(|_| sdir) else {
                skipped.push(SkippedEntry {
                    path: spath,
                    reason: "does not match seq_<id>/".into(),
                });
                continue;
            };
            if seqs.contains_key(&sid) {
                return Err(Error::dataset(&spath, format!("duplicate sequence id {sid}")));
            }
            let mut frames: BTreeMap<u32, PathBuf> = BTreeMap::new();
            let mut masks: BTreeMap<u32, PathBuf> = BTreeMap::new();
            for (fname, fpath, fdir) in sorted_dir(&spath)? {
                let rel = fpath.strip_prefix(root).unwrap_or(&fpath).to_path_buf();
                let slot = if fdir {
                    None
                } else if let Some(n) = parse_prefixed(&fname, "frame_", ".png") {
                    Some((&mut frames, n))
                } else if let Some(n) = parse_prefixed(&fname, "mask_", ".png") {
                    any_mask = true;
                    Some((&mut masks, n))
                } else {
                    None
                };
                match slot {
                    Some((map, n)) => {
                        if map.insert(n, rel).is_some() {
                            return Err(Error::dataset(&fpath, format!("duplicate index {n}")));
                        }
                    }
                    None => skipped.push(SkippedEntry {
                        path: fpath,
                        reason: "does not match frame_<n>.png or mask_<n>.png".into(),
                    }),
                }
            }
            if frames.is_empty() {
                return Err(Error::dataset(&spath, "sequence has no frames"));
            }
            if let Some((n, _)) = masks.iter().find(|(n, _)| !frames.contains_key(n)) {
                return Err(Error::dataset(&spath, format!("mask_{n} has no matching frame")));
            }
            seqs.insert(sid, (frames, masks));
        }
        if seqs.is_empty() {
            return Err(Error::dataset(&path, "person has no sequences"));
        }
        persons.insert(pid, seqs);
    }

    if persons.is_empty() {
        return Err(Error::dataset(root, "no person_<id> directories found"));
    }
    let ids: Vec<u32> = persons.keys().copied().collect();
    if ids.iter().enumerate().any(|(i, &id)| id as usize != i + 1) {
        return Err(Error::dataset(
            root,
            format!("person ids must be dense in [1, {}], found {ids:?}", ids.len()),
        ));
    }

    let split_table = read_splits(root)?;
    let mut entries = Vec::new();
    for (&pid, seqs) in &persons {
        let last_sid = *seqs.keys().last().expect("non-empty");
        for (&sid, (frames, masks)) in seqs {
            let masks = if any_mask {
                if let Some((_, missing)) = frames.iter().find(|(n, _)| !masks.contains_key(n)) {
                    return Err(Error::dataset(
                        root.join(missing),
                        "frame has no mask while other frames in the dataset do",
                    ));
                }
                Some(masks.values().cloned().collect())
            } else {
                None
            };
            let split = match &split_table {
                Some(table) => *table.get(&(pid, sid)).ok_or_else(|| {
                    Error::dataset(root.join(SPLITS_FILE), format!("no split for person {pid} seq {sid}"))
                })?,
                None if seqs.len() >= 2 && sid == last_sid => Split::Test,
                None => Split::Train,
            };
            entries.push(SequenceEntry {
                person_id: pid,
                sequence_id: sid,
                frames: frames.values().cloned().collect(),
                masks,
                split,
            });
        }
    }
    for s in &skipped {
        log::warn!("skipping {}: {}", s.path.display(), s.reason);
    }
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        root: root.to_path_buf(),
        classes: persons.len(),
        entries,
        skipped,
    })
}

fn read_splits(root: &Path) -> Result<Option<BTreeMap<(u32, u32), Split>>> {
    let path = root.join(SPLITS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut table = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::dataset(&path, format!("malformed line {}", lineno + 1));
        if cols.len() != 3 {
            return Err(bad());
        }
        let pid: u32 = cols[0].trim().parse().map_err(|_| bad())?;
        let sid: u32 = cols[1].trim().parse().map_err(|_| bad())?;
        let split: Split = cols[2].parse()?;
        if !seen.insert((pid, sid)) {
            return Err(Error::dataset(&path, format!("duplicate row for person {pid} seq {sid}")));
        }
        table.insert((pid, sid), split);
    }
    Ok(Some(table))
}

pub fn write_splits(root: &Path, rows: &[(u32, u32, Split)]) -> Result<()> {
    let mut text = String::from("person,sequence,split\n");
    for (p, s, split) in rows {
        text.push_str(&format!("{p},{s},{}\n", split.as_str()));
    }
    let path = root.join(SPLITS_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
