use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub shape_id: String,
    /// Path as written in the manifest, relative to the manifest directory.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Labelled list of shapes.
///
/// File format, one record per line:
/// `shape_id<TAB>relative_path<TAB>label<TAB>split`. Lines starting with `#`
/// are comments, except `# class_count = N` which pins the class count
/// (otherwise it is the largest label plus one).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_count: usize,
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, class_count: usize, root: PathBuf) -> Result<Self> {
        let m = Self { entries, class_count, root };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.shape_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate shape_id `{}`", e.shape_id)));
            }
            if e.label >= self.class_count {
                return Err(Error::Manifest(format!(
                    "shape `{}` has label {} but class_count is {}",
                    e.shape_id, e.label, self.class_count
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# class_count = {}\n", self.class_count);
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", e.shape_id, e.path.display(), e.label, e.split.as_str());
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Copy of this manifest with splits reassigned by `assign(entry_index)`.
    pub fn with_splits(&self, assign: impl Fn(usize) -> Split) -> DatasetManifest {
        let mut m = self.clone();
        for (i, e) in m.entries.iter_mut().enumerate() {
            e.split = assign(i);
        }
        m
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = parse_manifest(&text, path, root)?;
    for e in &m.entries {
        let p = m.resolve(e);
        if !p.is_file() {
            return Err(Error::Manifest(format!(
                "shape `{}`: file {} does not exist",
                e.shape_id,
                p.display()
            )));
        }
    }
    Ok(m)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, path: &Path, root: PathBuf) -> Result<DatasetManifest> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut entries = Vec::new();
    let mut declared = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "class_count" {
                    declared = Some(
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| err(line, format!("bad class_count `{}`", v.trim())))?,
                    );
                }
            }
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(line, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(err(line, "empty shape_id or path".into()));
        }
        let label = fields[2]
            .parse::<usize>()
            .map_err(|_| err(line, format!("bad label `{}`", fields[2])))?;
        let split = fields[3].parse::<Split>().map_err(|m| err(line, m))?;
        entries.push(ManifestEntry {
            shape_id: fields[0].to_string(),
            path: PathBuf::from(fields[1]),
            label,
            split,
        });
    }
    let class_count =
        declared.unwrap_or_else(|| entries.iter().map(|e| e.label + 1).max().unwrap_or(0));
    DatasetManifest::new(entries, class_count, root)
}
