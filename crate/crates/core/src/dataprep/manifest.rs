use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::{Image, Mask};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub object_id: String,
    pub label: Label,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanvasSpec {
    pub width: usize,
    pub height: usize,
}

/// Optional first line of a manifest, `{"header": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<CanvasSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: ManifestHeader,
}

/// Records plus the directory their relative paths resolve against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub header: Option<ManifestHeader>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Self {
        Self {
            root: root.into(),
            header: None,
            records,
        }
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_image(&self, r: &SampleRecord) -> Result<Image> {
        Image::load(&self.resolve(&r.image))
    }

    pub fn load_mask(&self, r: &SampleRecord) -> Result<Option<Mask>> {
        r.mask
            .as_ref()
            .map(|m| Mask::load(&self.resolve(m)))
            .transpose()
    }

    pub fn load_defect_mask(&self, r: &SampleRecord) -> Result<Option<Mask>> {
        r.defect_mask
            .as_ref()
            .map(|m| Mask::load(&self.resolve(m)))
            .transpose()
    }

    /// Line-delimited JSON, header first when present.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(
                &serde_json::to_string(&HeaderLine { header: h.clone() }).expect("serializable"),
            );
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Fails naming the first record whose files are missing.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let paths = std::iter::once(&r.image)
                .chain(&r.mask)
                .chain(&r.defect_mask);
            for p in paths {
                if !self.resolve(p).is_file() {
                    return Err(Error::Validation(format!(
                        "sample {:?}: missing file {}",
                        r.sample_id,
                        self.resolve(p).display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses manifest text without touching the filesystem. Blank lines are
/// skipped; errors carry 1-based line numbers.
pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(root, Vec::new());
    let mut seen = HashSet::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if first && line.contains("\"header\"") {
            let h: HeaderLine = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: line_no,
                message: e.to_string(),
            })?;
            manifest.header = Some(h.header);
            first = false;
            continue;
        }
        first = false;
        let r: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if r.sample_id.is_empty() || r.object_id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                message: "sample_id and object_id must be non-empty".into(),
            });
        }
        if !seen.insert(r.sample_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate sample_id {:?} on line {line_no}",
                r.sample_id
            )));
        }
        manifest.records.push(r);
    }
    Ok(manifest)
}

/// Reads and validates a manifest; relative paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = parse_manifest(&text, root)?;
    m.check_files()?;
    Ok(m)
}
