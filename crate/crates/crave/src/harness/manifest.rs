//! Dataset manifests: one record per video with its frames path, prompt,
//! optional MOS and optional generator label, stored as diffable TSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::HarnessError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
const HEADER: &str = "video_id\tframes\tprompt\tmos\tgenerator";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub video_id: String,
    pub frames: String,
    pub prompt: String,
    pub mos: Option<f64>,
    pub generator: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub schema_version: u32,
    /// Directory relative frame paths are resolved against (the manifest's
    /// parent when loaded from disk).
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self, HarnessError> {
        let m = DatasetManifest {
            records,
            schema_version: MANIFEST_SCHEMA_VERSION,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if r.video_id.is_empty() {
                return Err(HarnessError::MissingField("video_id".into()));
            }
            if r.frames.is_empty() {
                return Err(HarnessError::MissingField(format!("frames for {}", r.video_id)));
            }
            if r.prompt.trim().is_empty() {
                return Err(HarnessError::MissingField(format!("prompt for {}", r.video_id)));
            }
            if let Some(m) = r.mos {
                if !m.is_finite() {
                    return Err(HarnessError::Parse(format!("non-finite mos for {}", r.video_id)));
                }
            }
            if !seen.insert(r.video_id.clone()) {
                return Err(HarnessError::DuplicateId(r.video_id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Absolute frames path for one record.
    pub fn frames_path(&self, record: &Record) -> PathBuf {
        let p = Path::new(&record.frames);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// MOS for every record, or which record is missing one.
    pub fn mos_vector(&self) -> Result<Vec<f64>, HarnessError> {
        self.records
            .iter()
            .map(|r| r.mos.ok_or_else(|| HarnessError::MissingMos(r.video_id.clone())))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("# crave-manifest-v{}\n{HEADER}\n", self.schema_version);
        for r in &self.records {
            let mos = r.mos.map(|m| m.to_string()).unwrap_or_default();
            let generator = r.generator.clone().unwrap_or_default();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.video_id, r.frames, r.prompt, mos, generator
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, HarnessError> {
    let mut lines = text.lines();
    let version_line =
        lines.next().ok_or_else(|| HarnessError::Parse("empty manifest".into()))?;
    let schema_version = version_line
        .strip_prefix("# crave-manifest-v")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| HarnessError::Parse("missing `# crave-manifest-v1` line".into()))?;
    if schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(HarnessError::Parse(format!("unsupported schema version {schema_version}")));
    }
    let header = lines.next().ok_or_else(|| HarnessError::Parse("missing header".into()))?;
    if header != HEADER {
        return Err(HarnessError::Parse(format!("bad header {header:?}")));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 5 {
            return Err(HarnessError::Parse(format!(
                "line {}: expected 5 cells, got {}",
                lineno + 3,
                cells.len()
            )));
        }
        let mos = if cells[3].trim().is_empty() {
            None
        } else {
            Some(cells[3].trim().parse::<f64>().map_err(|e| {
                HarnessError::Parse(format!("line {}: bad mos: {e}", lineno + 3))
            })?)
        };
        let generator =
            if cells[4].trim().is_empty() { None } else { Some(cells[4].trim().to_string()) };
        records.push(Record {
            video_id: cells[0].trim().to_string(),
            frames: cells[1].trim().to_string(),
            prompt: cells[2].to_string(),
            mos,
            generator,
        });
    }
    DatasetManifest::new(records)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut manifest = parse_manifest(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}
