//! JSON-lines dataset manifests.
//!
//! One record per line:
//!
//! ```json
//! {"image": "imgs/0001.ppm", "captions": {"en": ["a large airport"], "de": ["ein großer Flughafen"]}, "split": "train"}
//! {"image": {"synthetic": {"seed": 7, "size": 32}}, "captions": {"en": ["..."]}, "split": "test"}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{load_ppm, synthetic_image};
use super::language::Language;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Synthetic { synthetic: SyntheticSpec },
}

impl ImageRef {
    /// Loads the image; relative paths resolve against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Tensor<f32>> {
        match self {
            ImageRef::Path(p) => {
                let p = Path::new(p);
                let full: PathBuf = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
                load_ppm(&full)
            }
            ImageRef::Synthetic { synthetic } => Ok(synthetic_image(synthetic.seed, synthetic.size)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ImageRef::Path(p) => p.clone(),
            ImageRef::Synthetic { synthetic } => {
                format!("synthetic:{}:{}", synthetic.seed, synthetic.size)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One caption in one language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub text: String,
    pub language: Language,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCaptionRecord {
    pub image: ImageRef,
    pub captions: BTreeMap<Language, Vec<String>>,
    pub split: Split,
    /// Optional class label, used by zero-shot evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image: ImageRef,
    captions: BTreeMap<String, Vec<String>>,
    split: Split,
    #[serde(default)]
    label: Option<String>,
}

impl ImageCaptionRecord {
    pub fn english(&self) -> &[String] {
        self.captions.get(&Language::En).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Languages whose caption list is present and non-empty.
    pub fn languages(&self) -> Vec<Language> {
        self.captions
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(l, _)| *l)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.image.describe();
        let n = self.english().len();
        if n == 0 {
            return Err(Error::Validation(format!("record `{name}` has no English captions")));
        }
        for (lang, caps) in &self.captions {
            if *lang != Language::En && caps.len() != n {
                return Err(Error::Validation(format!(
                    "record `{name}`: {} {lang} captions for {n} English captions",
                    caps.len()
                )));
            }
            if caps.iter().any(|c| c.is_empty()) {
                return Err(Error::Validation(format!("record `{name}` has an empty {lang} caption")));
            }
        }
        Ok(())
    }

    fn from_raw(raw: RawRecord) -> Result<Self> {
        let mut captions = BTreeMap::new();
        for (code, caps) in raw.captions {
            let lang: Language = code.parse().map_err(|_| {
                Error::Validation(format!(
                    "record `{}`: unknown language `{code}`",
                    raw.image.describe()
                ))
            })?;
            captions.insert(lang, caps);
        }
        let rec = Self {
            image: raw.image,
            captions,
            split: raw.split,
            label: raw.label,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<ImageCaptionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let rec = ImageCaptionRecord::from_raw(raw)
            .map_err(|e| Error::Validation(format!("line {line_no}: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ImageCaptionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(BufReader::new(f))
}

pub fn write_manifest(records: &[ImageCaptionRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Validation(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// The directory relative image paths in `manifest` resolve against.
pub fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}
