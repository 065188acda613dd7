//! Translation round trip with an external language model: emit one prompt
//! per English caption, read back one response per prompt.
//!
//! Prompt and response files hold records terminated by a line containing
//! only the ASCII record separator (`\x1e`), so records may span lines.

use std::path::Path;

use super::language::Language;
use super::manifest::ImageCaptionRecord;
use crate::error::{Error, Result};

pub const RECORD_SEPARATOR: &str = "\x1e";

pub fn build_translation_prompt(caption: &str, target_language_name: &str) -> Result<String> {
    let lang = Language::from_name(target_language_name).ok_or_else(|| {
        Error::domain(
            "build_translation_prompt",
            format!("unsupported language `{target_language_name}`"),
        )
    })?;
    let name = lang.name();
    Ok(format!(
        "Translate the following text from English into {name}.\nEnglish: {caption}\n{name}:"
    ))
}

/// One prompt per English caption, records and captions in manifest order.
pub fn translation_prompts(records: &[ImageCaptionRecord], language: Language) -> Result<Vec<String>> {
    records
        .iter()
        .flat_map(|r| r.english())
        .map(|c| build_translation_prompt(c, language.name()))
        .collect()
}

pub fn format_records<S: AsRef<str>>(records: &[S]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(r.as_ref());
        out.push('\n');
        out.push_str(RECORD_SEPARATOR);
        out.push('\n');
    }
    out
}

/// Inverse of [`format_records`]. Trailing text without a terminator
/// counts as a final record.
pub fn parse_records(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line == RECORD_SEPARATOR {
            out.push(current.join("\n"));
            current.clear();
        } else {
            current.push(line);
        }
    }
    // `split` yields one empty tail after a final newline.
    if current.len() > 1 || current.first().is_some_and(|l| !l.is_empty()) {
        out.push(current.join("\n"));
    }
    out
}

pub fn write_records<S: AsRef<str>>(records: &[S], path: &Path) -> Result<()> {
    std::fs::write(path, format_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_records(&text))
}

/// Attaches `responses` (one per English caption, in manifest order) to the
/// records under `language`.
pub fn ingest_translations(
    records: &[ImageCaptionRecord],
    responses: &[String],
    language: Language,
) -> Result<Vec<ImageCaptionRecord>> {
    let expected: usize = records.iter().map(|r| r.english().len()).sum();
    if responses.len() != expected {
        return Err(Error::Alignment {
            expected,
            actual: responses.len(),
        });
    }
    let mut rest = responses;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let (mine, tail) = rest.split_at(r.english().len());
        rest = tail;
        let mut rec = r.clone();
        rec.captions.insert(language, mine.iter().map(|s| s.trim().to_string()).collect());
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
