//! Prompts for retrieval-augmented captioning with an external language
//! model: each block lists the captions of similar images and asks for a
//! new caption in the target language.

use crate::data::language::Language;
use crate::error::{Error, Result};

pub const DEFAULT_N_SHOTS: usize = 6;
pub const DEFAULT_K: usize = 4;
pub const FEWSHOT_CLASSES: [&str; 6] = [
    "airport",
    "denseresidential",
    "baseballfield",
    "parking",
    "stadium",
    "playground",
];

/// One prompt block for `captions` (retrieval order) and `language_name`.
pub fn lmcap_block(captions: &[String], language_name: &str) -> Result<String> {
    if captions.is_empty() {
        return Err(Error::Validation("captioning prompt needs at least one retrieved caption".into()));
    }
    if let Some(i) = captions.iter().position(|c| c.is_empty()) {
        return Err(Error::Validation(format!("retrieved caption {i} is empty")));
    }
    let lang = Language::from_name(language_name).ok_or_else(|| {
        Error::domain("build_lmcap_prompt", format!("unsupported language `{language_name}`"))
    })?;
    Ok(format!(
        "You are an intelligent image captioning bot tasked with describing remote sensing images. \
         Similar images have the following captions: {}. \
         A creative short caption that can describe this image in {} is:",
        captions.join(", "),
        lang.name()
    ))
}

/// A solved example: the block followed by its answer caption.
pub fn fewshot_block(captions: &[String], language_name: &str, answer: &str) -> Result<String> {
    Ok(format!("{} {answer}", lmcap_block(captions, language_name)?))
}

/// Few-shot blocks in the given order, then the query block, separated by
/// blank lines.
pub fn build_lmcap_prompt(retrieved: &[String], language_name: &str, fewshot_blocks: &[String]) -> Result<String> {
    let query = lmcap_block(retrieved, language_name)?;
    let mut parts: Vec<&str> = fewshot_blocks.iter().map(String::as_str).collect();
    parts.push(&query);
    Ok(parts.join("\n\n"))
}
