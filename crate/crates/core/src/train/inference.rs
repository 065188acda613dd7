//! Embedding manifests with trained parameters and scoring them.

use std::path::Path;

use crate::data::language::Language;
use crate::data::manifest::ImageCaptionRecord;
use crate::data::tokenizer::tokenize;
use crate::encoders::{resize_bicubic, Model, ModelParams};
use crate::error::{Error, Result};
use crate::eval::retrieval::{dedupe_captions, evaluate_retrieval, RetrievalReport};
use crate::exec;
use crate::tensor::Tensor;

/// Rows per forward pass when embedding.
pub const EMBED_CHUNK: usize = 32;

/// Resizes a `[3, H, W]` image to the model input size when needed.
pub fn prepare_image(image: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s[1] == size && s[2] == size {
        return Ok(image.clone());
    }
    Ok(resize_bicubic(image, size)?.map(|x| x.clamp(0.0, 1.0)))
}

pub fn load_images(records: &[ImageCaptionRecord], base_dir: &Path, size: usize) -> Result<Vec<Tensor<f32>>> {
    exec::map_indices(records.len(), |i| prepare_image(&records[i].image.load(base_dir)?, size))
        .into_iter()
        .collect()
}

pub fn embed_images(model: &Model, params: &ModelParams<f32>, images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    model.embed_images(params, images, EMBED_CHUNK)
}

pub fn embed_texts(model: &Model, params: &ModelParams<f32>, texts: &[String]) -> Result<Tensor<f32>> {
    let max_len = model.config().text.max_length;
    let seqs: Vec<Vec<u32>> = texts.iter().map(|t| tokenize(t, max_len)).collect();
    model.embed_texts(params, &seqs, EMBED_CHUNK)
}

/// All captions in `language`, flattened in record order, with the index
/// of the record each one describes.
pub fn caption_corpus(
    records: &[ImageCaptionRecord],
    language: Language,
    dedupe: bool,
) -> Result<(Vec<String>, Vec<usize>)> {
    let mut texts = Vec::new();
    let mut owners = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let caps = r.captions.get(&language).filter(|c| !c.is_empty()).ok_or_else(|| {
            Error::Validation(format!("record `{}` has no {language} captions", r.image.describe()))
        })?;
        let caps = if dedupe { dedupe_captions(caps) } else { caps.clone() };
        owners.extend(std::iter::repeat_n(i, caps.len()));
        texts.extend(caps);
    }
    Ok((texts, owners))
}

/// Image↔text recall over `records`, every caption in `language` counted.
pub fn retrieval_report(
    model: &Model,
    params: &ModelParams<f32>,
    records: &[ImageCaptionRecord],
    base_dir: &Path,
    language: Language,
    dedupe: bool,
) -> Result<RetrievalReport> {
    if records.is_empty() {
        return Err(Error::Validation("no records to evaluate".into()));
    }
    let (texts, owners) = caption_corpus(records, language, dedupe)?;
    let images = load_images(records, base_dir, model.config().vision.image_size)?;
    let img = embed_images(model, params, &images)?;
    let txt = embed_texts(model, params, &texts)?;
    evaluate_retrieval(&img, &txt, &owners)
}
