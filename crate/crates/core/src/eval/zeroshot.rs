use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::retrieval::{rank_order, SimilarityMatrix};

pub const CLASS_SLOT: &str = "{class name}";
pub const DEFAULT_ZERO_SHOT_TEMPLATE: &str = "a satellite photo of {class name}";

/// A prompt with exactly one `{class name}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroShotTemplate(String);

impl ZeroShotTemplate {
    pub fn new(template: &str) -> Result<Self> {
        let n = template.matches(CLASS_SLOT).count();
        if n != 1 {
            return Err(Error::Validation(format!(
                "zero-shot template must contain `{CLASS_SLOT}` exactly once, found {n}"
            )));
        }
        Ok(Self(template.to_string()))
    }

    pub fn expand(&self, class_name: &str) -> String {
        self.0.replace(CLASS_SLOT, class_name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for ZeroShotTemplate {
    fn default() -> Self {
        Self(DEFAULT_ZERO_SHOT_TEMPLATE.to_string())
    }
}

/// Index of the most cosine-similar class embedding for each image, lowest
/// class index among ties.
pub fn classify_by_embeddings(images: &Tensor<f32>, classes: &Tensor<f32>) -> Result<Vec<usize>> {
    if classes.rank() != 2 || classes.shape()[0] == 0 {
        return Err(Error::Contract("zero-shot classification needs at least one class".into()));
    }
    let sim = SimilarityMatrix::cosine(images, classes)?;
    Ok((0..sim.rows()).map(|i| rank_order(sim.row(i))[0]).collect())
}

/// Expands `class_names` through `template`, embeds them with `encode_texts`
/// and assigns each image its nearest class.
pub fn zero_shot_classify(
    image_embeddings: &Tensor<f32>,
    class_names: &[String],
    template: &ZeroShotTemplate,
    encode_texts: impl FnOnce(&[String]) -> Result<Tensor<f32>>,
) -> Result<Vec<usize>> {
    if class_names.is_empty() {
        return Err(Error::Contract("zero-shot classification needs at least one class".into()));
    }
    let prompts: Vec<String> = class_names.iter().map(|c| template.expand(c)).collect();
    let classes = encode_texts(&prompts)?;
    classify_by_embeddings(image_embeddings, &classes)
}

/// Percentage of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::dim("accuracy", &[predicted.len()], &[labels.len()]));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}
