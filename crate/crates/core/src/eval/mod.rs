//! Retrieval and classification metrics, the per-class 80/20 split and
//! captioning prompts.

pub mod lmcap;
pub mod retrieval;
pub mod split;
pub mod zeroshot;

pub use lmcap::{build_lmcap_prompt, fewshot_block, lmcap_block};
pub use retrieval::{
    dedupe_captions, evaluate_retrieval, mean_recall, recall_at_k, retrieve_top_k, GroundTruth, RetrievalReport,
    SimilarityMatrix,
};
pub use split::{split_80_20, ClassSplit};
pub use zeroshot::{classify_by_embeddings, zero_shot_classify, ZeroShotTemplate};
