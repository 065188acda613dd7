//! Cross-modal retrieval: ranking, recall@k and the six-number report.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Query × gallery cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim("similarity_matrix", &[rows, cols], &[values.len()]));
        }
        if let Some(v) = values.iter().find(|v| !(v.abs() <= 1.0 + 1e-5)) {
            return Err(Error::Validation(format!("similarity {v} outside [-1, 1]")));
        }
        Ok(Self { rows, cols, values })
    }

    /// Cosine similarities between the rows of `queries` and `gallery`.
    pub fn cosine(queries: &Tensor<f32>, gallery: &Tensor<f32>) -> Result<Self> {
        if queries.rank() != 2 || gallery.rank() != 2 || queries.shape()[1] != gallery.shape()[1] {
            return Err(Error::dim("cosine_similarity", queries.shape(), gallery.shape()));
        }
        let qn = unit_rows(queries);
        let gn = unit_rows(gallery);
        let m = queries.shape()[1];
        let (q, g) = (queries.shape()[0], gallery.shape()[0]);
        let mut values = Vec::with_capacity(q * g);
        for i in 0..q {
            let a = &qn[i * m..(i + 1) * m];
            for j in 0..g {
                let b = &gn[j * m..(j + 1) * m];
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                values.push(d.clamp(-1.0, 1.0));
            }
        }
        Self::new(q, g, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.values[i * self.cols + j]);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn unit_rows(t: &Tensor<f32>) -> Vec<f64> {
    let m = t.last_dim();
    let mut out: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    for row in out.chunks_mut(m.max(1)) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Correct gallery indices for each query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    correct: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn new(correct: Vec<Vec<usize>>, gallery_size: usize) -> Result<Self> {
        for (q, c) in correct.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::Validation(format!("query {q} has no correct gallery item")));
            }
            if let Some(&bad) = c.iter().find(|&&i| i >= gallery_size) {
                return Err(Error::Validation(format!(
                    "query {q}: gallery index {bad} out of range for {gallery_size} items"
                )));
            }
        }
        Ok(Self { correct })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            correct: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn queries(&self) -> usize {
        self.correct.len()
    }

    pub fn correct(&self, q: usize) -> &[usize] {
        &self.correct[q]
    }
}

/// Gallery indices by descending score, ascending index among ties.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Position of `target` in [`rank_order`] without sorting.
fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < target))
        .count()
}

/// Percentage of queries with a correct item among the top `k`.
pub fn recall_at_k(sim: &SimilarityMatrix, gt: &GroundTruth, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("recall_at_k", "k must be >= 1"));
    }
    if k > sim.cols() {
        return Err(Error::domain(
            "recall_at_k",
            format!("k = {k} exceeds gallery size {}", sim.cols()),
        ));
    }
    if gt.queries() != sim.rows() {
        return Err(Error::dim("recall_at_k", &[sim.rows(), sim.cols()], &[gt.queries()]));
    }
    if sim.rows() == 0 {
        return Ok(0.0);
    }
    let hits = (0..sim.rows())
        .filter(|&q| {
            let row = sim.row(q);
            gt.correct(q).iter().any(|&c| c < row.len() && rank_of(row, c) < k)
        })
        .count();
    Ok(100.0 * hits as f64 / sim.rows() as f64)
}

pub fn mean_recall(values: &[f64]) -> Result<f64> {
    if values.len() != 6 {
        return Err(Error::Contract(format!("mean recall takes 6 values, got {}", values.len())));
    }
    Ok(values.iter().sum::<f64>() / 6.0)
}

/// Indices of the `k` gallery rows most cosine-similar to `query`.
pub fn retrieve_top_k(query: &[f32], gallery: &Tensor<f32>, k: usize) -> Result<Vec<usize>> {
    if gallery.rank() != 2 || gallery.shape()[0] == 0 {
        return Err(Error::Contract("retrieval over an empty gallery".into()));
    }
    if k > gallery.shape()[0] {
        return Err(Error::domain(
            "retrieve_top_k",
            format!("k = {k} exceeds gallery size {}", gallery.shape()[0]),
        ));
    }
    let q = Tensor::new(&[1, query.len()], query.to_vec())?;
    let sim = SimilarityMatrix::cosine(&q, gallery)?;
    let mut order = rank_order(sim.row(0));
    order.truncate(k);
    Ok(order)
}

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Image→text and text→image recall at 1/5/10 plus their mean, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub i2t_r1: f64,
    pub i2t_r5: f64,
    pub i2t_r10: f64,
    pub t2i_r1: f64,
    pub t2i_r5: f64,
    pub t2i_r10: f64,
    pub mean_recall: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl RetrievalReport {
    pub fn from_values(i2t: [f64; 3], t2i: [f64; 3]) -> Result<Self> {
        let mr = mean_recall(&[i2t[0], i2t[1], i2t[2], t2i[0], t2i[1], t2i[2]])?;
        Ok(Self {
            i2t_r1: i2t[0],
            i2t_r5: i2t[1],
            i2t_r10: i2t[2],
            t2i_r1: t2i[0],
            t2i_r5: t2i[1],
            t2i_r10: t2i[2],
            mean_recall: mr,
        })
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.i2t_r1,
            self.i2t_r5,
            self.i2t_r10,
            self.t2i_r1,
            self.t2i_r5,
            self.t2i_r10,
            self.mean_recall,
        ]
    }

    /// JSON object with every value rounded to 2 decimals.
    pub fn to_json(&self) -> String {
        let v = self.values().map(round2);
        let rounded = Self {
            i2t_r1: v[0],
            i2t_r5: v[1],
            i2t_r10: v[2],
            t2i_r1: v[3],
            t2i_r5: v[4],
            t2i_r10: v[5],
            mean_recall: v[6],
        };
        serde_json::to_string_pretty(&rounded).expect("plain struct serializes")
    }

    pub const CSV_HEADER: &'static str = "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,mean_recall";

    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Full retrieval evaluation. Text row `t` describes image `caption_owner[t]`.
/// Image→text counts a hit if any of the image's captions ranks in the top
/// k; every caption is a separate text→image query. `k` is capped at the
/// gallery size.
pub fn evaluate_retrieval(
    image_embeddings: &Tensor<f32>,
    text_embeddings: &Tensor<f32>,
    caption_owner: &[usize],
) -> Result<RetrievalReport> {
    let n_img = image_embeddings.shape().first().copied().unwrap_or(0);
    let n_txt = text_embeddings.shape().first().copied().unwrap_or(0);
    if caption_owner.len() != n_txt {
        return Err(Error::dim("evaluate_retrieval", &[n_txt], &[caption_owner.len()]));
    }
    if n_img == 0 || n_txt == 0 {
        return Err(Error::Contract("retrieval evaluation needs images and captions".into()));
    }
    let mut captions_of = vec![Vec::new(); n_img];
    for (t, &owner) in caption_owner.iter().enumerate() {
        if owner >= n_img {
            return Err(Error::Validation(format!("caption {t} points at missing image {owner}")));
        }
        captions_of[owner].push(t);
    }
    let i2t_sim = SimilarityMatrix::cosine(image_embeddings, text_embeddings)?;
    let t2i_sim = i2t_sim.transpose();
    let i2t_gt = GroundTruth::new(captions_of, n_txt)?;
    let t2i_gt = GroundTruth::new(caption_owner.iter().map(|&o| vec![o]).collect(), n_img)?;
    let mut i2t = [0.0; 3];
    let mut t2i = [0.0; 3];
    for (slot, &k) in RECALL_KS.iter().enumerate() {
        i2t[slot] = recall_at_k(&i2t_sim, &i2t_gt, k.min(n_txt))?;
        t2i[slot] = recall_at_k(&t2i_sim, &t2i_gt, k.min(n_img))?;
    }
    RetrievalReport::from_values(i2t, t2i)
}

/// Drops repeated captions, keeping first occurrences in order.
pub fn dedupe_captions(captions: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    captions.iter().filter(|c| seen.insert(c.as_str())).cloned().collect()
}
