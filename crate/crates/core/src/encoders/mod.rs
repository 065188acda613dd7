//! Vision and text transformers, their projections into the shared space,
//! and the distillation projector head.

pub mod config;
pub mod params;
pub mod resize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Scalar, Tensor};

pub use config::{DinoProjectorConfig, ModelConfig, TextEncoderConfig, VisionEncoderConfig};
pub use params::{BlockLayout, Layout, ModelParams, ParamId, ParamSpec};
pub use resize::{resize_bicubic, resize_bicubic_rect};

/// Added to attention scores of padded keys.
const MASKED: f64 = -1e9;

/// Model architecture: a validated config plus the parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
}

/// Parameters registered as graph leaves, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ModelParams<T> {
        self.layout.init(seed)
    }

    /// Checks names and shapes of a parameter set against this architecture.
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.len() != self.layout.specs.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.layout.specs.len(),
                params.len()
            )));
        }
        for (spec, (_, name, t)) in self.layout.specs.iter().zip(params.iter()) {
            if spec.name != name {
                return Err(Error::Contract(format!(
                    "parameter `{name}` where `{}` was expected",
                    spec.name
                )));
            }
            if spec.shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Registers every parameter on `g`, as trainable leaves or as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Bound {
        let vars = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn log_tau(&self, b: &Bound) -> Var {
        b.var(self.layout.log_tau)
    }

    fn linear<T: Scalar>(g: &mut Graph<T>, b: &Bound, x: Var, (w, bias): (ParamId, ParamId)) -> Result<Var> {
        let y = g.matmul(x, b.var(w))?;
        g.add_broadcast(y, b.var(bias))
    }

    /// One pre-norm transformer block over `[batch, len, width]`.
    fn block<T: Scalar>(
        g: &mut Graph<T>,
        b: &Bound,
        layer: &BlockLayout,
        x: Var,
        (batch, len, width, heads): (usize, usize, usize, usize),
        mask: Option<Var>,
    ) -> Result<Var> {
        let hd = width / heads;
        let h = g.layer_norm(x, b.var(layer.ln1.0), b.var(layer.ln1.1))?;
        let h = g.reshape(h, &[batch * len, width])?;
        let split = |g: &mut Graph<T>, p: (ParamId, ParamId)| -> Result<Var> {
            let y = Self::linear(g, b, h, p)?;
            let y = g.reshape(y, &[batch, len, heads, hd])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[batch * heads, len, hd])
        };
        let q = split(g, layer.wq)?;
        let k = split(g, layer.wk)?;
        let v = split(g, layer.wv)?;
        let scores = g.batch_matmul(q, k, true)?;
        let mut scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let attn = g.softmax(scores, 2, 1.0)?;
        let ctx = g.batch_matmul(attn, v, false)?;
        let ctx = g.reshape(ctx, &[batch, heads, len, hd])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[batch * len, width])?;
        let out = Self::linear(g, b, ctx, layer.wo)?;
        let out = g.reshape(out, &[batch, len, width])?;
        let x = g.add(x, out)?;

        let h = g.layer_norm(x, b.var(layer.ln2.0), b.var(layer.ln2.1))?;
        let h = g.reshape(h, &[batch * len, width])?;
        let h = Self::linear(g, b, h, layer.fc1)?;
        let h = g.gelu(h)?;
        let h = Self::linear(g, b, h, layer.fc2)?;
        let h = g.reshape(h, &[batch, len, width])?;
        g.add(x, h)
    }

    /// `[B, 3, S, S]` images → `[B, m]` embeddings.
    pub fn encode_images<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, images: &Tensor<T>) -> Result<Var> {
        let cfg = &self.config.vision;
        let lay = &self.layout.vision;
        let patches = patchify(images, cfg.image_size, cfg.patch_size)?;
        let batch = images.shape()[0];
        let n_patches = cfg.patches_per_side().pow(2);
        let len = cfg.sequence_length();
        let w = cfg.width;

        let x = g.constant(patches);
        let x = Self::linear(g, b, x, lay.patch)?;
        let x = g.reshape(x, &[batch, n_patches, w])?;
        let x = g.prepend_token(x, b.var(lay.class_token))?;
        let x = g.add_broadcast(x, b.var(lay.positions))?;
        let mut x = x;
        for layer in &lay.blocks {
            x = Self::block(g, b, layer, x, (batch, len, w, cfg.heads), None)?;
        }
        let cls = g.select_position(x, 0)?;
        let cls = g.layer_norm(cls, b.var(lay.ln_post.0), b.var(lay.ln_post.1))?;
        g.matmul(cls, b.var(lay.proj))
    }

    /// Token sequences (each starting with the sentinel) → `[B, m]` embeddings,
    /// pooled at position 0.
    pub fn encode_texts<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, seqs: &[Vec<u32>]) -> Result<Var> {
        let cfg = &self.config.text;
        let lay = &self.layout.text;
        if seqs.is_empty() {
            return Err(Error::Contract("encode_texts on an empty batch".into()));
        }
        for s in seqs {
            if s.is_empty() {
                return Err(Error::Contract("token sequence must not be empty".into()));
            }
            if s.len() > cfg.max_length {
                return Err(Error::domain(
                    "encode_text",
                    format!("sequence of {} tokens exceeds max_length {}", s.len(), cfg.max_length),
                ));
            }
            if let Some(&id) = s.iter().find(|&&id| id as usize >= cfg.vocab_size) {
                return Err(Error::Vocabulary {
                    id,
                    vocab_size: cfg.vocab_size,
                });
            }
        }
        let batch = seqs.len();
        let len = seqs.iter().map(Vec::len).max().unwrap_or(1);
        let w = cfg.width;
        let pad = crate::data::tokenizer::PAD as usize;
        let ids: Vec<usize> = seqs
            .iter()
            .flat_map(|s| {
                s.iter()
                    .map(|&i| i as usize)
                    .chain(std::iter::repeat(pad))
                    .take(len)
            })
            .collect();
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..len).collect();

        let tok = g.gather_rows(b.var(lay.tokens), &ids)?;
        let pos = g.gather_rows(b.var(lay.positions), &pos_ids)?;
        let x = g.add(tok, pos)?;
        let mut x = g.reshape(x, &[batch, len, w])?;

        let mask = if seqs.iter().any(|s| s.len() < len) {
            let heads = cfg.heads;
            let mut m = vec![T::zero(); batch * heads * len * len];
            for (bi, s) in seqs.iter().enumerate() {
                for h in 0..heads {
                    for i in 0..len {
                        for j in s.len()..len {
                            m[((bi * heads + h) * len + i) * len + j] = T::from_f64(MASKED);
                        }
                    }
                }
            }
            Some(g.constant(Tensor::new(&[batch * heads, len, len], m)?))
        } else {
            None
        };
        for layer in &lay.blocks {
            x = Self::block(g, b, layer, x, (batch, len, w, cfg.heads), mask)?;
        }
        let pooled = g.select_position(x, 0)?;
        let pooled = g.layer_norm(pooled, b.var(lay.ln_final.0), b.var(lay.ln_final.1))?;
        g.matmul(pooled, b.var(lay.proj))
    }

    /// Bottleneck vectors (unit norm) of the projector head, `[B, bottleneck]`.
    pub fn dino_bottleneck<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, emb: Var) -> Result<Var> {
        let lay = &self.layout.dino;
        let m = self.config.embed_dim();
        let s = g.value(emb).shape().to_vec();
        if s.len() != 2 || s[1] != m {
            return Err(Error::dim("project_dino", &s, &[m]));
        }
        let h = Self::linear(g, b, emb, lay.fc1)?;
        let h = g.gelu(h)?;
        let h = Self::linear(g, b, h, lay.fc2)?;
        let h = g.gelu(h)?;
        let h = Self::linear(g, b, h, lay.fc3)?;
        g.l2_normalize(h)
    }

    /// `[B, m]` embeddings → `[B, K]` distillation logits.
    pub fn project_dino<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, emb: Var) -> Result<Var> {
        let lay = &self.layout.dino;
        let z = self.dino_bottleneck(g, b, emb)?;
        g.weight_norm_linear(z, b.var(lay.last_direction), b.var(lay.last_scale))
    }

    /// Embedding of one `[3, S, S]` image.
    pub fn encode_image<T: Scalar>(&self, params: &ModelParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = Tensor::stack(std::slice::from_ref(image))?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, params, false);
        let e = self.encode_images(&mut g, &b, &batch)?;
        g.value(e).reshape(&[self.config.embed_dim()])
    }

    /// Embedding of one token sequence.
    pub fn encode_text<T: Scalar>(&self, params: &ModelParams<T>, ids: &[u32]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, params, false);
        let e = self.encode_texts(&mut g, &b, &[ids.to_vec()])?;
        g.value(e).reshape(&[self.config.embed_dim()])
    }

    /// Distillation logits for one `[m]` embedding.
    pub fn project_dino_one<T: Scalar>(&self, params: &ModelParams<T>, emb: &Tensor<T>) -> Result<Tensor<T>> {
        let m = self.config.embed_dim();
        if emb.shape() != [m] {
            return Err(Error::dim("project_dino", emb.shape(), &[m]));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, params, false);
        let e = g.constant(emb.reshape(&[1, m])?);
        let z = self.project_dino(&mut g, &b, e)?;
        g.value(z).reshape(&[self.config.dino.output_dim])
    }

    /// Embeds many images in chunks of `chunk`; rows follow input order.
    pub fn embed_images(&self, params: &ModelParams<f32>, images: &[Tensor<f32>], chunk: usize) -> Result<Tensor<f32>> {
        self.embed_chunked(images.len(), chunk, |range| {
            let batch = Tensor::stack(&images[range])?;
            let mut g = Graph::new();
            let b = self.bind(&mut g, params, false);
            let e = self.encode_images(&mut g, &b, &batch)?;
            Ok(g.value(e).clone())
        })
    }

    /// Embeds many token sequences in chunks of `chunk`.
    pub fn embed_texts(&self, params: &ModelParams<f32>, seqs: &[Vec<u32>], chunk: usize) -> Result<Tensor<f32>> {
        self.embed_chunked(seqs.len(), chunk, |range| {
            let mut g = Graph::new();
            let b = self.bind(&mut g, params, false);
            let e = self.encode_texts(&mut g, &b, &seqs[range])?;
            Ok(g.value(e).clone())
        })
    }

    fn embed_chunked<F>(&self, n: usize, chunk: usize, f: F) -> Result<Tensor<f32>>
    where
        F: Fn(std::ops::Range<usize>) -> Result<Tensor<f32>> + Sync + Send,
    {
        let m = self.config.embed_dim();
        let chunk = chunk.max(1);
        let pieces = exec::map_indices(n.div_ceil(chunk), |c| f(c * chunk..((c + 1) * chunk).min(n)));
        let mut data = Vec::with_capacity(n * m);
        for p in pieces {
            data.extend_from_slice(p?.data());
        }
        Tensor::new(&[n, m], data)
    }
}

/// `[B, 3, S, S]` → `[B·P, 3·p·p]`, patches in raster order, channel-major
/// within a patch.
pub fn patchify<T: Scalar>(images: &Tensor<T>, image_size: usize, patch: usize) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != image_size || s[3] != image_size {
        return Err(Error::dim("encode_image", s, &[3, image_size, image_size]));
    }
    let (batch, side) = (s[0], image_size / patch);
    let d = images.data();
    let mut out = Vec::with_capacity(images.len());
    for bi in 0..batch {
        for py in 0..side {
            for px in 0..side {
                for c in 0..3 {
                    for dy in 0..patch {
                        let row = ((bi * 3 + c) * image_size + py * patch + dy) * image_size + px * patch;
                        out.extend_from_slice(&d[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(&[batch * side * side, 3 * patch * patch], out)
}

#[cfg(test)]
mod tests;
