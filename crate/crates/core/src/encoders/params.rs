use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{Domain, KeyedRng};
use crate::tensor::{Scalar, Tensor};

use super::config::ModelConfig;

/// Initial contrastive temperature satisfies 1/τ = 14.3.
pub const INITIAL_INV_TEMPERATURE: f64 = 14.3;
const INIT_STD: f64 = 0.02;
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1: (ParamId, ParamId),
    pub wq: (ParamId, ParamId),
    pub wk: (ParamId, ParamId),
    pub wv: (ParamId, ParamId),
    pub wo: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct VisionLayout {
    pub patch: (ParamId, ParamId),
    pub class_token: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<BlockLayout>,
    pub ln_post: (ParamId, ParamId),
    pub proj: ParamId,
}

#[derive(Debug, Clone)]
pub struct TextLayout {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<BlockLayout>,
    pub ln_final: (ParamId, ParamId),
    pub proj: ParamId,
}

#[derive(Debug, Clone)]
pub struct DinoLayout {
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
    pub fc3: (ParamId, ParamId),
    pub last_direction: ParamId,
    pub last_scale: ParamId,
}

/// Where every tensor of the model lives in a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub vision: VisionLayout,
    pub text: TextLayout,
    pub dino: DinoLayout,
    pub log_tau: ParamId,
    pub specs: Vec<ParamSpec>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        (
            self.add(format!("{prefix}.weight"), &[fan_in, fan_out], Init::TruncNormal),
            self.add(format!("{prefix}.bias"), &[fan_out], Init::Zeros),
        )
    }

    fn norm(&mut self, prefix: &str, width: usize) -> (ParamId, ParamId) {
        (
            self.add(format!("{prefix}.gain"), &[width], Init::Ones),
            self.add(format!("{prefix}.bias"), &[width], Init::Zeros),
        )
    }

    fn block(&mut self, prefix: &str, width: usize) -> BlockLayout {
        BlockLayout {
            ln1: self.norm(&format!("{prefix}.ln1"), width),
            wq: self.linear(&format!("{prefix}.attn.q"), width, width),
            wk: self.linear(&format!("{prefix}.attn.k"), width, width),
            wv: self.linear(&format!("{prefix}.attn.v"), width, width),
            wo: self.linear(&format!("{prefix}.attn.out"), width, width),
            ln2: self.norm(&format!("{prefix}.ln2"), width),
            fc1: self.linear(&format!("{prefix}.mlp.fc1"), width, MLP_RATIO * width),
            fc2: self.linear(&format!("{prefix}.mlp.fc2"), MLP_RATIO * width, width),
        }
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let v = &config.vision;
        let vw = v.width;
        let vision = VisionLayout {
            patch: b.linear("vision.patch", v.patch_dim(), vw),
            class_token: b.add("vision.class_token".into(), &[vw], Init::TruncNormal),
            positions: b.add(
                "vision.positions".into(),
                &[v.sequence_length(), vw],
                Init::TruncNormal,
            ),
            blocks: (0..v.depth)
                .map(|i| b.block(&format!("vision.block{i}"), vw))
                .collect(),
            ln_post: b.norm("vision.ln_post", vw),
            proj: b.add("vision.proj".into(), &[vw, v.embed_dim], Init::TruncNormal),
        };
        let t = &config.text;
        let tw = t.width;
        let text = TextLayout {
            tokens: b.add("text.tokens".into(), &[t.vocab_size, tw], Init::TruncNormal),
            positions: b.add("text.positions".into(), &[t.max_length, tw], Init::TruncNormal),
            blocks: (0..t.depth)
                .map(|i| b.block(&format!("text.block{i}"), tw))
                .collect(),
            ln_final: b.norm("text.ln_final", tw),
            proj: b.add("text.proj".into(), &[tw, t.embed_dim], Init::TruncNormal),
        };
        let d = &config.dino;
        let m = config.embed_dim();
        let dino = DinoLayout {
            fc1: b.linear("dino.fc1", m, d.hidden_dim),
            fc2: b.linear("dino.fc2", d.hidden_dim, d.hidden_dim),
            fc3: b.linear("dino.fc3", d.hidden_dim, d.bottleneck_dim),
            last_direction: b.add(
                "dino.last.direction".into(),
                &[d.output_dim, d.bottleneck_dim],
                Init::TruncNormal,
            ),
            last_scale: b.add("dino.last.scale".into(), &[d.output_dim], Init::Ones),
        };
        let log_tau = b.add(
            "log_tau".into(),
            &[1],
            Init::Constant((1.0 / INITIAL_INV_TEMPERATURE).ln()),
        );
        Layout {
            vision,
            text,
            dino,
            log_tau,
            specs: b.specs,
        }
    }

    /// Parameters a pure function of `seed`: one stream, drawn in layout order.
    pub fn init<T: Scalar>(&self, seed: u64) -> ModelParams<T> {
        let mut rng = KeyedRng::new(seed, Domain::Init, &[]);
        let tensors = self
            .specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        T::from_f64(match s.init {
                            Init::TruncNormal => rng.truncated_normal(INIT_STD),
                            Init::Zeros => 0.0,
                            Init::Ones => 1.0,
                            Init::Constant(c) => c,
                        })
                    })
                    .collect();
                Tensor::new(&s.shape, data).expect("spec shapes are consistent")
            })
            .collect();
        ModelParams {
            names: Arc::new(self.specs.iter().map(|s| s.name.clone()).collect()),
            tensors,
        }
    }
}

/// An ordered, named set of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Arc<Vec<String>>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "{} names for {} tensors",
                names.len(),
                tensors.len()
            )));
        }
        Ok(Self {
            names: Arc::new(names),
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .enumerate()
            .zip(self.names.iter())
            .map(|((i, t), n)| (ParamId(i), n.as_str(), t))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Same names and shapes, in the same order.
    pub fn check_same_structure<U: Scalar>(&self, other: &ModelParams<U>) -> Result<()> {
        if self.names.as_slice() != other.names.as_slice() {
            return Err(Error::Contract(
                "parameter sets have different names or ordering".into(),
            ));
        }
        for ((a, b), name) in self.tensors.iter().zip(&other.tensors).zip(self.names.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{name}`: shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// The contrastive temperature τ = exp(log_tau).
    pub fn temperature(&self, layout: &Layout) -> f64 {
        self.get(layout.log_tau).data()[0].as_f64().exp()
    }
}
