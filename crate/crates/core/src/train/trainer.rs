use std::path::Path;

use crate::autodiff::{Graph, Var};
use crate::data::augment::{make_views, ViewBundle, ViewStream};
use crate::data::manifest::{ImageCaptionRecord, Split};
use crate::data::sampling::{sample_caption, EpochSamplingPolicy};
use crate::data::tokenizer::tokenize;
use crate::encoders::{Bound, Model};
use crate::error::{Error, Result};
use crate::exec;
use crate::objectives::{info_nce, self_distillation, TeacherState};
use crate::rng::{Domain, KeyedRng};
use crate::tensor::Tensor;

use super::config::{LossMode, TrainConfig};
use super::metrics::{MetricsLog, StepMetrics};
use super::optim::{adamw_step, lr_schedule, AdamState, AdamWHyper};
use super::TrainState;

/// Drives optimization over the train split of a manifest.
///
/// Every random choice is keyed on `(seed, epoch, record)`, so a run
/// resumed from a checkpoint follows the same trajectory as an
/// uninterrupted one.
pub struct Trainer {
    model: Model,
    state: TrainState,
    records: Vec<ImageCaptionRecord>,
    images: Vec<Tensor<f32>>,
    log: MetricsLog,
}

struct StepOutput {
    l_infonce: f64,
    l_selfsuper: Option<f64>,
    combined: f64,
    teacher_logits: Option<Tensor<f32>>,
    teacher_entropy: Option<f64>,
    grads: Vec<Tensor<f32>>,
}

impl Trainer {
    /// Fresh student (initialized from `config.seed`) and teacher copy.
    pub fn new(config: TrainConfig, records: &[ImageCaptionRecord], base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone())?;
        let student = model.init_params::<f32>(config.seed);
        let teacher = TeacherState::new(&student, config.model.dino.output_dim, &config.teacher)?;
        let adam = AdamState::zeros_like(student.tensors());
        let state = TrainState {
            config,
            step: 0,
            student,
            teacher,
            adam,
        };
        Self::from_state(state, records, base_dir)
    }

    pub fn from_state(state: TrainState, records: &[ImageCaptionRecord], base_dir: &Path) -> Result<Self> {
        state.config.validate()?;
        let model = Model::new(state.config.model.clone())?;
        model.check_params(&state.student)?;
        model.check_params(&state.teacher.params)?;
        let records: Vec<ImageCaptionRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
        if records.is_empty() {
            return Err(Error::Validation("manifest has no train records".into()));
        }
        if state.config.batch_size > records.len() {
            return Err(Error::Validation(format!(
                "batch_size {} exceeds the {} train records",
                state.config.batch_size,
                records.len()
            )));
        }
        let images = exec::map_indices(records.len(), |i| records[i].image.load(base_dir))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let min = state.config.augmentation.local_crop_size;
        for (r, img) in records.iter().zip(&images) {
            let s = img.shape();
            if s[1] < min || s[2] < min {
                return Err(Error::Validation(format!(
                    "image `{}` is {}x{}, smaller than the {min}px local crop",
                    r.image.describe(),
                    s[2],
                    s[1]
                )));
            }
        }
        Ok(Self {
            model,
            state,
            records,
            images,
            log: MetricsLog::default(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn train_records(&self) -> &[ImageCaptionRecord] {
        &self.records
    }

    /// Incomplete final batches are dropped.
    pub fn steps_per_epoch(&self) -> u64 {
        (self.records.len() / self.state.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.state.config.epochs as u64
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Record order for `epoch`.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        KeyedRng::new(self.state.config.seed, Domain::Shuffle, &[epoch]).shuffle(&mut order);
        order
    }

    /// Runs until `max_steps` more steps are done or training ends.
    pub fn run(&mut self, max_steps: Option<u64>, mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        let mut done = 0;
        while !self.is_finished() && max_steps.is_none_or(|m| done < m) {
            let m = self.step()?;
            on_step(&m);
            done += 1;
        }
        Ok(())
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.state.step;
        if self.is_finished() {
            return Err(Error::Contract(format!("training already finished at step {step}")));
        }
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        let b = self.state.config.batch_size;
        let start = (step % spe) as usize * b;
        let batch: Vec<usize> = self.epoch_order(epoch)[start..start + b].to_vec();

        let out = self.forward_backward(&batch, epoch)?;
        if !out.combined.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} (epoch {epoch}): contrastive {}, distillation {:?}",
                out.l_infonce, out.l_selfsuper
            )));
        }
        if let Some(i) = out.grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for `{}` at step {step} (epoch {epoch})",
                self.state.student.names()[i]
            )));
        }

        let cfg = &self.state.config;
        let spe_warm = spe * cfg.warmup_epochs as u64;
        let lr = lr_schedule(step, self.total_steps(), spe_warm, cfg.learning_rate);
        let hp = AdamWHyper {
            lr,
            betas: cfg.betas,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        };
        let log_tau = self.model.layout().log_tau.index();
        let decay: Vec<bool> = self
            .state
            .student
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| t.rank() >= 2 && i != log_tau)
            .collect();
        let frozen: Vec<bool> = (0..decay.len()).map(|i| cfg.freeze_temperature && i == log_tau).collect();
        adamw_step(
            self.state.student.tensors_mut(),
            &out.grads,
            &mut self.state.adam,
            &hp,
            &decay,
            &frozen,
        )?;

        let (lo, hi) = self.state.config.tau_range;
        let lt = &mut self.state.student.tensors_mut()[log_tau].data_mut()[0];
        *lt = (*lt as f64).clamp(lo.ln(), hi.ln()) as f32;

        if let Some(logits) = &out.teacher_logits {
            self.state.teacher.ema_update(&self.state.student)?;
            if !self.state.config.disable_centering {
                self.state.teacher.update_center(logits)?;
            }
        }
        if !self.state.student.all_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite at step {step} (epoch {epoch})")));
        }

        self.state.step += 1;
        let m = StepMetrics {
            step,
            epoch,
            l_infonce: out.l_infonce,
            l_selfsuper: out.l_selfsuper,
            combined: out.combined,
            lr,
            teacher_entropy: out.teacher_entropy,
            tau: self.state.student.temperature(self.model.layout()),
        };
        self.log.push(m.clone())?;
        Ok(m)
    }

    fn forward_backward(&self, batch: &[usize], epoch: u64) -> Result<StepOutput> {
        let cfg = &self.state.config;
        let combined = cfg.loss_mode == LossMode::Combined;
        let b = batch.len();
        let policy = EpochSamplingPolicy {
            mode: cfg.sampling.mode,
            seed: cfg.seed,
            exclude_english: cfg.sampling.exclude_english,
        };
        let max_len = cfg.model.text.max_length;
        let tokens: Vec<Vec<u32>> = batch
            .iter()
            .map(|&i| tokenize(&sample_caption(&self.records[i], i, epoch, &policy).text, max_len))
            .collect();

        // Contrastive-only runs need just the first global view; views are
        // keyed individually so it is the same crop either way.
        let mut aug = cfg.augmentation.clone();
        if !combined {
            aug.n_local = 0;
        }
        let bundles: Vec<ViewBundle> = exec::map_indices(b, |j| {
            let i = batch[j];
            make_views(
                &self.images[i],
                &aug,
                ViewStream {
                    seed: cfg.seed,
                    epoch,
                    record: i as u64,
                },
            )
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let n_views = if combined { aug.n_views() } else { 1 };

        // Local views are upsampled to the global size by `make_views`, so
        // every view shares one batched forward pass, view-major.
        let stacked: Vec<Tensor<f32>> = (0..n_views)
            .flat_map(|v| bundles.iter().map(move |bd| bd.views[v].clone()))
            .collect();
        let images = Tensor::stack(&stacked)?;

        let mut g = Graph::<f32>::new();
        let bound = self.model.bind(&mut g, &self.state.student, true);
        let emb = self.model.encode_images(&mut g, &bound, &images)?;
        let first = rows(0, b);
        let v0 = if n_views == 1 { emb } else { g.gather_rows(emb, &first)? };
        let u = self.model.encode_texts(&mut g, &bound, &tokens)?;
        let l_info = info_nce(&mut g, u, v0, self.model.log_tau(&bound))?;

        let (loss, l_self, teacher_logits, teacher_entropy) = if combined {
            let n_global = ViewBundle::N_GLOBAL;
            let t_logits = self.teacher_logits(&Tensor::stack(&stacked[..n_global * b])?)?;
            let t_probs = self.state.teacher.distribution(&t_logits)?;
            let entropy = batch_mean_entropy(&t_probs);
            let teacher: Vec<Var> = (0..n_global)
                .map(|v| t_probs.select_rows(&rows(v * b, b)).map(|t| g.constant(t)))
                .collect::<Result<_>>()?;
            let z = self.model.project_dino(&mut g, &bound, emb)?;
            let student: Vec<Var> = (0..n_views)
                .map(|v| g.gather_rows(z, &rows(v * b, b)))
                .collect::<Result<_>>()?;
            let l_self = self_distillation(&mut g, &teacher, &student, cfg.tau_s, cfg.pair_reduction)?;
            let sum = g.add(l_info, l_self)?;
            let loss = g.scale(sum, 0.5)?;
            (loss, Some(l_self), Some(t_logits), Some(entropy))
        } else {
            (l_info, None, None, None)
        };

        let scalar = |v: Var| g.value(v).item().map(|x| x as f64);
        let l_infonce = scalar(l_info)?;
        let l_selfsuper = l_self.map(scalar).transpose()?;
        let total = scalar(loss)?;
        let grads = if total.is_finite() {
            let gr = g.backward(loss)?;
            grads_for(&gr, &bound, self.state.student.tensors())
        } else {
            Vec::new()
        };
        Ok(StepOutput {
            l_infonce,
            l_selfsuper,
            combined: total,
            teacher_logits,
            teacher_entropy,
            grads,
        })
    }

    fn teacher_logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let tb = self.model.bind(&mut g, &self.state.teacher.params, false);
        let e = self.model.encode_images(&mut g, &tb, images)?;
        let z = self.model.project_dino(&mut g, &tb, e)?;
        Ok(g.value(z).clone())
    }
}

fn rows(start: usize, n: usize) -> Vec<usize> {
    (start..start + n).collect()
}

fn grads_for(gr: &crate::autodiff::Gradients<f32>, bound: &Bound, params: &[Tensor<f32>]) -> Vec<Tensor<f32>> {
    bound
        .vars()
        .iter()
        .zip(params)
        .map(|(&v, p)| gr.get_or_zeros(v, p))
        .collect()
}

/// Entropy of the teacher distribution averaged over the batch, the
/// quantity that collapses when one bin dominates every sample.
fn batch_mean_entropy(probs: &Tensor<f32>) -> f64 {
    let k = probs.last_dim();
    let n = probs.rows().max(1);
    let mut mean = vec![0.0f64; k];
    for row in probs.data().chunks(k) {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p as f64 / n as f64;
        }
    }
    -mean.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}
