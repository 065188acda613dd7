use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use mlclip::data::language::Language;
use mlclip::data::manifest::{base_dir, load_manifest, write_manifest, ImageCaptionRecord, Split};
use mlclip::data::prompts::{ingest_translations as attach_translations, read_records, translation_prompts, write_records};
use mlclip::encoders::{Model, ModelParams};
use mlclip::eval::lmcap::{build_lmcap_prompt, fewshot_block, FEWSHOT_CLASSES};
use mlclip::eval::retrieval::{retrieve_top_k, RetrievalReport};
use mlclip::eval::split::split_80_20;
use mlclip::eval::zeroshot::{accuracy, zero_shot_classify, ZeroShotTemplate};
use mlclip::train::inference::{caption_corpus, embed_images, embed_texts, load_images, retrieval_report};
use mlclip::train::{load_checkpoint, save_checkpoint, TrainConfig, Trainer};
use mlclip::Error;

use crate::{Common, Modality, ReportFormat, SplitArg};

/// 2 validation, 3 numeric abort, 4 I/O.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io { .. } => 4,
                Error::Numeric(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn missing(flag: &str) -> anyhow::Error {
    Error::Validation(format!("--{flag} is required for this command")).into()
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|m| Error::Validation(format!("{}: {m}", path.display())).into())
}

fn records(common: &Common) -> Result<(Vec<ImageCaptionRecord>, PathBuf)> {
    let path = common.manifest.as_ref().ok_or_else(|| missing("manifest"))?;
    let recs = load_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Ok((recs, base_dir(path)))
}

fn select(records: &[ImageCaptionRecord], split: SplitArg) -> Vec<ImageCaptionRecord> {
    let want = match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    records
        .iter()
        .filter(|r| want.is_none_or(|s| r.split == s))
        .cloned()
        .collect()
}

fn nonempty(recs: Vec<ImageCaptionRecord>, split: SplitArg) -> Result<Vec<ImageCaptionRecord>> {
    if recs.is_empty() {
        return Err(Error::Validation(format!("manifest has no records in split {split:?}")).into());
    }
    Ok(recs)
}

/// Student parameters from --checkpoint.
fn trained_model(common: &Common) -> Result<(Model, ModelParams<f32>)> {
    let path = common.checkpoint.as_ref().ok_or_else(|| missing("checkpoint"))?;
    let state = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = Model::new(state.config.model.clone())?;
    Ok((model, state.student))
}

fn write_out(common: &Common, text: &str) -> Result<()> {
    if let Some(path) = &common.out {
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub struct TrainFlags {
    pub freeze_temperature: bool,
    pub exclude_english_from_sampling: bool,
    pub max_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

pub fn train(common: &Common, flags: TrainFlags) -> Result<()> {
    let (recs, base) = records(common)?;
    let out = common.out.as_ref().ok_or_else(|| missing("out"))?;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let resumed = match &common.checkpoint {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let mut cfg = match (&common.config, &resumed) {
        (Some(p), _) => load_config(p)?,
        (None, Some(state)) => state.config.clone(),
        (None, None) => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.freeze_temperature |= flags.freeze_temperature;
    cfg.sampling.exclude_english |= flags.exclude_english_from_sampling;
    cfg.validate()?;

    let resuming = resumed.is_some();
    let mut trainer = match resumed {
        Some(mut state) => {
            Model::new(cfg.model.clone())?
                .check_params(&state.student)
                .context("checkpoint does not fit the configured model")?;
            state.config = cfg;
            Trainer::from_state(state, &recs, &base)?
        }
        None => Trainer::new(cfg, &recs, &base)?,
    };

    let metrics_path = out.join("metrics.jsonl");
    let metrics_file = if resuming {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(io_err(&metrics_path))?;
    let mut metrics = BufWriter::new(metrics_file);
    let ck_path = out.join("checkpoint.bin");
    let spe = trainer.steps_per_epoch();
    let every = flags.checkpoint_every.unwrap_or(spe).max(1);

    let mut done = 0u64;
    while !trainer.is_finished() && flags.max_steps.is_none_or(|m| done < m) {
        let m = trainer.step()?;
        writeln!(metrics, "{}", serde_json::to_string(&m)?).map_err(io_err(&metrics_path))?;
        done += 1;
        if (m.step + 1) % every == 0 {
            metrics.flush().map_err(io_err(&metrics_path))?;
            save_checkpoint(trainer.state(), &ck_path)?;
        }
        if (m.step + 1) % spe == 0 {
            eprintln!(
                "epoch {:>4}  step {:>6}  loss {:.4}  infonce {:.4}  lr {:.2e}  tau {:.4}",
                m.epoch, m.step, m.combined, m.l_infonce, m.lr, m.tau
            );
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    save_checkpoint(trainer.state(), &ck_path)?;
    println!(
        "{}",
        json!({
            "step": trainer.state().step,
            "total_steps": trainer.total_steps(),
            "checkpoint": ck_path.display().to_string(),
            "metrics": metrics_path.display().to_string(),
        })
    );
    Ok(())
}

pub fn eval_retrieval(
    common: &Common,
    language: &str,
    split: SplitArg,
    dedupe: bool,
    format: ReportFormat,
) -> Result<()> {
    let lang: Language = language.parse()?;
    let (model, params) = trained_model(common)?;
    let (recs, base) = records(common)?;
    let recs = nonempty(select(&recs, split), split)?;
    let report = retrieval_report(&model, &params, &recs, &base, lang, dedupe)?;
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => format!("{}\n{}", RetrievalReport::CSV_HEADER, report.csv_row()),
    };
    println!("{text}");
    write_out(common, &format!("{text}\n"))
}

pub fn zero_shot(common: &Common, split: SplitArg, classes: Option<Vec<String>>, template: &str) -> Result<()> {
    let template = ZeroShotTemplate::new(template)?;
    let (model, params) = trained_model(common)?;
    let (recs, base) = records(common)?;
    let recs = nonempty(select(&recs, split), split)?;
    let labels: Vec<&str> = recs
        .iter()
        .map(|r| {
            r.label
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("record `{}` has no label", r.image.describe())))
        })
        .collect::<Result<_, _>>()?;
    let classes = classes.unwrap_or_else(|| {
        let mut c: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        c.sort();
        c.dedup();
        c
    });
    let label_ids: Vec<usize> = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::Validation(format!("label `{l}` is not among the classes")))
        })
        .collect::<Result<_, _>>()?;

    let images = load_images(&recs, &base, model.config().vision.image_size)?;
    let img = embed_images(&model, &params, &images)?;
    let pred = zero_shot_classify(&img, &classes, &template, |p| embed_texts(&model, &params, p))?;
    let acc = accuracy(&pred, &label_ids)?;
    let summary = json!({
        "accuracy": (acc * 100.0).round() / 100.0,
        "n": recs.len(),
        "classes": classes,
        "template": template.as_str(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let predictions: Vec<_> = recs
        .iter()
        .zip(&pred)
        .map(|(r, &p)| json!({"image": r.image.describe(), "label": r.label, "predicted": classes[p]}))
        .collect();
    let full = json!({"summary": summary, "predictions": predictions});
    write_out(common, &serde_json::to_string_pretty(&full)?)
}

/// Sidecar path for an embedding file: `<out>.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn export_embeddings(common: &Common, modality: Modality, language: &str, split: SplitArg) -> Result<()> {
    let out = common.out.as_ref().ok_or_else(|| missing("out"))?;
    let (model, params) = trained_model(common)?;
    let (recs, base) = records(common)?;
    let recs = nonempty(select(&recs, split), split)?;
    let (emb, ids) = match modality {
        Modality::Image => {
            let images = load_images(&recs, &base, model.config().vision.image_size)?;
            let ids: Vec<String> = recs.iter().map(|r| r.image.describe()).collect();
            (embed_images(&model, &params, &images)?, ids)
        }
        Modality::Text => {
            let lang: Language = language.parse()?;
            let (texts, owners) = caption_corpus(&recs, lang, false)?;
            let mut ids = Vec::with_capacity(texts.len());
            let mut last = (usize::MAX, 0);
            for &o in &owners {
                last = if last.0 == o { (o, last.1 + 1) } else { (o, 0) };
                ids.push(format!("{}#{lang}{}", recs[o].image.describe(), last.1));
            }
            (embed_texts(&model, &params, &texts)?, ids)
        }
    };
    let mut bytes = Vec::with_capacity(emb.len() * 4);
    for v in emb.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(out, bytes).map_err(io_err(out))?;
    let dim = emb.shape()[1];
    let side = sidecar_path(out);
    let meta = json!({"count": ids.len(), "dim": dim, "ids": ids});
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(io_err(&side))?;
    println!("{}", json!({"count": ids.len(), "dim": dim, "sidecar": side.display().to_string()}));
    Ok(())
}

pub fn build_translation_prompts(common: &Common, language: &str) -> Result<()> {
    let lang: Language = language.parse()?;
    let out = common.out.as_ref().ok_or_else(|| missing("out"))?;
    let (recs, _) = records(common)?;
    let prompts = translation_prompts(&recs, lang)?;
    write_records(&prompts, out)?;
    println!("{}", json!({"prompts": prompts.len(), "language": lang.name()}));
    Ok(())
}

pub fn ingest_translations(common: &Common, language: &str, responses: &Path) -> Result<()> {
    let lang: Language = language.parse()?;
    let out = common.out.as_ref().ok_or_else(|| missing("out"))?;
    let (recs, _) = records(common)?;
    let resp = read_records(responses)?;
    let merged = attach_translations(&recs, &resp, lang)?;
    write_manifest(&merged, out)?;
    println!("{}", json!({"records": merged.len(), "captions": resp.len(), "language": lang.code()}));
    Ok(())
}

/// Top `k` captions of `gallery` for `query`, skipping those owned by
/// `exclude`.
fn retrieve_excluding(
    query: &[f32],
    gallery: &mlclip::Tensor<f32>,
    texts: &[String],
    owners: &[usize],
    exclude: Option<usize>,
    k: usize,
) -> Result<Vec<String>> {
    let ranked = retrieve_top_k(query, gallery, texts.len())?;
    Ok(ranked
        .into_iter()
        .filter(|&i| Some(owners[i]) != exclude)
        .take(k)
        .map(|i| texts[i].clone())
        .collect())
}

pub fn build_lmcap_prompts(common: &Common, language: &str, split: SplitArg, n_shots: usize, k: usize) -> Result<()> {
    let lang: Language = language.parse()?;
    if k == 0 {
        return Err(Error::Validation("--k must be at least 1".into()).into());
    }
    let out = common.out.as_ref().ok_or_else(|| missing("out"))?;
    let (model, params) = trained_model(common)?;
    let (all, base) = records(common)?;
    let datastore = nonempty(select(&all, SplitArg::Train), SplitArg::Train)?;
    let queries = nonempty(select(&all, split), split)?;
    let size = model.config().vision.image_size;

    let (texts, owners) = caption_corpus(&datastore, Language::En, false)?;
    let caption_emb = embed_texts(&model, &params, &texts)?;

    let mut shots = Vec::new();
    for class in FEWSHOT_CLASSES.iter().take(n_shots) {
        let found = datastore
            .iter()
            .enumerate()
            .find(|(_, r)| r.label.as_deref() == Some(class) && r.captions.get(&lang).is_some_and(|c| !c.is_empty()));
        let Some((i, rec)) = found else {
            eprintln!("warning: no {} train record labelled `{class}`; skipping that example", lang.name());
            continue;
        };
        let img = embed_images(&model, &params, &load_images(std::slice::from_ref(rec), &base, size)?)?;
        let retrieved = retrieve_excluding(img.row(0), &caption_emb, &texts, &owners, Some(i), k)?;
        shots.push(fewshot_block(&retrieved, lang.name(), &rec.captions[&lang][0])?);
    }

    let images = load_images(&queries, &base, size)?;
    let img = embed_images(&model, &params, &images)?;
    let same_split = split == SplitArg::Train;
    let prompts: Vec<String> = (0..queries.len())
        .map(|q| {
            let exclude = same_split.then_some(q);
            let retrieved = retrieve_excluding(img.row(q), &caption_emb, &texts, &owners, exclude, k)?;
            Ok(build_lmcap_prompt(&retrieved, lang.name(), &shots)?)
        })
        .collect::<Result<_>>()?;
    write_records(&prompts, out)?;
    println!(
        "{}",
        json!({"prompts": prompts.len(), "few_shot_examples": shots.len(), "k": k, "language": lang.name()})
    );
    Ok(())
}

fn class_listing(input: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let meta = fs::metadata(input).map_err(io_err(input))?;
    if !meta.is_dir() {
        let text = fs::read_to_string(input).map_err(io_err(input))?;
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", input.display())))?;
        return Ok(map);
    }
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(input).map_err(io_err(input))? {
        let entry = entry.map_err(io_err(input))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let mut files = Vec::new();
        for f in fs::read_dir(&path).map_err(io_err(&path))? {
            let f = f.map_err(io_err(&path))?;
            if f.path().is_file() {
                files.push(f.file_name().to_string_lossy().into_owned());
            }
        }
        files.sort();
        map.insert(entry.file_name().to_string_lossy().into_owned(), files);
    }
    Ok(map)
}

pub fn make_splits(common: &Common, input: &Path) -> Result<()> {
    let classes = class_listing(input)?;
    if classes.is_empty() {
        return Err(Error::Validation(format!("{}: no classes found", input.display())).into());
    }
    if let Some((c, _)) = classes.iter().find(|(_, f)| f.is_empty()) {
        return Err(Error::Validation(format!("class `{c}` has no files")).into());
    }
    let seed = common.seed.unwrap_or(42);
    let split = split_80_20(&classes, seed);
    let doc = json!({"seed": seed, "train": split.train, "test": split.test});
    let text = serde_json::to_string_pretty(&doc)?;
    match &common.out {
        Some(_) => write_out(common, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let io = Error::Io {
            path: "x".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(exit_code(&anyhow::Error::from(io).context("loading")), 4);
        assert_eq!(exit_code(&Error::Numeric("nan".into()).into()), 3);
        assert_eq!(exit_code(&Error::Validation("bad".into()).into()), 2);
        assert_eq!(exit_code(&Error::BadMagic.into()), 2);
        assert_eq!(exit_code(&std::io::Error::other("raw").into()), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn sidecar_appends_json() {
        assert_eq!(sidecar_path(Path::new("out/emb.f32")), PathBuf::from("out/emb.f32.json"));
        assert_eq!(sidecar_path(Path::new("emb")), PathBuf::from("emb.json"));
    }

    #[test]
    fn retrieval_can_skip_a_records_own_captions() {
        let gallery = mlclip::Tensor::new(&[3, 2], vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0]).unwrap();
        let texts: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let owners = [0, 0, 1];
        let q = [1.0, 0.0];
        assert_eq!(retrieve_excluding(&q, &gallery, &texts, &owners, None, 2).unwrap(), ["a", "b"]);
        assert_eq!(retrieve_excluding(&q, &gallery, &texts, &owners, Some(0), 2).unwrap(), ["c"]);
    }
}
