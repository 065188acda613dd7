//! Command-line interface: training, evaluation, embedding export and the
//! prompt round trips for translation and captioning.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mlclip", version, about = "Multilingual contrastive training with self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Training config (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON-lines dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train (or resume with --checkpoint) and write `checkpoint.bin` and
    /// `metrics.jsonl` into --out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        freeze_temperature: bool,
        #[arg(long)]
        exclude_english_from_sampling: bool,
        /// Stop after this many steps (the run can be resumed later).
        #[arg(long)]
        max_steps: Option<u64>,
        /// Also checkpoint every N steps (default: every epoch).
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Image-text recall@1/5/10 and mean recall.
    EvalRetrieval {
        #[command(flatten)]
        common: Common,
        /// Caption language, as a code (`de`) or name (`German`).
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        dedupe_captions: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Zero-shot classification of labelled records.
    ZeroShot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Comma-separated class names (default: labels found in the split).
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long, default_value = mlclip::eval::zeroshot::DEFAULT_ZERO_SHOT_TEMPLATE)]
        template: String,
    },
    /// Write embeddings as little-endian f32 rows plus a JSON sidecar.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        modality: Modality,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// One translation prompt per English caption.
    BuildTranslationPrompts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        language: String,
    },
    /// Attach translated captions to a manifest.
    IngestTranslations {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        language: String,
        /// Response file, one record per prompt in prompt order.
        #[arg(long)]
        responses: PathBuf,
    },
    /// Retrieval-augmented captioning prompts for the query split.
    BuildLmcapPrompts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        language: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = mlclip::eval::lmcap::DEFAULT_N_SHOTS)]
        n_shots: usize,
        #[arg(long, default_value_t = mlclip::eval::lmcap::DEFAULT_K)]
        k: usize,
    },
    /// Per-class 80/20 split of an image directory or a class → files JSON map.
    MakeSplits {
        #[command(flatten)]
        common: Common,
        /// Directory of class subdirectories, or a JSON object.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            common,
            freeze_temperature,
            exclude_english_from_sampling,
            max_steps,
            checkpoint_every,
        } => commands::train(
            &common,
            commands::TrainFlags {
                freeze_temperature,
                exclude_english_from_sampling,
                max_steps,
                checkpoint_every,
            },
        ),
        Command::EvalRetrieval {
            common,
            language,
            split,
            dedupe_captions,
            format,
        } => commands::eval_retrieval(&common, &language, split, dedupe_captions, format),
        Command::ZeroShot {
            common,
            split,
            classes,
            template,
        } => commands::zero_shot(&common, split, classes, &template),
        Command::ExportEmbeddings {
            common,
            modality,
            language,
            split,
        } => commands::export_embeddings(&common, modality, &language, split),
        Command::BuildTranslationPrompts { common, language } => {
            commands::build_translation_prompts(&common, &language)
        }
        Command::IngestTranslations {
            common,
            language,
            responses,
        } => commands::ingest_translations(&common, &language, &responses),
        Command::BuildLmcapPrompts {
            common,
            language,
            split,
            n_shots,
            k,
        } => commands::build_lmcap_prompts(&common, &language, split, n_shots, k),
        Command::MakeSplits { common, input } => commands::make_splits(&common, &input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
