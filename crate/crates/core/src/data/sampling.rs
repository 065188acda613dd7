use serde::{Deserialize, Serialize};

use super::language::Language;
use super::manifest::{CaptionRecord, ImageCaptionRecord};
use crate::rng::{Domain, KeyedRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    EnglishOnly,
    OneTranslation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSamplingPolicy {
    pub mode: SamplingMode,
    pub seed: u64,
    /// In `OneTranslation` mode, draw only from non-English languages
    /// (falling back to English for records without translations).
    #[serde(default)]
    pub exclude_english: bool,
}

impl EpochSamplingPolicy {
    pub fn new(mode: SamplingMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            exclude_english: false,
        }
    }
}

/// The caption shown with record `record_index` during `epoch`.
///
/// A pure function of `(policy, epoch, record_index)` and the record
/// contents. `record` must be valid.
pub fn sample_caption(
    record: &ImageCaptionRecord,
    record_index: usize,
    epoch: u64,
    policy: &EpochSamplingPolicy,
) -> CaptionRecord {
    let mut rng = KeyedRng::new(policy.seed, Domain::Caption, &[epoch, record_index as u64]);
    let n = record.english().len();
    let idx = rng.below(n);
    let language = match policy.mode {
        SamplingMode::EnglishOnly => Language::En,
        SamplingMode::OneTranslation => {
            let mut langs = record.languages();
            if policy.exclude_english && langs.len() > 1 {
                langs.retain(|l| *l != Language::En);
            }
            langs[rng.below(langs.len())]
        }
    };
    CaptionRecord {
        text: record.captions[&language][idx].clone(),
        language,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::manifest::{ImageRef, Split};

    fn record(n: usize, langs: &[Language]) -> ImageCaptionRecord {
        let captions: BTreeMap<Language, Vec<String>> = langs
            .iter()
            .map(|l| (*l, (0..n).map(|i| format!("{l}-{i}")).collect()))
            .collect();
        ImageCaptionRecord {
            image: ImageRef::Path("x.ppm".into()),
            captions,
            split: Split::Train,
            label: None,
        }
    }

    #[test]
    fn english_only_singleton_is_constant() {
        let r = record(1, &[Language::En, Language::De]);
        let p = EpochSamplingPolicy::new(SamplingMode::EnglishOnly, 3);
        for epoch in 0..50 {
            let c = sample_caption(&r, 0, epoch, &p);
            assert_eq!(c.text, "en-0");
            assert_eq!(c.language, Language::En);
        }
    }

    #[test]
    fn deterministic_per_key() {
        let r = record(5, &Language::ALL);
        let p = EpochSamplingPolicy::new(SamplingMode::OneTranslation, 11);
        assert_eq!(sample_caption(&r, 4, 9, &p), sample_caption(&r, 4, 9, &p));
        let distinct: std::collections::HashSet<String> =
            (0..40).map(|e| sample_caption(&r, 4, e, &p).text).collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn language_frequencies_are_uniform() {
        let r = record(1, &Language::ALL);
        let p = EpochSamplingPolicy::new(SamplingMode::OneTranslation, 2024);
        let mut counts = BTreeMap::new();
        let n = 10_000;
        for epoch in 0..n {
            *counts.entry(sample_caption(&r, 0, epoch, &p).language).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        for (l, c) in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.1).abs() <= 0.01, "{l}: {f}");
        }
    }

    #[test]
    fn exclude_english_skips_english_when_possible() {
        let r = record(2, &[Language::En, Language::Fr, Language::Ko]);
        let p = EpochSamplingPolicy {
            exclude_english: true,
            ..EpochSamplingPolicy::new(SamplingMode::OneTranslation, 0)
        };
        for e in 0..200 {
            assert_ne!(sample_caption(&r, 1, e, &p).language, Language::En);
        }
        let only_en = record(2, &[Language::En]);
        assert_eq!(sample_caption(&only_en, 0, 0, &p).language, Language::En);
    }
}
