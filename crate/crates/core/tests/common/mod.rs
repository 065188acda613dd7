//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use mlclip::data::image::encode_ppm;
use mlclip::data::language::Language;
use mlclip::data::manifest::{ImageCaptionRecord, ImageRef, Split, SyntheticSpec};
use mlclip::train::TrainConfig;
use mlclip::Tensor;

pub const OVERFIT_PAIRS: usize = 16;
pub const OVERFIT_IMAGE_SIZE: usize = 16;

pub const OVERFIT_CAPTIONS: [(&str, &str); OVERFIT_PAIRS] = [
    ("a large airport", "ein großer Flughafen"),
    ("dense residential buildings", "dichte Wohngebäude"),
    ("a baseball field", "ein Baseballfeld"),
    ("cars in a parking lot", "Autos auf einem Parkplatz"),
    ("an oval stadium", "ein ovales Stadion"),
    ("a school playground", "ein Schulspielplatz"),
    ("a winding river", "ein gewundener Fluss"),
    ("a green forest", "ein grüner Wald"),
    ("boats in a harbor", "Boote in einem Hafen"),
    ("a sandy beach", "ein Sandstrand"),
    ("a long bridge", "eine lange Brücke"),
    ("an old church", "eine alte Kirche"),
    ("square farmland", "quadratisches Ackerland"),
    ("a dry desert", "eine trockene Wüste"),
    ("a snowy mountain", "ein verschneiter Berg"),
    ("white storage tanks", "weiße Lagertanks"),
];

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Image `i`: one of four hues (`i / 4`) drawn as one of four shapes
/// (`i % 4`: solid, horizontal stripes, vertical stripes, disk) on a dark
/// background.
pub fn pattern_image(i: usize, size: usize) -> Tensor<f32> {
    let fg = hsv(90.0 * (i / 4) as f64, 0.9, 0.9);
    let half = size as f64 / 2.0;
    let mut d = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let on = match i % 4 {
                0 => true,
                1 => (y / 3) % 2 == 0,
                2 => (x / 3) % 2 == 0,
                _ => {
                    let (cx, cy) = (x as f64 - half + 0.5, y as f64 - half + 0.5);
                    (cx * cx + cy * cy).sqrt() < size as f64 * 0.3
                }
            };
            for c in 0..3 {
                d[(c * size + y) * size + x] = if on { fg[c] as f32 } else { 0.1 };
            }
        }
    }
    Tensor::new(&[3, size, size], d).unwrap()
}

/// Writes the 16 fixture images into `dir` and returns their records,
/// with one English and one German caption each.
pub fn overfit_fixture(dir: &Path) -> Vec<ImageCaptionRecord> {
    (0..OVERFIT_PAIRS)
        .map(|i| {
            let name = format!("pair{i:02}.ppm");
            let bytes = encode_ppm(&pattern_image(i, OVERFIT_IMAGE_SIZE)).unwrap();
            std::fs::write(dir.join(&name), bytes).unwrap();
            let (en, de) = OVERFIT_CAPTIONS[i];
            ImageCaptionRecord {
                image: ImageRef::Path(name),
                captions: BTreeMap::from([
                    (Language::En, vec![en.to_string()]),
                    (Language::De, vec![de.to_string()]),
                ]),
                split: Split::Train,
                label: None,
            }
        })
        .collect()
}

/// Tiny encoders for the overfit fixture. Global views cover the whole
/// image without flips or photometric noise, so every epoch shows the same
/// pixels for the contrastive pair; local crops stay random.
pub fn overfit_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        batch_size: 8,
        epochs: 500,
        warmup_epochs: 10,
        learning_rate: 2e-3,
        ..Default::default()
    };
    let m = &mut cfg.model;
    m.vision.image_size = OVERFIT_IMAGE_SIZE;
    m.vision.patch_size = 4;
    m.vision.width = 32;
    m.vision.depth = 1;
    m.vision.heads = 2;
    m.vision.embed_dim = 32;
    m.text.max_length = 24;
    m.text.width = 32;
    m.text.depth = 1;
    m.text.heads = 2;
    m.text.embed_dim = 32;
    m.dino.hidden_dim = 64;
    m.dino.bottleneck_dim = 32;
    m.dino.output_dim = 64;
    let mut aug = cfg.augmentation.clone().without_photometric();
    aug.global_crop_size = OVERFIT_IMAGE_SIZE;
    aug.local_crop_size = 8;
    aug.n_local = 2;
    aug.global_scale = (1.0, 1.0);
    aug.flip_prob = 0.0;
    cfg.augmentation = aug;
    cfg
}

/// A very small model and batch for fast determinism checks.
pub fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        batch_size: 4,
        epochs: 3,
        warmup_epochs: 1,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let m = &mut cfg.model;
    m.vision.image_size = 16;
    m.vision.patch_size = 8;
    m.vision.width = 16;
    m.vision.depth = 1;
    m.vision.heads = 2;
    m.vision.embed_dim = 8;
    m.text.max_length = 16;
    m.text.width = 16;
    m.text.depth = 1;
    m.text.heads = 2;
    m.text.embed_dim = 8;
    m.dino.hidden_dim = 16;
    m.dino.bottleneck_dim = 8;
    m.dino.output_dim = 16;
    cfg.augmentation.global_crop_size = 16;
    cfg.augmentation.local_crop_size = 8;
    cfg.augmentation.n_local = 2;
    cfg
}

/// `n` synthetic records with English and German captions.
pub fn synthetic_records(n: usize) -> Vec<ImageCaptionRecord> {
    (0..n)
        .map(|i| ImageCaptionRecord {
            image: ImageRef::Synthetic {
                synthetic: SyntheticSpec {
                    seed: i as u64,
                    size: 16,
                },
            },
            captions: BTreeMap::from([
                (Language::En, vec![format!("scene number {i}"), format!("picture {i}")]),
                (Language::De, vec![format!("Szene Nummer {i}"), format!("Bild {i}")]),
            ]),
            split: Split::Train,
            label: None,
        })
        .collect()
}
