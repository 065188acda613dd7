//! Multi-crop view generation: two global crops plus `n_local` small crops,
//! each with flip, colour jitter, grayscale, blur and (second global view
//! only) solarization.

use serde::{Deserialize, Serialize};

use crate::encoders::resize::resize_bicubic_rect;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{Domain, KeyedRng};
use crate::tensor::Tensor;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub global_crop_size: usize,
    pub local_crop_size: usize,
    pub n_local: usize,
    pub global_scale: (f64, f64),
    pub local_scale: (f64, f64),
    pub ratio: (f64, f64),
    pub flip_prob: f64,
    pub jitter_prob: f64,
    pub jitter: ColorJitter,
    pub grayscale_prob: f64,
    /// Blur probability for the first and second global view.
    pub global_blur_prob: (f64, f64),
    pub local_blur_prob: f64,
    pub blur_sigma: (f64, f64),
    /// Applies to the second global view.
    pub solarize_prob: f64,
    pub solarize_threshold: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            global_crop_size: 32,
            local_crop_size: 16,
            n_local: 8,
            global_scale: (0.4, 1.0),
            local_scale: (0.05, 0.4),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            jitter_prob: 0.8,
            jitter: ColorJitter::default(),
            grayscale_prob: 0.2,
            global_blur_prob: (1.0, 0.1),
            local_blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            solarize_prob: 0.2,
            solarize_threshold: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Every random transform disabled; crops still follow the scale ranges.
    pub fn without_photometric(mut self) -> Self {
        self.flip_prob = 0.0;
        self.jitter_prob = 0.0;
        self.grayscale_prob = 0.0;
        self.global_blur_prob = (0.0, 0.0);
        self.local_blur_prob = 0.0;
        self.solarize_prob = 0.0;
        self
    }

    pub fn n_views(&self) -> usize {
        2 + self.n_local
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("augmentation: {m}")));
        if self.global_crop_size < 2 || self.local_crop_size < 2 {
            return bad("crop sizes must be >= 2".into());
        }
        let probs = [
            ("flip_prob", self.flip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("global_blur_prob.0", self.global_blur_prob.0),
            ("global_blur_prob.1", self.global_blur_prob.1),
            ("local_blur_prob", self.local_blur_prob),
            ("solarize_prob", self.solarize_prob),
            ("solarize_threshold", self.solarize_threshold),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        for (name, (lo, hi)) in [("global_scale", self.global_scale), ("local_scale", self.local_scale)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
            }
        }
        let (lo, hi) = self.ratio;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("ratio ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        let (s0, s1) = self.blur_sigma;
        if !(s0 > 0.0 && s0 <= s1) {
            return bad(format!("blur_sigma ({s0}, {s1}) must satisfy 0 < lo <= hi"));
        }
        let j = &self.jitter;
        if j.brightness < 0.0 || j.contrast < 0.0 || j.saturation < 0.0 || !(0.0..=0.5).contains(&j.hue) {
            return bad("jitter strengths must be non-negative and hue <= 0.5".into());
        }
        Ok(())
    }
}

/// Keys of the random stream for one record in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewStream {
    pub seed: u64,
    pub epoch: u64,
    pub record: u64,
}

impl ViewStream {
    fn view_rng(&self, view: usize) -> KeyedRng {
        KeyedRng::new(self.seed, Domain::View, &[self.epoch, self.record, view as u64])
    }
}

/// Views of one image, all `[3, G, G]` with `G = global_crop_size`.
/// Index 0 is the first global view, 1 the second, the rest are local.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub views: Vec<Tensor<f32>>,
}

impl ViewBundle {
    pub const N_GLOBAL: usize = 2;

    pub fn globals(&self) -> &[Tensor<f32>] {
        &self.views[..Self::N_GLOBAL]
    }

    pub fn locals(&self) -> &[Tensor<f32>] {
        &self.views[Self::N_GLOBAL..]
    }

    pub fn first_global(&self) -> &Tensor<f32> {
        &self.views[0]
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Generates the views of `image` (`[3, H, W]`, values in `[0, 1]`).
pub fn make_views(image: &Tensor<f32>, config: &AugmentationConfig, stream: ViewStream) -> Result<ViewBundle> {
    config.validate()?;
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("make_views", s, &[3, config.global_crop_size, config.global_crop_size]));
    }
    let min_side = config.local_crop_size.max(2);
    if s[1] < min_side || s[2] < min_side {
        return Err(Error::domain(
            "make_views",
            format!("image {}x{} is smaller than the {min_side}px crop", s[1], s[2]),
        ));
    }
    let views = exec::map_indices(config.n_views(), |v| make_view(image, config, stream, v));
    Ok(ViewBundle {
        views: views.into_iter().collect::<Result<_>>()?,
    })
}

fn make_view(image: &Tensor<f32>, cfg: &AugmentationConfig, stream: ViewStream, view: usize) -> Result<Tensor<f32>> {
    let mut rng = stream.view_rng(view);
    let global = view < ViewBundle::N_GLOBAL;
    let (scale, size, blur_p) = if global {
        let p = if view == 0 { cfg.global_blur_prob.0 } else { cfg.global_blur_prob.1 };
        (cfg.global_scale, cfg.global_crop_size, p)
    } else {
        (cfg.local_scale, cfg.local_crop_size, cfg.local_blur_prob)
    };
    let crop = random_resized_crop(image, scale, cfg.ratio, size, &mut rng)?;
    let mut px: Vec<f64> = crop.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect();
    let hw = size * size;

    if rng.bernoulli(cfg.flip_prob) {
        flip_horizontal(&mut px, size);
    }
    if rng.bernoulli(cfg.jitter_prob) {
        color_jitter(&mut px, hw, &cfg.jitter, &mut rng);
    }
    if rng.bernoulli(cfg.grayscale_prob) {
        grayscale(&mut px, hw);
    }
    if rng.bernoulli(blur_p) {
        let sigma = rng.uniform_in(cfg.blur_sigma.0, cfg.blur_sigma.1);
        gaussian_blur(&mut px, size, sigma);
    }
    if view == 1 && rng.bernoulli(cfg.solarize_prob) {
        for v in &mut px {
            if *v >= cfg.solarize_threshold {
                *v = 1.0 - *v;
            }
        }
    }

    let mut out = Tensor::new(&[3, size, size], px.into_iter().map(|v| v as f32).collect())?;
    if size != cfg.global_crop_size {
        out = resize_bicubic_rect(&out, cfg.global_crop_size, cfg.global_crop_size)?;
        out = out.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Crop box `(top, left, height, width)` sampled as in torchvision's
/// `RandomResizedCrop`, with its centre-crop fallback after 10 misses.
fn crop_box(h: usize, w: usize, scale: (f64, f64), ratio: (f64, f64), rng: &mut KeyedRng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let (lr0, lr1) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target = area * rng.uniform_in(scale.0, scale.1);
        let aspect = rng.uniform_in(lr0, lr1).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.below(h - ch + 1);
            let left = rng.below(w - cw + 1);
            return (top, left, ch, cw);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < ratio.0 {
        (((w as f64) / ratio.0).round() as usize, w)
    } else if in_ratio > ratio.1 {
        (h, ((h as f64) * ratio.1).round() as usize)
    } else {
        (h, w)
    };
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn random_resized_crop(
    image: &Tensor<f32>,
    scale: (f64, f64),
    ratio: (f64, f64),
    size: usize,
    rng: &mut KeyedRng,
) -> Result<Tensor<f32>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let (top, left, mut ch, mut cw) = crop_box(h, w, scale, ratio, rng);
    // Bicubic needs at least a 2x2 source.
    ch = ch.max(2);
    cw = cw.max(2);
    let top = top.min(h - ch);
    let left = left.min(w - cw);
    let src = image.data();
    let mut data = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        for y in top..top + ch {
            let row = (c * h + y) * w;
            data.extend_from_slice(&src[row + left..row + left + cw]);
        }
    }
    let cropped = Tensor::new(&[3, ch, cw], data)?;
    if ch == size && cw == size {
        return Ok(cropped);
    }
    let out = resize_bicubic_rect(&cropped, size, size)?;
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

fn flip_horizontal(px: &mut [f64], size: usize) {
    for row in px.chunks_mut(size) {
        row.reverse();
    }
}

fn luma(px: &[f64], hw: usize, i: usize) -> f64 {
    LUMA[0] * px[i] + LUMA[1] * px[hw + i] + LUMA[2] * px[2 * hw + i]
}

fn blend(px: &mut [f64], other: impl Fn(usize) -> f64, factor: f64) {
    for (i, v) in px.iter_mut().enumerate() {
        let o = other(i);
        *v = (o + factor * (*v - o)).clamp(0.0, 1.0);
    }
}

/// Brightness, contrast, saturation, hue, in that order.
fn color_jitter(px: &mut [f64], hw: usize, j: &ColorJitter, rng: &mut KeyedRng) {
    let factor = |rng: &mut KeyedRng, s: f64| rng.uniform_in((1.0 - s).max(0.0), 1.0 + s);
    let b = factor(rng, j.brightness);
    for v in px.iter_mut() {
        *v = (*v * b).clamp(0.0, 1.0);
    }

    let c = factor(rng, j.contrast);
    let mean = (0..hw).map(|i| luma(px, hw, i)).sum::<f64>() / hw as f64;
    blend(px, |_| mean, c);

    let s = factor(rng, j.saturation);
    let gray: Vec<f64> = (0..hw).map(|i| luma(px, hw, i)).collect();
    blend(px, |i| gray[i % hw], s);

    let angle = rng.uniform_in(-j.hue, j.hue) * std::f64::consts::TAU;
    let (sin, cos) = angle.sin_cos();
    for i in 0..hw {
        let (r, g, b) = (px[i], px[hw + i], px[2 * hw + i]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let ci = 0.596 * r - 0.274 * g - 0.322 * b;
        let cq = 0.211 * r - 0.523 * g + 0.312 * b;
        let (ci, cq) = (ci * cos - cq * sin, ci * sin + cq * cos);
        px[i] = (y + 0.956 * ci + 0.621 * cq).clamp(0.0, 1.0);
        px[hw + i] = (y - 0.272 * ci - 0.647 * cq).clamp(0.0, 1.0);
        px[2 * hw + i] = (y - 1.106 * ci + 1.703 * cq).clamp(0.0, 1.0);
    }
}

fn grayscale(px: &mut [f64], hw: usize) {
    for i in 0..hw {
        let l = luma(px, hw, i);
        for c in 0..3 {
            px[c * hw + i] = l;
        }
    }
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and edge clamping.
fn gaussian_blur(px: &mut [f64], size: usize, sigma: f64) {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    let clamp = |p: i64| p.clamp(0, size as i64 - 1) as usize;
    let mut tmp = vec![0.0; size * size];
    for plane in px.chunks_mut(size * size) {
        for y in 0..size {
            for x in 0..size {
                tmp[y * size + x] = k
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * plane[y * size + clamp(x as i64 + t as i64 - r)])
                    .sum();
            }
        }
        for y in 0..size {
            for x in 0..size {
                plane[y * size + x] = k
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * tmp[clamp(y as i64 + t as i64 - r) * size + x])
                    .sum::<f64>()
                    .clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::synthetic_image;
    use crate::encoders::resize::resize_bicubic;
    use proptest::prelude::*;

    fn stream(seed: u64) -> ViewStream {
        ViewStream { seed, epoch: 0, record: 0 }
    }

    #[test]
    fn default_bundle_has_ten_views_at_model_size() {
        let img = synthetic_image(1, 48);
        let b = make_views(&img, &AugmentationConfig::default(), stream(3)).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.globals().len(), 2);
        assert_eq!(b.locals().len(), 8);
        for v in &b.views {
            assert_eq!(v.shape(), &[3, 32, 32]);
        }
    }

    #[test]
    fn disabled_augmentation_reproduces_resized_input() {
        let img = synthetic_image(2, 40);
        let cfg = AugmentationConfig {
            global_scale: (1.0, 1.0),
            ..AugmentationConfig::default().without_photometric()
        };
        let b = make_views(&img, &cfg, stream(0)).unwrap();
        let expected = resize_bicubic(&img, 32).unwrap().map(|v| v.clamp(0.0, 1.0));
        assert_eq!(b.views[0], expected);
        assert_eq!(b.views[1], expected);
    }

    #[test]
    fn same_stream_same_bundle() {
        let img = synthetic_image(5, 32);
        let cfg = AugmentationConfig::default();
        let a = make_views(&img, &cfg, stream(9)).unwrap();
        let b = make_views(&img, &cfg, stream(9)).unwrap();
        assert_eq!(a, b);
        let c = make_views(&img, &cfg, ViewStream { seed: 9, epoch: 1, record: 0 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequential_and_parallel_bundles_match() {
        let img = synthetic_image(6, 32);
        let cfg = AugmentationConfig::default();
        let a = make_views(&img, &cfg, stream(4)).unwrap();
        let b = exec::sequential(|| make_views(&img, &cfg, stream(4))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn image_smaller_than_crop_rejected() {
        let img = synthetic_image(1, 12);
        assert!(matches!(
            make_views(&img, &AugmentationConfig::default(), stream(0)),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let img = synthetic_image(1, 32);
        for cfg in [
            AugmentationConfig { flip_prob: 1.5, ..Default::default() },
            AugmentationConfig { local_crop_size: 1, ..Default::default() },
            AugmentationConfig { local_scale: (0.5, 0.2), ..Default::default() },
        ] {
            assert!(matches!(make_views(&img, &cfg, stream(0)), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn torchvision_fallback_is_centre_crop() {
        let mut rng = KeyedRng::new(0, Domain::View, &[]);
        // An impossible scale forces the fallback.
        let b = crop_box(10, 40, (2.0, 2.0), (0.75, 4.0 / 3.0), &mut rng);
        assert_eq!(b, (0, 13, 10, 13));
    }

    #[test]
    fn solarize_only_on_second_global_view() {
        let img = Tensor::full(&[3, 16, 16], 0.9f32);
        let cfg = AugmentationConfig {
            global_crop_size: 16,
            local_crop_size: 8,
            n_local: 2,
            solarize_prob: 1.0,
            ..AugmentationConfig::default().without_photometric()
        };
        let b = make_views(&img, &cfg, stream(0)).unwrap();
        for (i, v) in b.views.iter().enumerate() {
            let want = if i == 1 { 0.1 } else { 0.9 };
            assert!(v.data().iter().all(|x| (x - want).abs() < 1e-5), "view {i}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn views_stay_in_unit_range(seed in any::<u64>(), img_seed in 0u64..1000) {
            let img = synthetic_image(img_seed, 20);
            let cfg = AugmentationConfig {
                global_crop_size: 16,
                local_crop_size: 8,
                n_local: 2,
                jitter_prob: 1.0,
                solarize_prob: 1.0,
                ..Default::default()
            };
            let b = make_views(&img, &cfg, stream(seed)).unwrap();
            for v in &b.views {
                prop_assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }
}
