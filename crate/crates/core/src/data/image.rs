//! Image sources: binary PPM files and seeded synthetic fixtures.
//! All images are `[3, H, W]` tensors with values in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{Domain, KeyedRng};
use crate::tensor::Tensor;

/// Decodes a binary (P6) 8-bit PPM.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0usize;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Validation("truncated PPM header".into()));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if header[0] != "P6" {
        return Err(Error::Validation(format!("unsupported image format `{}`", header[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Validation(format!("bad PPM header value `{s}`")))
    };
    let (w, h, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval != 255 {
        return Err(Error::Validation(format!("only 8-bit PPM is supported (maxval {maxval})")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::Validation("truncated PPM raster".into()));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0f32; need];
    for (i, px) in raster.chunks(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("encode_ppm", s, &[3]));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        for c in 0..3 {
            let v = image.data()[c * h * w + i].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

/// A deterministic `size × size` test image: a per-image base colour
/// overlaid with oriented gratings.
pub fn synthetic_image(seed: u64, size: usize) -> Tensor<f32> {
    let mut rng = KeyedRng::new(seed, Domain::Fixture, &[size as u64]);
    let base: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.15, 0.85)).collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.uniform_in(0.0, std::f64::consts::PI);
            let freq = rng.uniform_in(1.0, 4.0) * std::f64::consts::TAU / size as f64;
            (freq * theta.cos(), freq * theta.sin(), rng.uniform_in(0.0, 6.3), rng.uniform_in(0.05, 0.12))
        })
        .collect();
    let mut data = Vec::with_capacity(3 * size * size);
    for (c, b) in base.iter().enumerate() {
        let (fx, fy, phase, amp) = waves[c];
        for y in 0..size {
            for x in 0..size {
                let v = b + amp * (fx * x as f64 + fy * y as f64 + phase).sin();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let img = synthetic_image(3, 5);
        let bytes = encode_ppm(&img).unwrap();
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.shape(), &[3, 5, 5]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn ppm_with_comment_and_errors() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
        assert!(decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
    }

    #[test]
    fn synthetic_images_are_seeded() {
        assert_eq!(synthetic_image(1, 8), synthetic_image(1, 8));
        assert_ne!(synthetic_image(1, 8), synthetic_image(2, 8));
        assert!(synthetic_image(7, 16).data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
