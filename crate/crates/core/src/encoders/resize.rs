//! Separable bicubic resampling (Catmull-Rom, a = -0.5) with edge clamping
//! and pixel-center alignment.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for each output coordinate along one axis.
fn taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let p = base as i64 + k as i64 - 1;
                idx[k] = p.clamp(0, input as i64 - 1) as usize;
                w[k] = cubic(frac - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Resizes a `[C, H, W]` image to `[C, out_h, out_w]`.
pub fn resize_bicubic_rect<T: Scalar>(image: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::dim("resize_bicubic", s, &[3, out_h, out_w]));
    }
    if out_h < 1 || out_w < 1 {
        return Err(Error::domain("resize_bicubic", "target size must be >= 1"));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < 2 || w < 2 {
        return Err(Error::domain("resize_bicubic", format!("source {h}x{w} is smaller than 2x2")));
    }
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let src = image.data();
    let mut horiz = vec![0.0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, (idx, wt)) in tx.iter().enumerate() {
                horiz[(ch * h + y) * out_w + x] =
                    (0..4).map(|k| row[idx[k]].as_f64() * wt[k]).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for (idx, wt) in &ty {
            for x in 0..out_w {
                let v: f64 = (0..4)
                    .map(|k| horiz[(ch * h + idx[k]) * out_w + x] * wt[k])
                    .sum();
                out.push(T::from_f64(v));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Square resize of a `[C, s, s]` image to `[C, target, target]`.
pub fn resize_bicubic<T: Scalar>(image: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    resize_bicubic_rect(image, target, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, s: usize, slope: f64) -> Tensor<f64> {
        let mut d = Vec::new();
        for ch in 0..c {
            for y in 0..s {
                for x in 0..s {
                    d.push(0.1 * ch as f64 + slope * (x as f64 + 0.5 * y as f64));
                }
            }
        }
        Tensor::new(&[c, s, s], d).unwrap()
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::<f32>::full(&[3, 5, 5], 0.37);
        for t in [1, 2, 5, 9, 32] {
            let r = resize_bicubic(&img, t).unwrap();
            assert_eq!(r.shape(), &[3, t, t]);
            assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = ramp(3, 6, 0.05).map(|v| (v * 7.0).sin());
        let r = resize_bicubic(&img, 6).unwrap();
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ramp_reproduced_at_original_grid_points() {
        let (s, k) = (8, 3);
        let img = ramp(3, s, 0.01);
        let up = resize_bicubic(&img, s * k).unwrap();
        for ch in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    // Original pixel centre maps to output pixel k·i + k/2.
                    let (oy, ox) = (k * y + k / 2, k * x + k / 2);
                    let got = up.data()[(ch * s * k + oy) * s * k + ox];
                    let want = img.data()[(ch * s + y) * s + x];
                    assert!((got - want).abs() < 1e-3, "({y},{x}) {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn interior_reproduces_linear_functions_exactly() {
        let img = ramp(1, 10, 0.02);
        let up = resize_bicubic(&img, 20).unwrap();
        let scale = 10.0 / 20.0;
        for oy in 4..16 {
            for ox in 4..16 {
                let sx = (ox as f64 + 0.5) * scale - 0.5;
                let sy = (oy as f64 + 0.5) * scale - 0.5;
                let want = 0.02 * (sx + 0.5 * sy);
                assert!((up.data()[oy * 20 + ox] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let img = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert!(resize_bicubic(&img, 0).is_err());
        assert!(resize_bicubic(&Tensor::<f32>::zeros(&[3, 1, 1]), 4).is_err());
    }
}
