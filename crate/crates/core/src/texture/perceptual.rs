//! Pyramid gradient loss. Each of four levels (box-downsampled by two)
//! contributes the mean absolute difference of Sobel responses, so the loss
//! vanishes exactly when the images differ by a constant at every level.

use crate::render::RasterImage;
use crate::{Error, Result};

pub const PERCEPTUAL_LEVELS: usize = 4;

const SOBEL: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

fn downsample(img: &RasterImage) -> RasterImage {
    let (w, h, c) = (img.width / 2, img.height / 2, img.channels);
    let mut out = RasterImage::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let s = img.get(2 * x, 2 * y, k)
                    + img.get(2 * x + 1, 2 * y, k)
                    + img.get(2 * x, 2 * y + 1, k)
                    + img.get(2 * x + 1, 2 * y + 1, k);
                out.set(x, y, k, 0.25 * s);
            }
        }
    }
    out
}

fn downsample_adjoint(g: &RasterImage, width: usize, height: usize) -> RasterImage {
    let mut out = RasterImage::new(width, height, g.channels);
    for y in 0..g.height {
        for x in 0..g.width {
            for k in 0..g.channels {
                let v = 0.25 * g.get(x, y, k);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out.set(2 * x + dx, 2 * y + dy, k, v);
                }
            }
        }
    }
    out
}

/// Visits the Sobel stencil of pixel `(x, y)` with clamped borders, passing
/// `(source index, x weight, y weight)`.
fn stencil(img: &RasterImage, x: usize, y: usize, mut f: impl FnMut(usize, f64, f64)) {
    let (w, h) = (img.width as i64, img.height as i64);
    for (j, row) in SOBEL.iter().enumerate() {
        for (i, &kx) in row.iter().enumerate() {
            let ky = SOBEL[i][j];
            if kx == 0.0 && ky == 0.0 {
                continue;
            }
            let sx = (x as i64 + i as i64 - 1).clamp(0, w - 1) as usize;
            let sy = (y as i64 + j as i64 - 1).clamp(0, h - 1) as usize;
            f(sy * img.width + sx, kx / 8.0, ky / 8.0);
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss at one level and, optionally, its gradient with respect to `d`.
fn level(d: &RasterImage, grad: Option<&mut RasterImage>) -> f64 {
    let c = d.channels;
    let count = (d.pixel_count() * c * 2) as f64;
    let mut loss = 0.0;
    let mut signs = Vec::with_capacity(d.pixel_count() * c * 2);
    for y in 0..d.height {
        for x in 0..d.width {
            let mut gx = vec![0.0; c];
            let mut gy = vec![0.0; c];
            stencil(d, x, y, |s, wx, wy| {
                for k in 0..c {
                    gx[k] += wx * d.data[s * c + k];
                    gy[k] += wy * d.data[s * c + k];
                }
            });
            for k in 0..c {
                loss += gx[k].abs() + gy[k].abs();
                signs.push((sign(gx[k]), sign(gy[k])));
            }
        }
    }
    if let Some(g) = grad {
        let mut it = signs.into_iter();
        for y in 0..d.height {
            for x in 0..d.width {
                let s: Vec<(f64, f64)> = (0..c)
                    .map(|_| it.next().expect("sign per channel"))
                    .collect();
                stencil(d, x, y, |src, wx, wy| {
                    for k in 0..c {
                        g.data[src * c + k] += (wx * s[k].0 + wy * s[k].1) / count;
                    }
                });
            }
        }
    }
    loss / count
}

fn check(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(
            "perceptual loss needs images of equal shape",
        ));
    }
    if a.width == 0 || a.height == 0 {
        return Err(Error::invalid("perceptual loss needs a non-empty image"));
    }
    Ok(())
}

pub fn perceptual_loss(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check(a, b)?;
    let mut d = a.clone();
    for (x, y) in d.data.iter_mut().zip(&b.data) {
        *x -= y;
    }
    let mut total = 0.0;
    for l in 0..PERCEPTUAL_LEVELS {
        if l > 0 {
            if d.width < 2 || d.height < 2 {
                break;
            }
            d = downsample(&d);
        }
        total += level(&d, None);
    }
    Ok(total)
}

/// Loss and `dL/da`. The absolute value uses a zero subgradient at 0.
pub fn perceptual_loss_with_grad(a: &RasterImage, b: &RasterImage) -> Result<(f64, RasterImage)> {
    check(a, b)?;
    let mut d = a.clone();
    for (x, y) in d.data.iter_mut().zip(&b.data) {
        *x -= y;
    }
    let mut pyramid = vec![d];
    while pyramid.len() < PERCEPTUAL_LEVELS {
        let last = pyramid.last().expect("non-empty");
        if last.width < 2 || last.height < 2 {
            break;
        }
        pyramid.push(downsample(last));
    }
    let mut total = 0.0;
    let mut grad: Option<RasterImage> = None;
    for d in pyramid.iter().rev() {
        let mut g = match grad.take() {
            Some(coarse) => downsample_adjoint(&coarse, d.width, d.height),
            None => RasterImage::new(d.width, d.height, d.channels),
        };
        total += level(d, Some(&mut g));
        grad = Some(g);
    }
    Ok((total, grad.expect("at least one level")))
}
