//! Reference-view losses: soft mask, normal and scale-free depth.

use serde::{Deserialize, Serialize};

use super::supervision::ReferenceSupervision;
use crate::render::{NormalAlphaRender, RasterImage};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub normal: f64,
    pub depth: f64,
    pub isd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 100.0,
            normal: 10.0,
            depth: 1.0,
            isd: 1.0,
        }
    }
}

impl LossWeights {
    pub(crate) fn first_invalid(&self) -> Option<&'static str> {
        [
            ("mask", self.mask),
            ("normal", self.normal),
            ("depth", self.depth),
            ("isd", self.isd),
        ]
        .into_iter()
        .find(|(_, w)| !(w.is_finite() && *w >= 0.0))
        .map(|(n, _)| n)
    }
}

/// Negative Pearson correlation and its gradient with respect to `a`.
pub fn pearson_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::invalid("pearson inputs differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(
            "pearson correlation needs at least two samples".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let scale = ma.abs().max(mb.abs()).max(1.0);
    let tiny = 1e-24 * scale * scale * n;
    if saa <= tiny || sbb <= tiny {
        return Err(Error::Degenerate(
            "pearson correlation of a zero-variance signal".into(),
        ));
    }
    let (sa, sb) = (saa.sqrt(), sbb.sqrt());
    let r = (sab / (sa * sb)).clamp(-1.0, 1.0);
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| -((y - mb) / (sa * sb) - r * (x - ma) / saa))
        .collect();
    Ok((-r, grad))
}

/// `−corr(pred, ref)` over pixels where `mask` is nonzero.
pub fn pearson_depth_loss(
    pred: &RasterImage,
    reference: &RasterImage,
    mask: &RasterImage,
) -> Result<f64> {
    if !pred.same_shape(reference) || pred.channels != 1 || mask.pixel_count() != pred.pixel_count()
    {
        return Err(Error::invalid(
            "depth loss needs single-channel images of one size",
        ));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = (0..pred.pixel_count())
        .filter(|&i| mask.data[i * mask.channels] != 0.0)
        .map(|i| (pred.data[i], reference.data[i]))
        .unzip();
    Ok(pearson_with_grad(&a, &b)?.0)
}

/// Loss values and pixel-space gradients for one reference render.
#[derive(Debug, Clone)]
pub struct ReferenceLosses {
    pub mask: f64,
    pub normal: f64,
    /// `None` when the depth correlation is undefined for this render.
    pub depth: Option<f64>,
    pub total: f64,
    /// Weighted `dL/d image` for the RGBA normal-alpha render.
    pub grad_image: RasterImage,
    /// Weighted `dL/d depth`.
    pub grad_depth: RasterImage,
}

/// Evaluates the weighted reference loss on a normal-alpha render taken
/// from the supervision camera.
///
/// The mask term only counts pixels where hard coverage disagrees with the
/// mask, normalized by the full pixel count. The normal term averages over
/// mask pixels. The depth term correlates over pixels that are both masked
/// and covered.
pub fn reference_losses_for_render(
    render: &NormalAlphaRender,
    supervision: &ReferenceSupervision,
    weights: &LossWeights,
) -> Result<ReferenceLosses> {
    let gb = &render.gbuffer;
    if gb.width != supervision.camera.width || gb.height != supervision.camera.height {
        return Err(Error::invalid(format!(
            "render is {}x{}, supervision is {}x{}",
            gb.width, gb.height, supervision.camera.width, supervision.camera.height
        )));
    }
    let n = gb.pixel_count();
    let m = supervision.mask_bits();
    let rot = gb.camera.rotation();
    let mut grad_image = RasterImage::new(gb.width, gb.height, 4);
    let mut grad_depth = RasterImage::new(gb.width, gb.height, 1);

    let mut mask_loss = 0.0;
    for i in 0..n {
        let hard = gb.face[i].is_some();
        if hard != m[i] {
            let d = render.silhouette.alpha[i] - if m[i] { 1.0 } else { 0.0 };
            mask_loss += d * d;
            grad_image.pixel_mut(i)[3] = weights.mask * 2.0 * d / n as f64;
        }
    }
    mask_loss /= n as f64;

    let inside = m.iter().filter(|v| **v).count();
    let mut normal_loss = 0.0;
    if inside > 0 {
        for i in (0..n).filter(|&i| m[i]) {
            let reference = supervision.normal_map.pixel(i);
            let rendered = gb.face[i].map(|_| rot * gb.normal[i]);
            for k in 0..3 {
                let d = rendered.map_or(0.0, |v| v[k]) - reference[k];
                normal_loss += d * d;
                if rendered.is_some() {
                    // RGB = (n + 1) / 2, so dL/dRGB = 2 dL/dn.
                    grad_image.pixel_mut(i)[k] = weights.normal * 4.0 * d / inside as f64;
                }
            }
        }
        normal_loss /= inside as f64;
    }

    let idx: Vec<usize> = (0..n).filter(|&i| m[i] && gb.face[i].is_some()).collect();
    let a: Vec<f64> = idx.iter().map(|&i| gb.depth[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| supervision.depth_map.data[i]).collect();
    let depth = match pearson_with_grad(&a, &b) {
        Ok((l, g)) => {
            for (&i, gi) in idx.iter().zip(g) {
                grad_depth.data[i] = weights.depth * gi;
            }
            Some(l)
        }
        Err(Error::Degenerate(msg)) => {
            log::warn!("depth term omitted: {msg}");
            None
        }
        Err(e) => return Err(e),
    };

    let total = weights.mask * mask_loss
        + weights.normal * normal_loss
        + weights.depth * depth.unwrap_or(0.0);
    Ok(ReferenceLosses {
        mask: mask_loss,
        normal: normal_loss,
        depth,
        total,
        grad_image,
        grad_depth,
    })
}
