//! Bilinear texture shading with per-pixel texel footprints.
//!
//! Texel `(i, j)` (column, row) is centred at `u = (i + 0.5) / W`,
//! `v = 1 − (j + 0.5) / H`, so row 0 is the top of the texture image.

use super::image::RasterImage;
use super::raster::GBuffer;

/// Up to four texels and their bilinear weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FootprintEntry {
    pub texels: [u32; 4],
    pub weights: [f64; 4],
    pub count: u8,
}

impl FootprintEntry {
    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        (0..self.count as usize).map(|k| (self.texels[k], self.weights[k]))
    }

    fn push(&mut self, t: u32, w: f64) {
        if w == 0.0 {
            return;
        }
        for k in 0..self.count as usize {
            if self.texels[k] == t {
                self.weights[k] += w;
                return;
            }
        }
        let k = self.count as usize;
        self.texels[k] = t;
        self.weights[k] = w;
        self.count += 1;
    }
}

#[derive(Debug, Clone)]
pub struct Footprint {
    pub texture_width: usize,
    pub texture_height: usize,
    /// One entry per pixel; empty on background.
    pub pixels: Vec<FootprintEntry>,
    /// Number of covered pixels whose UV fell outside [0, 1]² and was clamped.
    pub clamped_uvs: usize,
}

impl Footprint {
    /// True when every texel contributing to pixel `i` is covered. Background
    /// pixels are never known.
    pub fn pixel_known(&self, i: usize, coverage: &[bool]) -> bool {
        let e = &self.pixels[i];
        e.count > 0 && e.iter().all(|(t, _)| coverage[t as usize])
    }
}

/// Bilinear footprint of a UV position; the flag reports clamping.
pub fn bilinear_footprint(u: f64, v: f64, tw: usize, th: usize) -> (FootprintEntry, bool) {
    let clamped = !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v);
    let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
    let x = (u * tw as f64 - 0.5).clamp(0.0, tw as f64 - 1.0);
    let y = ((1.0 - v) * th as f64 - 0.5).clamp(0.0, th as f64 - 1.0);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(tw - 1), (y0 + 1).min(th - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut e = FootprintEntry::default();
    let id = |x: usize, y: usize| (y * tw + x) as u32;
    e.push(id(x0, y0), (1.0 - fx) * (1.0 - fy));
    e.push(id(x1, y0), fx * (1.0 - fy));
    e.push(id(x0, y1), (1.0 - fx) * fy);
    e.push(id(x1, y1), fx * fy);
    if e.count == 0 {
        e.push(id(x0, y0), 1.0);
    }
    (e, clamped)
}

/// Samples `texture` at each covered pixel's UV. Background pixels are 0.
pub fn shade_texture(gb: &GBuffer, texture: &RasterImage) -> (RasterImage, Footprint) {
    let (tw, th, c) = (texture.width, texture.height, texture.channels);
    let mut img = RasterImage::new(gb.width, gb.height, c);
    let mut pixels = vec![FootprintEntry::default(); gb.pixel_count()];
    let mut clamped_uvs = 0;
    for i in 0..gb.pixel_count() {
        if gb.face[i].is_none() {
            continue;
        }
        let (e, clamped) = bilinear_footprint(gb.uv[i][0], gb.uv[i][1], tw, th);
        clamped_uvs += clamped as usize;
        let out = img.pixel_mut(i);
        for (t, w) in e.iter() {
            let src = texture.pixel(t as usize);
            for ch in 0..c {
                out[ch] += w * src[ch];
            }
        }
        pixels[i] = e;
    }
    (
        img,
        Footprint {
            texture_width: tw,
            texture_height: th,
            pixels,
            clamped_uvs,
        },
    )
}
