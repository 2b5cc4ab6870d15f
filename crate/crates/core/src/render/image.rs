//! Float images plus PNG and PFM input/output.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

/// Interleaved, row-major float image. Row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data has {} samples, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn channel(&self, c: usize) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    /// Keeps the first `n` channels.
    pub fn truncate_channels(&self, n: usize) -> RasterImage {
        let n = n.min(self.channels);
        let mut data = Vec::with_capacity(self.pixel_count() * n);
        for i in 0..self.pixel_count() {
            data.extend_from_slice(&self.pixel(i)[..n]);
        }
        RasterImage {
            width: self.width,
            height: self.height,
            channels: n,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RasterImage {
        RasterImage {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &RasterImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, other: &RasterImage) -> f64 {
        let n = self.data.len().max(1) as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        self.to_dynamic()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_dynamic()?
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// 8-bit encoding: colour channels go through the sRGB transfer curve,
    /// single-channel and alpha samples are stored linearly.
    fn to_dynamic(&self) -> Result<image::DynamicImage> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let bytes: Vec<u8> = match self.channels {
            1 => self.data.iter().map(|&v| q(v)).collect(),
            3 | 4 => self
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i % self.channels == 3 {
                        q(v)
                    } else {
                        q(linear_to_srgb(v))
                    }
                })
                .collect(),
            c => {
                return Err(Error::invalid(format!(
                    "cannot encode {c}-channel image as PNG"
                )))
            }
        };
        let img = match self.channels {
            1 => image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, bytes).expect("size"),
            ),
            3 => image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, bytes).expect("size"),
            ),
            _ => image::DynamicImage::ImageRgba8(
                image::RgbaImage::from_raw(w, h, bytes).expect("size"),
            ),
        };
        Ok(img)
    }

    /// Inverse of [`RasterImage::write_png`]; grey and grey-alpha images
    /// load as one channel, everything else as linear RGB(A).
    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let from = |v: u8| v as f64 / 255.0;
        let out = match img.color().channel_count() {
            1 | 2 => {
                let g = img.to_luma8();
                RasterImage::from_data(w, h, 1, g.into_raw().into_iter().map(from).collect())?
            }
            3 => {
                let g = img.to_rgb8();
                RasterImage::from_data(
                    w,
                    h,
                    3,
                    g.into_raw()
                        .into_iter()
                        .map(|v| srgb_to_linear(from(v)))
                        .collect(),
                )?
            }
            _ => {
                let g = img.to_rgba8();
                let data = g
                    .into_raw()
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        if i % 4 == 3 {
                            from(v)
                        } else {
                            srgb_to_linear(from(v))
                        }
                    })
                    .collect();
                RasterImage::from_data(w, h, 4, data)?
            }
        };
        Ok(out)
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_pfm_to(&mut f)
            .and_then(|_| f.flush().map_err(Error::from_io))
            .map_err(|e| match e {
                Error::Stream(io) => Error::io(path, io),
                other => other,
            })
    }

    /// Little-endian PFM, 1 (`Pf`) or 3 (`PF`) channels, rows bottom to top.
    pub fn write_pfm_to(&self, w: &mut impl Write) -> Result<()> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => {
                return Err(Error::invalid(format!(
                    "PFM supports 1 or 3 channels, not {c}"
                )))
            }
        };
        let mut buf = format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        buf.reserve(self.data.len() * 4);
        for y in (0..self.height).rev() {
            let row =
                &self.data[y * self.width * self.channels..(y + 1) * self.width * self.channels];
            for v in row {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(Error::from_io)
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pfm_from(&mut BufReader::new(f)).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn read_pfm_from(r: &mut impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        // Header: three whitespace-separated tokens followed by one whitespace byte.
        while tokens.len() < 4 {
            let mut tok = Vec::new();
            loop {
                let mut b = [0u8];
                r.read_exact(&mut b)
                    .map_err(|e| Error::invalid(format!("PFM header: {e}")))?;
                if b[0].is_ascii_whitespace() {
                    if !tok.is_empty() {
                        break;
                    }
                } else {
                    tok.push(b[0]);
                }
                if tok.len() > 32 {
                    return Err(Error::invalid("PFM header token too long"));
                }
            }
            tokens.push(String::from_utf8_lossy(&tok).into_owned());
        }
        let channels = match tokens[0].as_str() {
            "Pf" => 1,
            "PF" => 3,
            t => return Err(Error::invalid(format!("bad PFM tag {t:?}"))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad PFM size {s:?}")))
        };
        let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let scale: f64 = tokens[3]
            .parse()
            .map_err(|_| Error::invalid(format!("bad PFM scale {:?}", tokens[3])))?;
        if w == 0 || h == 0 || w * h > 1 << 28 {
            return Err(Error::invalid("PFM size out of range"));
        }
        let little = scale < 0.0;
        let mut raw = vec![0u8; w * h * channels * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::invalid(format!("PFM data: {e}")))?;
        let mut data = vec![0.0; w * h * channels];
        let row_len = w * channels;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            let (file_row, col) = (k / row_len, k % row_len);
            data[(h - 1 - file_row) * row_len + col] = v as f64;
        }
        let img = Self::from_data(w, h, channels, data)?;
        if !img.is_finite() {
            return Err(Error::invalid("PFM contains non-finite samples"));
        }
        Ok(img)
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` copies.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h, c) = (img.width as i64, img.height as i64, img.channels);
    let mut tmp = RasterImage::new(img.width, img.height, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x + i as i64 - r).clamp(0, w - 1);
                    acc += kv * img.get(xx as usize, y as usize, ch);
                }
                tmp.set(x as usize, y as usize, ch, acc);
            }
        }
    }
    let mut out = RasterImage::new(img.width, img.height, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y + i as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp.get(x as usize, yy as usize, ch);
                }
                out.set(x as usize, y as usize, ch, acc);
            }
        }
    }
    out
}
