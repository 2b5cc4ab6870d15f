//! Canny edge detector: Gaussian blur, Sobel, non-maximum suppression and
//! hysteresis thresholding.

use std::collections::VecDeque;

use crate::render::{gaussian_blur, RasterImage};

pub const CANNY_SIGMA: f64 = 1.4;
pub const DEFAULT_LOW: f64 = 0.1;
pub const DEFAULT_HIGH: f64 = 0.2;

/// Rec. 709 luma of a linear image (single-channel input passes through).
pub fn luma(img: &RasterImage) -> RasterImage {
    match img.channels {
        1 => img.clone(),
        c => {
            let data = (0..img.pixel_count())
                .map(|i| {
                    let p = img.pixel(i);
                    if c >= 3 {
                        0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]
                    } else {
                        p[0]
                    }
                })
                .collect();
            RasterImage::from_data(img.width, img.height, 1, data).expect("shape")
        }
    }
}

/// Binary edge map. Thresholds apply to the Sobel magnitude (divided by 4,
/// so a unit step gives magnitude ≈ 1 before blurring).
pub fn canny(image: &RasterImage, low: f64, high: f64) -> RasterImage {
    let (w, h) = (image.width, image.height);
    let g = gaussian_blur(&luma(image), CANNY_SIGMA);
    let at = |x: i64, y: i64| {
        g.data[(y.clamp(0, h as i64 - 1) as usize) * w + x.clamp(0, w as i64 - 1) as usize]
    };
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 4.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 4.0;
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            // Quantize the gradient direction to 0°, 45°, 90°, 135°.
            let a = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = if !(22.5..157.5).contains(&a) {
                0
            } else if a < 67.5 {
                1
            } else if a < 112.5 {
                2
            } else {
                3
            };
        }
    }
    // Asymmetric comparison (> behind, >= ahead) keeps a single pixel on
    // plateaus such as the two equal maxima of a blurred ideal step.
    let m = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let (dx, dy) = match dir[i] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let v = mag[i];
            if v > m(x - dx, y - dy) && v >= m(x + dx, y + dy) {
                thin[i] = v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] >= high && thin[i] > 0.0 {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= low && thin[j] > 0.0 {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    RasterImage::from_data(w, h, 1, out).expect("shape")
}
