//! Aspect-preserving resize onto the network's fixed input resolution,
//! gray padding, and the inverse mapping of detections back to original
//! image coordinates.

use crate::tensor::Tensor;

use super::Detection;

/// Plain 8-bit RGB pixel grid, row-major. Keeps the engine codec-free;
/// decoding lives with the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` bytes, RGB interleaved.
    pub rgb: Vec<u8>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1);
        PixelImage {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, p: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&p);
    }
}

/// How an image was fitted into the network frame; needed to map
/// detections back out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterboxTransform {
    pub scale: f32,
    pub pad_x: usize,
    pub pad_y: usize,
    pub orig_w: usize,
    pub orig_h: usize,
    pub net_w: usize,
    pub net_h: usize,
}

/// Resizes `img` into a `(3, net_h, net_w)` tensor: bilinear resample at
/// `min(net_w/w, net_h/h)`, centered, 0.5-gray padding, values in `[0, 1]`.
pub fn letterbox(img: &PixelImage, net_w: usize, net_h: usize) -> (Tensor, LetterboxTransform) {
    let scale = (net_w as f32 / img.width as f32).min(net_h as f32 / img.height as f32);
    let scaled_w = ((img.width as f32 * scale).round() as usize).clamp(1, net_w);
    let scaled_h = ((img.height as f32 * scale).round() as usize).clamp(1, net_h);
    let pad_x = (net_w - scaled_w) / 2;
    let pad_y = (net_h - scaled_h) / 2;

    let mut out = Tensor::filled(3, net_h, net_w, 0.5);
    for y in 0..scaled_h {
        let sy = (y as f32 + 0.5) / scale - 0.5;
        for x in 0..scaled_w {
            let sx = (x as f32 + 0.5) / scale - 0.5;
            let rgb = sample_bilinear(img, sx, sy);
            for (c, v) in rgb.iter().enumerate() {
                out.set(c, y + pad_y, x + pad_x, *v);
            }
        }
    }

    (
        out,
        LetterboxTransform {
            scale,
            pad_x,
            pad_y,
            orig_w: img.width,
            orig_h: img.height,
            net_w,
            net_h,
        },
    )
}

fn sample_bilinear(img: &PixelImage, x: f32, y: f32) -> [f32; 3] {
    let max_x = (img.width - 1) as f32;
    let max_y = (img.height - 1) as f32;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;

    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);

    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
        let bottom = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy) / 255.0;
    }
    out
}

/// Maps net-frame detections back into normalized original-image
/// coordinates, clamping to `[0, 1]`.
pub fn unletterbox(detections: &mut [Detection], t: &LetterboxTransform) {
    let net_w = t.net_w as f32;
    let net_h = t.net_h as f32;
    let span_x = t.scale * t.orig_w as f32;
    let span_y = t.scale * t.orig_h as f32;
    for d in detections {
        let b = &mut d.bbox;
        b.cx = ((b.cx * net_w - t.pad_x as f32) / span_x).clamp(0.0, 1.0);
        b.cy = ((b.cy * net_h - t.pad_y as f32) / span_y).clamp(0.0, 1.0);
        b.w = (b.w * net_w / span_x).clamp(0.0, 1.0);
        b.h = (b.h * net_h / span_y).clamp(0.0, 1.0);
    }
}
