//! Image codec boundary: everything that touches the `image` crate lives
//! here, keeping the engine core codec-free.

use std::path::Path;

use anyhow::{Context, Result};
use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, RgbImage};

use breathgate_core::detect::{Detection, PixelImage};

pub fn load_pixel_image(path: &Path) -> Result<PixelImage> {
    let img = image::open(path)
        .with_context(|| format!("decoding image {}", path.display()))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    Ok(PixelImage {
        width: width as usize,
        height: height as usize,
        rgb: img.into_raw(),
    })
}

pub fn save_image(img: &PixelImage, path: &Path) -> Result<()> {
    let buffer = RgbImage::from_raw(img.width as u32, img.height as u32, img.rgb.clone())
        .context("pixel buffer size mismatch")?;
    buffer
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn encode_jpeg(img: &PixelImage, quality: u8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode(
            &img.rgb,
            img.width as u32,
            img.height as u32,
            ExtendedColorType::Rgb8,
        )
        .context("encoding JPEG")?;
    Ok(out)
}

pub fn is_jpeg(bytes: &[u8]) -> bool {
    bytes.len() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF
}

const PALETTE: [[u8; 3]; 6] = [
    [230, 60, 60],
    [60, 200, 80],
    [70, 110, 240],
    [230, 200, 50],
    [200, 70, 220],
    [60, 210, 210],
];

/// Burns detection rectangles into a copy of the image, colored by class.
pub fn annotate(img: &PixelImage, detections: &[Detection]) -> PixelImage {
    let mut out = img.clone();
    for det in detections {
        let color = PALETTE[det.class_id % PALETTE.len()];
        let (x1, y1, x2, y2) = det.bbox.corners();
        let clamp_x = |v: f32| ((v * img.width as f32) as i64).clamp(0, img.width as i64 - 1);
        let clamp_y = |v: f32| ((v * img.height as f32) as i64).clamp(0, img.height as i64 - 1);
        let (x1, y1, x2, y2) = (clamp_x(x1), clamp_y(y1), clamp_x(x2), clamp_y(y2));
        for t in 0..2i64 {
            for x in x1..=x2 {
                set(&mut out, x, y1 + t, color);
                set(&mut out, x, y2 - t, color);
            }
            for y in y1..=y2 {
                set(&mut out, x1 + t, y, color);
                set(&mut out, x2 - t, y, color);
            }
        }
    }
    out
}

fn set(img: &mut PixelImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
        img.set_pixel(x as usize, y as usize, color);
    }
}
