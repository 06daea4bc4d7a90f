//! Decoding, encoding and resampling of [`ImageBuffer`]s.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::imageops::FilterType;
use image::{ExtendedColorType, ImageEncoder, RgbImage};

use crate::error::{Error, Result};
use crate::types::{ImageBuffer, Rect};

/// Decodes PNG or JPEG bytes into an RGB raster.
pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Decode(format!("unsupported format {format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?
        .to_rgb8();
    from_rgb_image(img)
}

pub fn load(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.pixels(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Decode(e.to_string()))?;
    Ok(out)
}

/// Writes a PNG atomically (temporary sibling file, then rename).
pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_png(img)?)
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidImage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Bilinear resample to a `side`×`side` square.
pub fn resize_square(img: &ImageBuffer, side: u32) -> ImageBuffer {
    if img.width() == side && img.height() == side {
        return img.clone();
    }
    let resized = image::imageops::resize(&to_rgb_image(img), side, side, FilterType::Triangle);
    from_rgb_image(resized).expect("resize output is a valid raster")
}

/// Copy of `img` with one-pixel rectangle outlines drawn in `color`.
pub fn draw_rects(img: &ImageBuffer, rects: &[Rect], color: [u8; 3]) -> ImageBuffer {
    let mut out = img.clone();
    for r in rects {
        if r.w == 0 || r.h == 0 {
            continue;
        }
        let (x1, y1) = (r.right() - 1, r.bottom() - 1);
        for x in r.x..=x1 {
            out.set_pixel(x, r.y, color);
            out.set_pixel(x, y1, color);
        }
        for y in r.y..=y1 {
            out.set_pixel(r.x, y, color);
            out.set_pixel(x1, y, color);
        }
    }
    out
}

fn to_rgb_image(img: &ImageBuffer) -> RgbImage {
    RgbImage::from_raw(img.width(), img.height(), img.pixels().to_vec())
        .expect("ImageBuffer length invariant")
}

fn from_rgb_image(img: RgbImage) -> Result<ImageBuffer> {
    let (w, h) = img.dimensions();
    ImageBuffer::new(w, h, img.into_raw())
}
