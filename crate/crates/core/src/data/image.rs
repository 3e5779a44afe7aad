//! 8-bit PNG / binary PPM reading and writing.

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            format: format!("{other:?}"),
        }),
    }
}

/// Reads an 8-bit image as `(1, 3, H, W)` with values `v / 255`. Grey images
/// are replicated to three channels; alpha is dropped.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let rgb = open(path)?.to_rgb8();
    Ok(rgb_to_tensor(&rgb))
}

fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
    })
}

/// Reads a change mask as `(1, 1, H, W)`: pixels with luma >= 128 are 1.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let g = open(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        if g.get_pixel(x as u32, y as u32).0[0] >= 128 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Reads two images that must share dimensions.
pub fn load_image_pair(a: &Path, b: &Path) -> Result<(Tensor, Tensor)> {
    let ta = load_image(a)?;
    let tb = load_image(b)?;
    let (sa, sb) = (ta.shape(), tb.shape());
    if (sa.h, sa.w) != (sb.h, sb.w) {
        return Err(Error::ImageSizeMismatch {
            a: a.to_path_buf(),
            a_w: sa.w as u32,
            a_h: sa.h as u32,
            b: b.to_path_buf(),
            b_w: sb.w as u32,
            b_h: sb.h as u32,
        });
    }
    Ok((ta, tb))
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes plane `(0, 0)` of `t` as an 8-bit grey image; values are clamped to
/// [0, 1] and scaled to 0..=255. The format follows the file extension.
pub fn save_gray(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let plane = t.plane(0, 0);
    let img = GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Luma([to_byte(plane[y as usize * s.w + x as usize])])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes item 0 of a 3-channel tensor as an 8-bit RGB image.
pub fn save_rgb(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::DimMismatch {
            op: "save_rgb",
            dim: "channels",
            expected: 3,
            got: s.c,
        });
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| to_byte(t.at(0, c, y, x))))
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
