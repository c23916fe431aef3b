use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::preproc::{BodyIndexMask, RawDepthFrame};

/// A decoded frame file.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameImage {
    /// 16-bit single-channel depth in millimetres.
    Depth(RawDepthFrame),
    /// 8-bit RGB, row-major interleaved.
    Rgb { width: usize, height: usize, pixels: Vec<u8> },
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_frame(path: &Path) -> Result<FrameImage> {
    match open(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            Ok(FrameImage::Depth(RawDepthFrame::new(w as usize, h as usize, img.into_raw())?))
        }
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = img.dimensions();
            Ok(FrameImage::Rgb {
                width: w as usize,
                height: h as usize,
                pixels: img.into_raw(),
            })
        }
        other => Err(Error::dataset(
            path,
            format!("expected 16-bit gray depth or 8-bit RGB, found {:?}", other.color()),
        )),
    }
}

/// Nonzero pixels mark the person.
pub fn read_mask(path: &Path) -> Result<BodyIndexMask> {
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    BodyIndexMask::new(w as usize, h as usize, img.into_raw())
}

fn save<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_depth(path: &Path, frame: &RawDepthFrame) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(frame.width() as u32, frame.height() as u32, frame.pixels().to_vec())
            .ok_or_else(|| Error::shape("write_depth", "pixel count does not match extent"))?;
    save(&img, path)
}

pub fn write_mask(path: &Path, mask: &BodyIndexMask) -> Result<()> {
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.pixels().to_vec())
        .ok_or_else(|| Error::shape("write_mask", "pixel count does not match extent"))?;
    save(&img, path)
}

pub fn write_rgb(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::shape("write_rgb", "pixel count does not match extent"))?;
    save(&img, path)
}
