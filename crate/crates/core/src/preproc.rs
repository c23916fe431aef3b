//! Raw depth frames to the grayscale person representation and network input.
//!
//! Sensor ranges (millimetres, default range setting):
//!
//! | range          | class      | gray value                      |
//! |----------------|------------|---------------------------------|
//! | `[0, 400)`     | unknown    | 256                             |
//! | `[400, 800)`   | too near   | 1                               |
//! | `[800, 4000]`  | normal     | affine onto `[1, 256 - offset]` |
//! | `(4000, 8000]` | too far    | 256                             |
//! | `(8000, inf)`  | unknown    | 256                             |
//!
//! Normal depths map to `round(1 + (d - 800) * (255 - offset) / 3200)`
//! with ties rounded to even, evaluated in exact integer arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const KINECT_WIDTH: usize = 512;
pub const KINECT_HEIGHT: usize = 424;
pub const DEFAULT_OFFSET: u16 = 56;
pub const INPUT_HEIGHT: usize = 144;
pub const INPUT_WIDTH: usize = 56;
/// Fraction of the mask bounding box added on each side when cropping.
pub const CROP_MARGIN: f64 = 0.05;

const NEAR_MM: u32 = 400;
const NORMAL_MM: u32 = 800;
const FAR_MM: u32 = 4000;
const MAX_MM: u32 = 8000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    Unknown,
    TooNear,
    Normal,
    TooFar,
}

pub fn classify_range(depth_mm: u32) -> RangeClass {
    match depth_mm {
        d if d < NEAR_MM => RangeClass::Unknown,
        d if d < NORMAL_MM => RangeClass::TooNear,
        d if d <= FAR_MM => RangeClass::Normal,
        d if d <= MAX_MM => RangeClass::TooFar,
        _ => RangeClass::Unknown,
    }
}

/// Single-channel depth image, pixel values in millimetres, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDepthFrame {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
}

impl RawDepthFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(
                "depth frame",
                format!("{width}x{height} with {} pixels", pixels.len()),
            ));
        }
        Ok(RawDepthFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }
}

/// Per-pixel person index: 0 is background, `i > 0` is person `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BodyIndexMask {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BodyIndexMask {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::shape(
                "body index mask",
                format!("{width}x{height} with {} pixels", pixels.len()),
            ));
        }
        Ok(BodyIndexMask {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Tight bounding box of all foreground pixels.
    pub fn foreground_bounds(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, &v) in self.pixels.iter().enumerate() {
            if v != 0 {
                let (x, y) = (i % self.width, i / self.width);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        (x0 != usize::MAX).then(|| Rect {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    /// Grow by `margin` of the extent on every side, clipped to the frame.
    pub fn expand(&self, margin: f64, frame_width: usize, frame_height: usize) -> Rect {
        let mx = (self.width as f64 * margin).round() as usize;
        let my = (self.height as f64 * margin).round() as usize;
        let x0 = self.x.saturating_sub(mx);
        let y0 = self.y.saturating_sub(my);
        let x1 = (self.x + self.width + mx).min(frame_width);
        let y1 = (self.y + self.height + my).min(frame_height);
        Rect {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        }
    }

    fn fits(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= width
            && self.y + self.height <= height
    }
}

/// Person region cut out of a depth frame, optionally with its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonCrop {
    rect: Rect,
    depth: Vec<u16>,
    mask: Option<Vec<u8>>,
}

impl PersonCrop {
    pub fn extract(frame: &RawDepthFrame, mask: Option<&BodyIndexMask>, rect: Rect) -> Result<Self> {
        if !rect.fits(frame.width, frame.height) {
            return Err(Error::InvalidArgument(format!(
                "crop {rect:?} outside {}x{} frame or empty",
                frame.width, frame.height
            )));
        }
        if let Some(m) = mask {
            if m.width != frame.width || m.height != frame.height {
                return Err(Error::shape(
                    "person crop",
                    format!(
                        "mask {}x{} vs frame {}x{}",
                        m.width, m.height, frame.width, frame.height
                    ),
                ));
            }
        }
        let rows = rect.y..rect.y + rect.height;
        let depth = rows
            .clone()
            .flat_map(|y| frame.pixels[y * frame.width + rect.x..y * frame.width + rect.x + rect.width].iter().copied())
            .collect();
        let mask = mask.map(|m| {
            rows.flat_map(|y| m.pixels[y * m.width + rect.x..y * m.width + rect.x + rect.width].iter().copied())
                .collect()
        });
        Ok(PersonCrop { rect, depth, mask })
    }

    /// Crop around the mask's foreground with the standard margin, falling
    /// back to the whole frame when there is no mask or it is empty.
    pub fn around_person(frame: &RawDepthFrame, mask: Option<&BodyIndexMask>) -> Result<Self> {
        let rect = mask
            .and_then(BodyIndexMask::foreground_bounds)
            .map(|r| r.expand(CROP_MARGIN, frame.width, frame.height))
            .unwrap_or(Rect {
                x: 0,
                y: 0,
                width: frame.width,
                height: frame.height,
            });
        Self::extract(frame, mask, rect)
    }

    /// Build a crop directly from pixel data (used by tests and tools).
    pub fn from_pixels(width: usize, height: usize, depth: Vec<u16>, mask: Option<Vec<u8>>) -> Result<Self> {
        if width == 0 || height == 0 || depth.len() != width * height {
            return Err(Error::InvalidArgument("empty or inconsistent crop".into()));
        }
        if mask.as_ref().is_some_and(|m| m.len() != depth.len()) {
            return Err(Error::shape("person crop", "mask length differs from depth"));
        }
        Ok(PersonCrop {
            rect: Rect {
                x: 0,
                y: 0,
                width,
                height,
            },
            depth,
            mask,
        })
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn depth(&self) -> &[u16] {
        &self.depth
    }

    pub fn mask(&self) -> Option<&[u8]> {
        self.mask.as_deref()
    }
}

/// Grayscale person representation, values in `{1, ..., 256}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayDepth {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
    offset: u16,
}

impl GrayDepth {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn offset(&self) -> u16 {
        self.offset
    }
}

/// Gray value of one depth measurement for offset `t_o`.
pub fn gray_value(depth_mm: u32, offset: u16) -> u16 {
    match classify_range(depth_mm) {
        RangeClass::TooNear => 1,
        RangeClass::TooFar | RangeClass::Unknown => 256,
        RangeClass::Normal => {
            let span = 255 - u64::from(offset);
            let num = u64::from(depth_mm - NORMAL_MM) * span;
            let den = u64::from(FAR_MM - NORMAL_MM);
            let (q, rem) = (num / den, num % den);
            let base = 1 + q;
            let rounded = match (2 * rem).cmp(&den) {
                std::cmp::Ordering::Less => base,
                std::cmp::Ordering::Greater => base + 1,
                std::cmp::Ordering::Equal => {
                    if base % 2 == 0 {
                        base
                    } else {
                        base + 1
                    }
                }
            };
            rounded as u16
        }
    }
}

pub fn make_gray(crop: &PersonCrop, offset: u16) -> Result<GrayDepth> {
    if offset > 254 {
        return Err(Error::config("offset", format!("{offset} outside [0, 254]")));
    }
    if crop.depth.is_empty() {
        return Err(Error::InvalidArgument("empty person crop".into()));
    }
    let pixels = match &crop.mask {
        Some(mask) => crop
            .depth
            .iter()
            .zip(mask)
            .map(|(&d, &m)| if m == 0 { 256 } else { gray_value(d.into(), offset) })
            .collect(),
        None => crop.depth.iter().map(|&d| gray_value(d.into(), offset)).collect(),
    };
    Ok(GrayDepth {
        width: crop.rect.width,
        height: crop.rect.height,
        pixels,
        offset,
    })
}

/// Bilinear resize of a single-channel row-major image.
///
/// The sampling grid aligns the outer pixel corners of source and target:
/// target pixel centre `i + 0.5` maps to source coordinate
/// `(i + 0.5) * in / out - 0.5`, clamped to the valid range.
pub fn resize_bilinear(src: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, in_h);
    let xs = axis(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * in_w + x0] * (1.0 - fx) + src[y0 * in_w + x1] * fx;
            let bottom = src[y1 * in_w + x0] * (1.0 - fx) + src[y1 * in_w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Three-channel `[3, 144, 56]` network input.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInput(Tensor);

impl NetworkInput {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Wrap an arbitrary `[3, H, W]` tensor (e.g. for reduced test models).
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.shape().len() != 3 || t.shape()[0] != 3 {
            return Err(Error::shape("network input", format!("{:?}", t.shape())));
        }
        Ok(NetworkInput(t))
    }

    /// Resize a `[3, h, w]` colour crop (values 0..=255) to network extents.
    pub fn from_rgb_planes(planes: &[Vec<f64>; 3], height: usize, width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * INPUT_HEIGHT * INPUT_WIDTH);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::shape("rgb input", "plane size mismatch"));
            }
            data.extend(resize_bilinear(p, height, width, INPUT_HEIGHT, INPUT_WIDTH));
        }
        Ok(NetworkInput(Tensor::new(vec![3, INPUT_HEIGHT, INPUT_WIDTH], data)?))
    }
}

pub fn make_network_input(gray: &GrayDepth) -> Result<NetworkInput> {
    if gray.pixels.is_empty() {
        return Err(Error::InvalidArgument("empty gray image".into()));
    }
    let src: Vec<f64> = gray.pixels.iter().map(|&v| f64::from(v)).collect();
    let plane = resize_bilinear(&src, gray.height, gray.width, INPUT_HEIGHT, INPUT_WIDTH);
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Ok(NetworkInput(Tensor::new(vec![3, INPUT_HEIGHT, INPUT_WIDTH], data)?))
}

/// Full per-frame path: crop around the person, gray encoding, resize.
pub fn preprocess_depth(
    frame: &RawDepthFrame,
    mask: Option<&BodyIndexMask>,
    offset: u16,
) -> Result<NetworkInput> {
    let crop = PersonCrop::around_person(frame, mask)?;
    make_network_input(&make_gray(&crop, offset)?)
}

/// RGB counterpart of [`preprocess_depth`]: same person crop, each colour
/// plane resized independently. `pixels` is row-major interleaved RGB.
pub fn preprocess_rgb(
    width: usize,
    height: usize,
    pixels: &[u8],
    mask: Option<&BodyIndexMask>,
) -> Result<NetworkInput> {
    if width == 0 || height == 0 || pixels.len() != 3 * width * height {
        return Err(Error::shape(
            "rgb frame",
            format!("{width}x{height} with {} bytes", pixels.len()),
        ));
    }
    if let Some(m) = mask {
        if m.width != width || m.height != height {
            return Err(Error::shape(
                "rgb frame",
                format!("mask {}x{} vs frame {width}x{height}", m.width, m.height),
            ));
        }
    }
    let rect = mask
        .and_then(BodyIndexMask::foreground_bounds)
        .map(|r| r.expand(CROP_MARGIN, width, height))
        .unwrap_or(Rect {
            x: 0,
            y: 0,
            width,
            height,
        });
    let planes: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let mut plane = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            for x in rect.x..rect.x + rect.width {
                plane.push(f64::from(pixels[3 * (y * width + x) + c]));
            }
        }
        plane
    });
    NetworkInput::from_rgb_planes(&planes, rect.height, rect.width)
}
