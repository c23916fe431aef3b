//! Procedural walking-figure generator.
//!
//! Each identity is a set of body proportions and gait parameters. A figure
//! is assembled from capsules (limbs, neck), a sphere (head) and a tapered
//! torso, posed by a sinusoidal gait, and rendered as a Kinect-sized depth
//! frame with a body-index mask, or as a shaded colour image that shares the
//! same geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::{write_depth, write_mask, write_rgb};
use crate::data::manifest::{scan_dataset, write_splits, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::preproc::{BodyIndexMask, RawDepthFrame, KINECT_HEIGHT, KINECT_WIDTH};

/// Focal length of the synthetic camera in pixels.
const FOCAL_PX: f64 = 250.0;
const MIN_DISTANCE_MM: f64 = 1500.0;
const MAX_DISTANCE_MM: f64 = 3500.0;
const WALL_MM: (f64, f64) = (4500.0, 6000.0);
/// Fraction of background pixels with no depth reading.
const DROPOUT_FRACTION: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Depth,
    Rgb,
}

/// Identity-defining figure parameters. Lengths are fractions of height
/// unless suffixed otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyShape {
    pub height_mm: f64,
    pub shoulder_half_width: f64,
    pub hip_half_width: f64,
    pub head_radius: f64,
    pub leg_fraction: f64,
    pub arm_fraction: f64,
    /// Scales limb thickness.
    pub limb_scale: f64,
    /// Depth relief of the torso surface.
    pub torso_bulge_mm: f64,
    pub gait_period_frames: f64,
    /// Peak leg swing angle in radians.
    pub stride_amplitude: f64,
    pub arm_swing: f64,
    /// Outward angle of the arms in radians.
    pub arm_abduction: f64,
}

/// Parameter ranges; class `c` takes a distinct evenly spaced value from
/// each range, in an order shuffled per parameter.
const SHAPE_RANGES: [(f64, f64); 12] = [
    (1550.0, 1950.0),
    (0.095, 0.150),
    (0.065, 0.115),
    (0.055, 0.085),
    (0.42, 0.54),
    (0.30, 0.44),
    (0.7, 1.4),
    (60.0, 220.0),
    (6.0, 12.0),
    (0.10, 0.40),
    (0.05, 0.55),
    (0.04, 0.40),
];

impl BodyShape {
    fn from_array(v: [f64; 12]) -> Self {
        BodyShape {
            height_mm: v[0],
            shoulder_half_width: v[1],
            hip_half_width: v[2],
            head_radius: v[3],
            leg_fraction: v[4],
            arm_fraction: v[5],
            limb_scale: v[6],
            torso_bulge_mm: v[7],
            gait_period_frames: v[8],
            stride_amplitude: v[9],
            arm_swing: v[10],
            arm_abduction: v[11],
        }
    }

    fn to_array(&self) -> [f64; 12] {
        [
            self.height_mm,
            self.shoulder_half_width,
            self.hip_half_width,
            self.head_radius,
            self.leg_fraction,
            self.arm_fraction,
            self.limb_scale,
            self.torso_bulge_mm,
            self.gait_period_frames,
            self.stride_amplitude,
            self.arm_swing,
            self.arm_abduction,
        ]
    }

    fn jittered(&self, sigma: f64, rng: &mut RngStream) -> Self {
        let mut v = self.to_array();
        for x in &mut v {
            *x *= 1.0 + rng.normal(0.0, sigma).clamp(-3.0 * sigma, 3.0 * sigma);
        }
        BodyShape::from_array(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub sequences_per_class: usize,
    /// Highest-numbered sequences of each class are assigned to the test split.
    pub test_sequences_per_class: usize,
    pub frames_per_sequence: usize,
    /// Std-dev of per-pixel depth noise.
    pub noise_mm: f64,
    pub corrupt_probability: f64,
    pub render: RenderMode,
    /// Seeds the identity shapes, independently of the per-run seed, so a
    /// depth set and an RGB set share identities.
    pub class_seed: u64,
    /// Relative per-sequence perturbation of every shape parameter.
    pub shape_jitter: f64,
    /// Explicit per-class shapes; derived from `class_seed` when absent.
    pub shapes: Option<Vec<BodyShape>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 8,
            sequences_per_class: 6,
            test_sequences_per_class: 2,
            frames_per_sequence: 10,
            noise_mm: 15.0,
            corrupt_probability: 0.3,
            render: RenderMode::Depth,
            class_seed: 7,
            shape_jitter: 0.02,
            shapes: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("synth.{key}"), reason))
            }
        };
        check(self.classes >= 2, "classes", "must be >= 2")?;
        check(self.classes <= 255, "classes", "must be <= 255")?;
        check(self.sequences_per_class >= 1, "sequences_per_class", "must be >= 1")?;
        check(
            self.test_sequences_per_class < self.sequences_per_class,
            "test_sequences_per_class",
            "must leave at least one training sequence",
        )?;
        check(self.frames_per_sequence >= 1, "frames_per_sequence", "must be >= 1")?;
        check(
            self.noise_mm.is_finite() && self.noise_mm >= 0.0,
            "noise_mm",
            "must be finite and >= 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.corrupt_probability),
            "corrupt_probability",
            "must lie in [0, 1]",
        )?;
        check(
            self.shape_jitter.is_finite() && (0.0..0.2).contains(&self.shape_jitter),
            "shape_jitter",
            "must lie in [0, 0.2)",
        )?;
        if let Some(s) = &self.shapes {
            check(s.len() == self.classes, "shapes", "needs one entry per class")?;
        }
        Ok(())
    }

    pub fn class_shapes(&self) -> Vec<BodyShape> {
        if let Some(s) = &self.shapes {
            return s.clone();
        }
        let mut rng = RngStream::new(self.class_seed);
        let n = self.classes;
        let columns: Vec<Vec<f64>> = SHAPE_RANGES
            .iter()
            .map(|&(lo, hi)| {
                let mut slots: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut slots);
                slots
                    .into_iter()
                    .map(|s| lo + (hi - lo) * (s as f64 + 0.5) / n as f64)
                    .collect()
            })
            .collect();
        (0..n)
            .map(|c| BodyShape::from_array(std::array::from_fn(|k| columns[k][c])))
            .collect()
    }

    pub fn split_of(&self, sequence_index: usize) -> Split {
        if sequence_index >= self.sequences_per_class - self.test_sequences_per_class {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Per-sequence nuisance parameters.
#[derive(Clone, Debug, PartialEq)]
struct SequenceSetup {
    shape: BodyShape,
    distance_mm: f64,
    approach_mm_per_frame: f64,
    center_u: f64,
    drift_px_per_frame: f64,
    phase: f64,
    colors: [[f64; 3]; 4],
}

impl SequenceSetup {
    fn draw(shape: &BodyShape, cfg: &SyntheticConfig, rng: &mut RngStream) -> Self {
        let shape = shape.jittered(cfg.shape_jitter, rng);
        let frames = cfg.frames_per_sequence as f64;
        let approach = rng.uniform_range(-20.0, 20.0);
        let travel = approach * frames;
        let lo = MIN_DISTANCE_MM + (-travel).max(0.0);
        let hi = MAX_DISTANCE_MM - travel.max(0.0);
        let distance_mm = rng.uniform_range(lo.min(hi), hi.max(lo));
        let drift = rng.uniform_range(-3.0, 3.0);
        let margin = 110.0 + drift.abs() * frames;
        let center_u = rng.uniform_range(margin, KINECT_WIDTH as f64 - margin);
        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
        let mut color = |lo: f64, hi: f64| [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)];
        // shirt, trousers, skin, background
        let colors = [color(20.0, 150.0), color(20.0, 150.0), color(110.0, 190.0), color(175.0, 245.0)];
        SequenceSetup {
            shape,
            distance_mm,
            approach_mm_per_frame: approach,
            center_u,
            drift_px_per_frame: drift,
            phase,
            colors,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Head,
    Torso,
    Arm,
    Leg,
}

/// A 3-D capsule in body coordinates (mm, x right, y up, z toward the wall).
struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    part: Part,
}

struct Figure {
    capsules: Vec<Capsule>,
    hip_y: f64,
    shoulder_y: f64,
    hip_half: f64,
    shoulder_half: f64,
    bulge: f64,
    height: f64,
}

fn pose(shape: &BodyShape, phase: f64) -> Figure {
    let h = shape.height_mm;
    let hip_y = shape.leg_fraction * h;
    let shoulder_y = 0.81 * h;
    let head_r = shape.head_radius * h;
    let hip_half = shape.hip_half_width * h;
    let shoulder_half = shape.shoulder_half_width * h;
    let leg_len = hip_y;
    let arm_len = shape.arm_fraction * h;
    let leg_r = 0.045 * h * shape.limb_scale;
    let arm_r = 0.028 * h * shape.limb_scale;
    let bob = 0.012 * h * phase.sin().abs();

    let mut capsules = Vec::with_capacity(7);
    for side in [-1.0, 1.0] {
        let swing = side * shape.stride_amplitude * phase.sin();
        let hip = [side * 0.55 * hip_half, hip_y + bob, 0.0];
        let foot = [
            side * 0.65 * hip_half,
            hip[1] - leg_len * swing.cos() + leg_r,
            -leg_len * swing.sin(),
        ];
        capsules.push(Capsule {
            a: hip,
            b: foot,
            radius: leg_r,
            part: Part::Leg,
        });
        let arm = -side * shape.arm_swing * phase.sin();
        let shoulder = [side * (shoulder_half - 0.6 * arm_r), shoulder_y + bob - arm_r, 0.0];
        let hand = [
            shoulder[0] + side * arm_len * shape.arm_abduction.sin(),
            shoulder[1] - arm_len * shape.arm_abduction.cos() * arm.cos(),
            -arm_len * arm.sin(),
        ];
        capsules.push(Capsule {
            a: shoulder,
            b: hand,
            radius: arm_r,
            part: Part::Arm,
        });
    }
    capsules.push(Capsule {
        a: [0.0, shoulder_y + bob - 0.02 * h, 0.0],
        b: [0.0, h + bob - 1.5 * head_r, 0.0],
        radius: 0.35 * head_r,
        part: Part::Head,
    });
    capsules.push(Capsule {
        a: [0.0, h + bob - head_r, 0.0],
        b: [0.0, h + bob - head_r, 0.0],
        radius: head_r,
        part: Part::Head,
    });
    Figure {
        capsules,
        hip_y: hip_y + bob,
        shoulder_y: shoulder_y + bob,
        hip_half,
        shoulder_half,
        bulge: shape.torso_bulge_mm,
        height: h,
    }
}

impl Figure {
    /// Nearest surface point at body-plane position `(x, y)`: the depth
    /// offset relative to the body plane, the surface slope term in [0, 1]
    /// used for shading, and the part hit.
    fn surface(&self, x: f64, y: f64) -> Option<(f64, f64, Part)> {
        let mut best: Option<(f64, f64, Part)> = None;
        let mut consider = |z: f64, n: f64, part: Part| {
            if best.is_none_or(|(bz, _, _)| z < bz) {
                best = Some((z, n, part));
            }
        };
        if y >= self.hip_y - 0.03 * self.height && y <= self.shoulder_y {
            let t = ((y - self.hip_y) / (self.shoulder_y - self.hip_y)).clamp(0.0, 1.0);
            let half = self.hip_half + t * (self.shoulder_half - self.hip_half);
            if x.abs() < half {
                let n = (1.0 - (x / half).powi(2)).sqrt();
                consider(-self.bulge * n, n, Part::Torso);
            }
        }
        for c in &self.capsules {
            let (dx, dy) = (c.b[0] - c.a[0], c.b[1] - c.a[1]);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - c.a[0]) * dx + (y - c.a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (c.a[0] + t * dx - x, c.a[1] + t * dy - y);
            let d2 = px * px + py * py;
            let r2 = c.radius * c.radius;
            if d2 < r2 {
                let n = (1.0 - d2 / r2).sqrt();
                let z = c.a[2] + t * (c.b[2] - c.a[2]) - c.radius * n;
                consider(z, n, c.part);
            }
        }
        best
    }
}

/// One rendered frame with its body-index mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    pub image: super::io::FrameImage,
    pub mask: BodyIndexMask,
    pub corrupted: bool,
}

fn render(setup: &SequenceSetup, t: usize, cfg: &SyntheticConfig, person: u8, rng: &mut RngStream) -> Result<SyntheticFrame> {
    let (w, h) = (KINECT_WIDTH, KINECT_HEIGHT);
    let phase = setup.phase + std::f64::consts::TAU * t as f64 / setup.shape.gait_period_frames;
    let figure = pose(&setup.shape, phase);
    let distance = setup.distance_mm + setup.approach_mm_per_frame * t as f64;
    let scale = FOCAL_PX / distance;
    let cu = setup.center_u + setup.drift_px_per_frame * t as f64;
    let feet_v = h as f64 / 2.0 + 0.5 * figure.height * scale;
    let corrupted = rng.bernoulli(cfg.corrupt_probability);

    let mut mask = vec![0u8; w * h];
    let mut hits: Vec<Option<(f64, f64, Part)>> = vec![None; w * h];
    let half_w = (0.75 * figure.height * scale) as isize;
    let u0 = (cu as isize - half_w).max(0) as usize;
    let u1 = ((cu as isize + half_w).max(0) as usize).min(w);
    let v0 = ((feet_v - (figure.height + 30.0) * scale).max(0.0)) as usize;
    let v1 = ((feet_v + 2.0) as usize).min(h);
    for v in v0..v1 {
        let y = (feet_v - (v as f64 + 0.5)) / scale;
        for u in u0..u1 {
            let x = (u as f64 + 0.5 - cu) / scale;
            if let Some(hit) = figure.surface(x, y) {
                mask[v * w + u] = person;
                hits[v * w + u] = Some(hit);
            }
        }
    }

    let image = match cfg.render {
        RenderMode::Depth => {
            let mut px = Vec::with_capacity(w * h);
            for (i, hit) in hits.iter().enumerate() {
                let d = if corrupted {
                    rng.uniform_range(4001.0, 8000.0)
                } else if let Some((z, _, _)) = hit {
                    rng.normal(distance + z, cfg.noise_mm).clamp(800.0, 4000.0)
                } else if rng.bernoulli(DROPOUT_FRACTION) {
                    0.0
                } else {
                    let row = (i / w) as f64 / h as f64;
                    rng.normal(WALL_MM.0 + (WALL_MM.1 - WALL_MM.0) * row, cfg.noise_mm)
                };
                px.push(d.round() as u16);
            }
            super::io::FrameImage::Depth(RawDepthFrame::new(w, h, px)?)
        }
        RenderMode::Rgb => {
            let [shirt, trousers, skin, wall] = setup.colors;
            let mut px = Vec::with_capacity(3 * w * h);
            for (i, hit) in hits.iter().enumerate() {
                let (base, shade) = match hit {
                    Some((_, n, part)) => {
                        let c = match part {
                            Part::Head => skin,
                            Part::Torso | Part::Arm => shirt,
                            Part::Leg => trousers,
                        };
                        (c, 0.45 + 0.55 * n)
                    }
                    None => (wall, 0.8 + 0.2 * (i / w) as f64 / h as f64),
                };
                for c in base {
                    let value = if corrupted {
                        rng.uniform_range(0.0, 255.0)
                    } else {
                        rng.normal(c * shade, 0.4 * cfg.noise_mm)
                    };
                    px.push(value.clamp(0.0, 255.0).round() as u8);
                }
            }
            super::io::FrameImage::Rgb {
                width: w,
                height: h,
                pixels: px,
            }
        }
    };
    Ok(SyntheticFrame {
        image,
        mask: BodyIndexMask::new(w, h, mask)?,
        corrupted,
    })
}

/// One generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub person_id: u32,
    pub sequence_id: u32,
    pub split: Split,
    pub frames: Vec<SyntheticFrame>,
}

/// Render sequence `s` (0-based) of class `c` (0-based). Each sequence owns a
/// random stream forked from `rng`, so sequences can be produced in any
/// order with identical results.
pub fn generate_sequence(cfg: &SyntheticConfig, shapes: &[BodyShape], c: usize, s: usize, rng: &RngStream) -> Result<SyntheticSequence> {
    let mut seq_rng = rng.fork((c * 100_003 + s) as u64);
    let setup = SequenceSetup::draw(&shapes[c], cfg, &mut seq_rng);
    let frames = (0..cfg.frames_per_sequence)
        .map(|t| render(&setup, t, cfg, 1, &mut seq_rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence {
        person_id: c as u32 + 1,
        sequence_id: s as u32 + 1,
        split: cfg.split_of(s),
        frames,
    })
}

/// Lazily render every sequence of the configured dataset in
/// (class, sequence) order.
pub fn synthetic_sequences<'a>(cfg: &'a SyntheticConfig, rng: &'a RngStream) -> Result<impl Iterator<Item = Result<SyntheticSequence>> + 'a> {
    cfg.validate()?;
    let shapes = cfg.class_shapes();
    Ok((0..cfg.classes)
        .flat_map(move |c| (0..cfg.sequences_per_class).map(move |s| (c, s)))
        .map(move |(c, s)| generate_sequence(cfg, &shapes, c, s, rng)))
}

/// Write the dataset under `out_root` in the standard layout, together with
/// `splits.csv` and `synth_config.json`, then scan it back.
pub fn generate_synthetic(cfg: &SyntheticConfig, rng: &RngStream, out_root: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let digits = |n: usize| n.to_string().len().max(3);
    let (pd, sd, fd) = (
        digits(cfg.classes),
        digits(cfg.sequences_per_class),
        digits(cfg.frames_per_sequence),
    );
    let mut splits = Vec::new();
    for seq in synthetic_sequences(cfg, rng)? {
        let seq = seq?;
        let dir = out_root
            .join(format!("person_{:0pd$}", seq.person_id))
            .join(format!("seq_{:0sd$}", seq.sequence_id));
        for (n, frame) in seq.frames.iter().enumerate() {
            let n = n + 1;
            let path = dir.join(format!("frame_{n:0fd$}.png"));
            match &frame.image {
                super::io::FrameImage::Depth(d) => write_depth(&path, d)?,
                super::io::FrameImage::Rgb { width, height, pixels } => write_rgb(&path, *width, *height, pixels.clone())?,
            }
            write_mask(&dir.join(format!("mask_{n:0fd$}.png")), &frame.mask)?;
        }
        splits.push((seq.person_id, seq.sequence_id, seq.split));
    }
    write_splits(out_root, &splits)?;
    let cfg_path = out_root.join("synth_config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    scan_dataset(out_root)
}
