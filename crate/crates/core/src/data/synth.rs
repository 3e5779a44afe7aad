//! Synthetic change pairs.
//!
//! `t1` is a muted background with a few common shapes. `t2` copies the
//! scene, then inserts or deletes change shapes whose colour has one salient
//! channel. Both images get independent pixel noise in `±a/4` and `t2` gets a
//! global brightness shift in `±a/2`, so outside the mask `|t1 - t2| <= a`.
//! The mask holds exactly the pixels of inserted and deleted shapes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Split;
use super::image::{save_gray, save_rgb};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_size: usize,
    /// Inclusive range of unchanged shapes per scene.
    pub shapes: [usize; 2],
    /// Inclusive range of inserted or deleted shapes.
    pub changes: [usize; 2],
    /// Noise amplitude `a`.
    pub noise: f32,
    /// Accepted range of the changed-pixel fraction when `changes` is nonzero.
    pub mask_fraction: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            image_size: 64,
            shapes: [2, 5],
            changes: [1, 3],
            noise: 0.08,
            mask_fraction: [0.02, 0.3],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if self.shapes[0] > self.shapes[1] || self.changes[0] > self.changes[1] {
            return bad("count ranges must be [min, max] with min <= max");
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return bad("noise must be in [0, 0.5]");
        }
        let [lo, hi] = self.mask_fraction;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("mask_fraction must satisfy 0 <= min <= max <= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub t1: Tensor,
    pub t2: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Copy, Debug)]
enum Geometry {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
}

impl Geometry {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f32;
        let (w, h) = (rng.gen_range(0.1..0.35) * s, rng.gen_range(0.1..0.35) * s);
        let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        if rng.gen_bool(0.5) {
            Geometry::Rect {
                x0: cx - w / 2.0,
                y0: cy - h / 2.0,
                x1: cx + w / 2.0,
                y1: cy + h / 2.0,
            }
        } else {
            Geometry::Ellipse {
                cx,
                cy,
                rx: w / 2.0,
                ry: h / 2.0,
            }
        }
    }

    /// Pixel centres inside the shape.
    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        match *self {
            Geometry::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Geometry::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

fn muted(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [0; 3].map(|_| rng.gen_range(0.35..0.65))
}

fn salient(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let mut c = muted(rng);
    let k = rng.gen_range(0..3);
    c[k] = if rng.gen_bool(0.5) {
        rng.gen_range(0.0..0.1)
    } else {
        rng.gen_range(0.9..1.0)
    };
    c
}

type Canvas = Vec<[f32; 3]>;

fn paint(canvas: &mut Canvas, size: usize, g: &Geometry, color: [f32; 3], mask: Option<&mut Vec<bool>>) {
    let mut mask = mask;
    for y in 0..size {
        for x in 0..size {
            if g.contains(x, y) {
                canvas[y * size + x] = color;
                if let Some(m) = mask.as_deref_mut() {
                    m[y * size + x] = true;
                }
            }
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

/// Deterministic in `(cfg, index)`.
pub fn generate_synthetic_pair(cfg: &SynthConfig, index: u64) -> Result<SynthSample> {
    cfg.validate()?;
    let n = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    let background = muted(&mut rng);
    let mut scene: Canvas = vec![background; n * n];
    for _ in 0..rng.gen_range(cfg.shapes[0]..=cfg.shapes[1]) {
        let g = Geometry::random(&mut rng, n);
        let c = muted(&mut rng);
        paint(&mut scene, n, &g, c, None);
    }

    let (mut c1, mut c2, mut mask);
    let mut attempt = 0;
    loop {
        c1 = scene.clone();
        c2 = scene.clone();
        mask = vec![false; n * n];
        let k = rng.gen_range(cfg.changes[0]..=cfg.changes[1]);
        for _ in 0..k {
            let g = Geometry::random(&mut rng, n);
            let c = salient(&mut rng);
            // Inserted shapes appear in t2 only, deleted ones in t1 only.
            let target = if rng.gen_bool(0.5) { &mut c2 } else { &mut c1 };
            paint(target, n, &g, c, Some(&mut mask));
        }
        let fraction = mask.iter().filter(|&&m| m).count() as f64 / (n * n) as f64;
        let [lo, hi] = cfg.mask_fraction;
        if cfg.changes[1] == 0 || (lo..=hi).contains(&fraction) {
            break;
        }
        attempt += 1;
        if attempt == MAX_ATTEMPTS {
            return Err(Error::Config(format!(
                "synth: no sample with mask fraction in [{lo}, {hi}] after {MAX_ATTEMPTS} attempts"
            )));
        }
    }

    let a = cfg.noise;
    let shift = if a > 0.0 {
        rng.gen_range(-a / 2.0..=a / 2.0)
    } else {
        0.0
    };
    let mut noisy = |canvas: &Canvas, offset: f32| -> Tensor {
        let mut data = vec![0.0f32; 3 * n * n];
        for (i, px) in canvas.iter().enumerate() {
            for c in 0..3 {
                let e = if a > 0.0 {
                    rng.gen_range(-a / 4.0..=a / 4.0)
                } else {
                    0.0
                };
                data[c * n * n + i] = (px[c] + e + offset).clamp(0.0, 1.0);
            }
        }
        Tensor::new(Shape::new(1, 3, n, n), data).expect("finite synthetic pixels")
    };
    let t1 = noisy(&c1, 0.0);
    let t2 = noisy(&c2, shift);
    let mask = Tensor::new(
        Shape::new(1, 1, n, n),
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    Ok(SynthSample { t1, t2, mask })
}

/// Index offsets keep the splits disjoint for one seed.
pub fn split_offset(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1 << 32,
        Split::Test => 2 << 32,
    }
}

/// Writes `counts[i]` samples for each split in CDD layout under `root`.
pub fn write_synthetic_dataset(cfg: &SynthConfig, root: &Path, counts: [usize; 3]) -> Result<()> {
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        let base = root.join(split.dir_name());
        for d in ["A", "B", "OUT"] {
            let dir = base.join(d);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for i in 0..count {
            let s = generate_synthetic_pair(cfg, split_offset(split) + i as u64)?;
            let name = format!("{i:05}.png");
            save_rgb(&base.join("A").join(&name), &s.t1)?;
            save_rgb(&base.join("B").join(&name), &s.t2)?;
            save_gray(&base.join("OUT").join(&name), &s.mask)?;
        }
    }
    Ok(())
}
