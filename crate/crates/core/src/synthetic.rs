//! Procedural toy scenes: a coloured "furniture" block with a smaller
//! coloured object resting on it, described by a template sentence.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{write_records, BoundingBox, SceneSample};
use crate::error::{AbenError, Result};
use crate::model::seeded_rng;

const COLORS: [(&str, [u8; 3]); 6] = [
    ("red", [220, 40, 40]),
    ("green", [40, 180, 60]),
    ("blue", [40, 70, 220]),
    ("yellow", [230, 210, 40]),
    ("purple", [140, 50, 170]),
    ("orange", [240, 140, 30]),
];
const OBJECTS: [&str; 5] = ["cup", "bottle", "book", "towel", "can"];
const FURNITURE: [(&str, [u8; 3]); 4] = [
    ("table", [120, 80, 40]),
    ("shelf", [90, 90, 90]),
    ("desk", [200, 170, 120]),
    ("chair", [30, 30, 30]),
];
const PLACES: [&str; 3] = ["left", "middle", "right"];
const VERBS: [&str; 2] = ["bring me", "take"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { count: 20, seed: 0, width: 160, height: 120 }
    }
}

fn fill(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3]) {
    let (x0, y0) = (b.x as u32, b.y as u32);
    for y in y0..(y0 + b.h as u32).min(img.height()) {
        for x in x0..(x0 + b.w as u32).min(img.width()) {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

/// Writes `count` scenes (PNG images plus `scenes.jsonl`) into `dir` and
/// returns the record file path. Every scene gets a distinct sentence.
pub fn generate_synthetic(dir: &Path, cfg: SyntheticConfig) -> Result<PathBuf> {
    let (w, h) = (cfg.width, cfg.height);
    if w < 64 || h < 48 {
        return Err(AbenError::Config(format!("synthetic images must be at least 64x48, got {w}x{h}")));
    }
    let mut combos: Vec<(usize, usize, usize, usize, usize)> = Vec::new();
    for c in 0..COLORS.len() {
        for o in 0..OBJECTS.len() {
            for f in 0..FURNITURE.len() {
                for p in 0..PLACES.len() {
                    for v in 0..VERBS.len() {
                        combos.push((c, o, f, p, v));
                    }
                }
            }
        }
    }
    if cfg.count > combos.len() {
        return Err(AbenError::Config(format!("at most {} distinct synthetic scenes", combos.len())));
    }
    let mut rng = seeded_rng(cfg.seed);
    combos.shuffle(&mut rng);
    fs::create_dir_all(dir).map_err(|e| AbenError::io(dir, e))?;

    let mut scenes = Vec::with_capacity(cfg.count);
    for (i, &(c, o, f, p, v)) in combos.iter().take(cfg.count).enumerate() {
        let (wf, hf) = (w as f64, h as f64);
        let fw = (wf * rng.random_range(0.55..0.8)).floor();
        let fh = (hf * rng.random_range(0.25..0.4)).floor();
        let fx = (rng.random_range(0.0..(wf - fw))).floor();
        let fy = (hf - fh - rng.random_range(0.0..hf * 0.1)).floor();
        let source = BoundingBox::new(fx, fy, fw, fh)?;
        let ow = (fw * rng.random_range(0.12..0.2)).floor().max(4.0);
        let oh = (hf * rng.random_range(0.15..0.3)).floor().max(4.0);
        let slot = (fw - ow) / 2.0;
        let ox = (fx + slot * p as f64).floor();
        let oy = (fy - oh).max(0.0);
        let target = BoundingBox::new(ox, oy, ow, oh)?;

        let mut img = RgbImage::from_pixel(w, h, Rgb([235, 235, 225]));
        fill(&mut img, &source, FURNITURE[f].1);
        fill(&mut img, &target, COLORS[c].1);
        let name = format!("scene_{i:03}.png");
        let path = dir.join(&name);
        img.save(&path).map_err(|e| AbenError::Image(format!("{}: {e}", path.display())))?;

        let sentence =
            format!("{} the {} {} on the {} of the {}", VERBS[v], COLORS[c].0, OBJECTS[o], PLACES[p], FURNITURE[f].0);
        scenes.push(SceneSample {
            image_path: PathBuf::from(name),
            image_dims: (w, h),
            target_box: target,
            source_box: source,
            references: vec![sentence],
        });
    }
    let records = dir.join("scenes.jsonl");
    write_records(&records, &scenes)?;
    Ok(records)
}
