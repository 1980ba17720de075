//! Synthetic desk-scale dataset.
//!
//! Renders person-like figures (head, striped torso, legs) against a
//! camera-dependent background. Identity is a (clothing color, stripe
//! pattern) pair. With `color_confound` on, identities come in pairs that
//! share the exact same colors — at equal duty cycle, so their color
//! histograms match — and differ only in stripe orientation/period. Under
//! that regime color features cannot separate the pair; greyscale structure
//! can.
//!
//! Query/gallery identities are disjoint from train identities (each split
//! pairs its own ids). Cameras differ by brightness, background tone and
//! cast. Every pixel is a pure function of `(seed, id, camera, index)`, so
//! regeneration is byte-identical.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use super::{load_rgb_image, write_manifest, DatasetSplit, ImageRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Total identities; the first `train_ids` are the train split, the
    /// rest form the query/gallery pool.
    pub num_ids: usize,
    /// 0 means "half of num_ids".
    pub train_ids: usize,
    pub images_per_id: usize,
    pub num_cams: usize,
    pub color_confound: bool,
    pub height: usize,
    pub width: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            num_ids: 16,
            train_ids: 0,
            images_per_id: 8,
            num_cams: 2,
            color_confound: true,
            height: 384,
            width: 128,
        }
    }
}

impl ToyConfig {
    pub fn resolved_train_ids(&self) -> usize {
        if self.train_ids == 0 {
            self.num_ids / 2
        } else {
            self.train_ids
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cams < 2 {
            return Err(Error::Config(
                "toy dataset needs at least 2 cameras (single-query evaluation filters \
                 same-camera matches, so one camera leaves nothing to score)"
                    .into(),
            ));
        }
        let t = self.resolved_train_ids();
        if t < 2 || self.num_ids < t + 2 {
            return Err(Error::Config(format!(
                "toy dataset needs >=2 train and >=2 evaluation identities, got {} train of {}",
                t, self.num_ids
            )));
        }
        if self.images_per_id % self.num_cams != 0 || self.images_per_id < 2 * self.num_cams {
            return Err(Error::Config(format!(
                "images_per_id ({}) must be a multiple of num_cams ({}) and at least twice it \
                 so every query keeps a cross-camera gallery match",
                self.images_per_id, self.num_cams
            )));
        }
        if self.height < 64 || self.width < 32 {
            return Err(Error::Config("toy images must be at least 64x32".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Horizontal,
    Vertical,
}

/// Per-identity appearance factors, a pure function of the id layout.
#[derive(Debug, Clone, Copy)]
struct IdentityFactors {
    torso: [u8; 3],
    torso_dark: [u8; 3],
    legs: [u8; 3],
    pattern: Pattern,
    band_px: usize,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0..=59 => (c, x, 0.0),
        60..=119 => (x, c, 0.0),
        120..=179 => (0.0, c, x),
        180..=239 => (0.0, x, c),
        240..=299 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

fn darken(c: [u8; 3], f: f64) -> [u8; 3] {
    [
        (c[0] as f64 * f).round() as u8,
        (c[1] as f64 * f).round() as u8,
        (c[2] as f64 * f).round() as u8,
    ]
}

fn factors_for(cfg: &ToyConfig, id: usize) -> IdentityFactors {
    let train_ids = cfg.resolved_train_ids();
    // Pair ids within their own split so confounded colors occur inside
    // both the train set and the gallery.
    let (local, offset) = if id < train_ids {
        (id, 0)
    } else {
        (id - train_ids, train_ids.div_ceil(2))
    };
    let (color_ix, member) = if cfg.color_confound {
        (offset + local / 2, local % 2)
    } else {
        (offset + local, local % 2)
    };
    let hue = 137.50776405003785 * color_ix as f64;
    let torso = hsv_to_rgb(hue, 0.75, 0.85);
    let legs = hsv_to_rgb(hue + 150.0, 0.65, 0.45);
    let pattern = if member == 0 {
        Pattern::Horizontal
    } else {
        Pattern::Vertical
    };
    let band_frac = [1.0 / 48.0, 1.0 / 32.0, 1.0 / 24.0][color_ix % 3];
    IdentityFactors {
        torso,
        torso_dark: darken(torso, 0.45),
        legs,
        pattern,
        band_px: ((cfg.height as f64 * band_frac).round() as usize).max(2),
    }
}

struct Figure {
    head_cx: f64,
    head_cy: f64,
    head_r: f64,
    torso: [f64; 4], // x0, y0, x1, y1
    legs: [[f64; 4]; 2],
}

fn layout(cfg: &ToyConfig, dx: f64, dy: f64, scale: f64) -> Figure {
    let w = cfg.width as f64;
    let h = cfg.height as f64;
    let sx = |x: f64| (w / 2.0 + (x * w - w / 2.0) * scale) + dx * w;
    let sy = |y: f64| (h / 2.0 + (y * h - h / 2.0) * scale) + dy * h;
    Figure {
        head_cx: sx(0.50),
        head_cy: sy(0.165),
        head_r: 0.075 * h * scale,
        torso: [sx(0.24), sy(0.26), sx(0.76), sy(0.60)],
        legs: [
            [sx(0.28), sy(0.60), x_min(sx(0.47), sx(0.28)), sy(0.94)],
            [sx(0.53), sy(0.60), x_min(sx(0.72), sx(0.53)), sy(0.94)],
        ],
    }
}

fn x_min(a: f64, lo: f64) -> f64 {
    a.max(lo)
}

fn in_rect(x: f64, y: f64, r: &[f64; 4]) -> bool {
    x >= r[0] && x < r[2] && y >= r[1] && y < r[3]
}

/// Render one image; every random draw comes from `stream`, in a fixed
/// order (jitter first, then one noise value per pixel).
fn render(cfg: &ToyConfig, id: usize, cam: usize, index: usize, seed: u64) -> RgbImage {
    let f = factors_for(cfg, id);
    let mut r = rng::stream(seed, "toy-image", &[id as u64, cam as u64, index as u64]);
    let dx: f64 = r.gen_range(-0.05..0.05);
    let dy: f64 = r.gen_range(-0.035..0.035);
    let scale: f64 = r.gen_range(0.92..1.08);
    let fig = layout(cfg, dx, dy, scale);

    let cam_t = cam as f64 / (cfg.num_cams - 1).max(1) as f64;
    let brightness = 1.0 - 0.15 * cam_t;
    let bg_base = 208.0 - 30.0 * cam_t;
    let bg_cast = [6.0 - 12.0 * cam_t, 0.0, -6.0 + 12.0 * cam_t];

    let mut img = RgbImage::new(cfg.width as u32, cfg.height as u32);
    for py in 0..cfg.height {
        for px in 0..cfg.width {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;
            let head = {
                let ddx = x - fig.head_cx;
                let ddy = y - fig.head_cy;
                ddx * ddx + ddy * ddy <= fig.head_r * fig.head_r
            };
            let base: [u8; 3] = if head {
                [205, 175, 149]
            } else if in_rect(x, y, &fig.torso) {
                let coord = match f.pattern {
                    Pattern::Horizontal => (y - fig.torso[1]).max(0.0) as usize,
                    Pattern::Vertical => (x - fig.torso[0]).max(0.0) as usize,
                };
                if (coord / f.band_px) % 2 == 0 {
                    f.torso
                } else {
                    f.torso_dark
                }
            } else if in_rect(x, y, &fig.legs[0]) || in_rect(x, y, &fig.legs[1]) {
                f.legs
            } else {
                [
                    (bg_base + bg_cast[0]).round() as u8,
                    (bg_base + bg_cast[1]).round() as u8,
                    (bg_base + bg_cast[2]).round() as u8,
                ]
            };
            let noise: f64 = r.gen_range(-8.0..8.0);
            let mut out = [0u8; 3];
            for c in 0..3 {
                out[c] = (base[c] as f64 * brightness + noise).round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(px as u32, py as u32, image::Rgb(out));
        }
    }
    img
}

/// Render the dataset under `dir` (images in `dir/images/`, manifest at
/// `dir/manifest.csv`) and return the split. For every evaluation identity
/// the first image of each camera becomes a query; the rest go to the
/// gallery. Train identities are disjoint from evaluation identities.
pub fn generate_toy_dataset(cfg: &ToyConfig, dir: &Path, seed: u64) -> Result<DatasetSplit> {
    cfg.validate()?;
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let train_ids = cfg.resolved_train_ids();
    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();

    for id in 0..cfg.num_ids {
        for j in 0..cfg.images_per_id {
            let cam = j % cfg.num_cams;
            let index = j / cfg.num_cams;
            let img = render(cfg, id, cam, index, seed);
            let name = format!("{id:04}_c{cam}_{index:02}.png");
            let path = images_dir.join(&name);
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let record = ImageRecord {
                image_path: path,
                person_id: id as i64,
                camera_id: cam as u32,
            };
            if id < train_ids {
                train.push(record);
            } else if index == 0 {
                query.push(record);
            } else {
                gallery.push(record);
            }
        }
    }

    let split = DatasetSplit::from_parts(train, query, gallery);
    debug_assert!(split.warnings.is_empty(), "{:?}", split.warnings);
    write_manifest(&dir.join("manifest.csv"), &split)?;
    Ok(split)
}

/// Aggregated, normalized per-channel color histogram (8 bins per channel)
/// over all images of each identity. A diagnostic for the color-confound
/// property: paired identities should produce nearly identical histograms.
pub fn id_histograms(records: &[ImageRecord]) -> Result<HashMap<i64, Vec<f64>>> {
    let mut acc: HashMap<i64, (Vec<u64>, u64)> = HashMap::new();
    for rec in records {
        let img = load_rgb_image(&rec.image_path)?;
        let entry = acc.entry(rec.person_id).or_insert((vec![0u64; 24], 0));
        for p in img.pixels() {
            for c in 0..3 {
                entry.0[c * 8 + (p.0[c] >> 5) as usize] += 1;
            }
            entry.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(pid, (bins, count))| {
            let total = (count * 3) as f64;
            (pid, bins.into_iter().map(|b| b as f64 / total).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ToyConfig {
        ToyConfig {
            num_ids: 8,
            images_per_id: 4,
            num_cams: 2,
            height: 96,
            width: 32,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn counts_match_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyConfig::default();
        let split = generate_toy_dataset(&cfg, dir.path(), 7).unwrap();
        assert_eq!(
            split.train.len() + split.query.len() + split.gallery.len(),
            16 * 8
        );
        assert_eq!(split.train.len(), 8 * 8);
        // one query per evaluation id per camera
        assert_eq!(split.query.len(), 8 * 2);
        assert_eq!(split.gallery.len(), 8 * 8 - 8 * 2);
        assert_eq!(split.class_index.num_classes(), 8);
        assert!(split.warnings.is_empty());
        // evaluation ids disjoint from train ids
        for q in &split.query {
            assert!(split.class_index.class_of(q.person_id).is_none());
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = small_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = generate_toy_dataset(&cfg, d1.path(), 11).unwrap();
        let _ = generate_toy_dataset(&cfg, d2.path(), 11).unwrap();
        for rec in s1.train.iter().take(4) {
            let rel = rec.image_path.strip_prefix(d1.path()).unwrap();
            let a = std::fs::read(&rec.image_path).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b);
        }
        let d3 = tempfile::tempdir().unwrap();
        let s3 = generate_toy_dataset(&cfg, d3.path(), 12).unwrap();
        let a = std::fs::read(&s1.train[0].image_path).unwrap();
        let b = std::fs::read(&s3.train[0].image_path).unwrap();
        assert_ne!(a, b, "different seed changes pixels");
    }

    #[test]
    fn confounded_pairs_share_color_histograms() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let split = generate_toy_dataset(&cfg, dir.path(), 3).unwrap();
        let hist = id_histograms(&split.train).unwrap();
        // ids (0,1) and (2,3) are confounded pairs inside train
        for (a, b) in [(0i64, 1i64), (2, 3)] {
            let l1: f64 = hist[&a]
                .iter()
                .zip(&hist[&b])
                .map(|(x, y)| (x - y).abs())
                .sum();
            assert!(l1 < 0.06, "pair ({a},{b}) histogram L1 = {l1}");
        }
        // a non-paired couple must differ clearly
        let l1: f64 = hist[&0]
            .iter()
            .zip(&hist[&2])
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(l1 > 0.08, "unpaired ids too similar: {l1}");
    }

    #[test]
    fn single_camera_is_rejected() {
        let cfg = ToyConfig {
            num_cams: 1,
            ..small_cfg()
        };
        assert!(matches!(
            generate_toy_dataset(&cfg, Path::new("/tmp/unused"), 1),
            Err(Error::Config(_))
        ));
    }
}
