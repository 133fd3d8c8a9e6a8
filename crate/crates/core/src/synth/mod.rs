//! Deterministic synthetic corpus: bright textured backgrounds carrying dark
//! elliptical objects (annotated) and dark rings and bars (not annotated).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patchset::{
    AnnotatedImage, BoundingBox, Manifest, ManifestImage, ManifestObject, Raster, DEFAULT_TARGET_LABEL,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    ConfigInvalid(String),
    #[error("could not place {requested} objects in image {image}")]
    PlacementFailed { image: String, requested: usize },
    #[error("{path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    /// Square side length in pixels.
    pub image_size: usize,
    /// Inclusive range.
    pub objects_per_image: [usize; 2],
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub object_axes: [f64; 2],
    /// Inclusive range of object darkness (0–255 gray level before tint).
    pub object_intensity: [f64; 2],
    /// Inclusive range.
    pub confounders_per_image: [usize; 2],
    pub background_noise_std: f64,
    /// Minimum distance from an object center to the image border. The
    /// default keeps a centered 64 px window (a 32 px patch at factor 2)
    /// inside the image so no annotation is lost to the border rule.
    pub edge_margin: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            image_size: 192,
            objects_per_image: [1, 4],
            object_axes: [5.0, 11.0],
            object_intensity: [40.0, 110.0],
            confounders_per_image: [1, 4],
            background_noise_std: 12.0,
            edge_margin: 33.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn object_margin(&self) -> f64 {
        self.edge_margin.max(self.object_axes[1] + 2.0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.to_string()));
        let [a0, a1] = self.object_axes;
        let [i0, i1] = self.object_intensity;
        if self.n_images == 0 {
            return bad("n_images must be ≥ 1");
        }
        if self.objects_per_image[0] > self.objects_per_image[1] {
            return bad("objects_per_image range is reversed");
        }
        if self.confounders_per_image[0] > self.confounders_per_image[1] {
            return bad("confounders_per_image range is reversed");
        }
        if !(a0.is_finite() && a1.is_finite() && 1.0 <= a0 && a0 <= a1) {
            return bad("object_axes must satisfy 1 ≤ min ≤ max");
        }
        if !(i0.is_finite() && i1.is_finite() && 0.0 <= i0 && i0 <= i1 && i1 <= 255.0) {
            return bad("object_intensity must satisfy 0 ≤ min ≤ max ≤ 255");
        }
        if !(self.background_noise_std.is_finite() && self.background_noise_std >= 0.0) {
            return bad("background_noise_std must be ≥ 0");
        }
        if !(self.edge_margin.is_finite() && self.edge_margin >= 0.0) {
            return bad("edge_margin must be ≥ 0");
        }
        // Object centers live in a square inset by the margin; it must hold
        // the largest object and leave room to place the maximum count.
        let inner = self.image_size as f64 - 2.0 * self.object_margin();
        if inner < 2.0 * a1 + 4.0 {
            return bad("image_size too small for object_axes and edge_margin");
        }
        let per_object = (2.0 * a1 + 6.0).powi(2);
        if self.objects_per_image[1] as f64 * per_object > 0.5 * (inner + 2.0 * a1).powi(2) {
            return bad("objects_per_image too large to place without overlap");
        }
        Ok(())
    }
}

/// Geometry of one painted ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Radians, rotation of the first semi-axis from +x.
    pub angle: f64,
}

impl Ellipse {
    /// Whether the center of pixel `(x, y)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.center.0, y as f64 + 0.5 - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_axes.0;
        let v = (-dx * s + dy * c) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }

    fn reach(&self) -> f64 {
        self.semi_axes.0.max(self.semi_axes.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub image: AnnotatedImage,
    /// One per annotated box, same order.
    pub ellipses: Vec<Ellipse>,
    pub confounders: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub images: Vec<SynthImage>,
    pub manifest: Manifest,
}

impl SynthCorpus {
    pub fn annotated(&self) -> Vec<AnnotatedImage> {
        self.images.iter().map(|s| s.image.clone()).collect()
    }
}

pub fn image_id(index: usize) -> String {
    format!("synth-{index:04}")
}

struct Canvas {
    size: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, color: [f64; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }
}

/// Square `[x0, x1) × [y0, y1)` of pixel coordinates covering a disc of radius `r`.
fn footprint(cx: f64, cy: f64, r: f64, size: usize) -> (usize, usize, usize, usize) {
    let lo = |c: f64| (c - r - 1.0).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + r + 1.0).ceil() as usize).min(size);
    (lo(cx), hi(cx), lo(cy), hi(cy))
}

fn dark_color(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> [f64; 3] {
    let level = rng.random_range(cfg.object_intensity[0]..=cfg.object_intensity[1]);
    // Stain-like purple tint.
    [level * 1.1, level * 0.75, level * 1.2].map(|v| v.min(255.0))
}

fn place(rng: &mut ChaCha8Rng, size: usize, r: f64, margin: f64, taken: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let margin = margin.max(r + 2.0);
    for _ in 0..1000 {
        let cx = rng.random_range(margin..size as f64 - margin);
        let cy = rng.random_range(margin..size as f64 - margin);
        if taken.iter().all(|&(x, y, rr)| (cx - x).hypot(cy - y) > r + rr + 4.0) {
            return Some((cx, cy));
        }
    }
    None
}

fn generate_one(cfg: &SynthConfig, index: usize) -> Result<SynthImage, SynthError> {
    let id = image_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth/{id}")));
    let n = cfg.image_size;

    // Background: tinted base, two low-frequency waves, then noise at the end.
    let base = [
        rng.random_range(205.0..225.0),
        rng.random_range(190.0..210.0),
        rng.random_range(215.0..235.0),
    ];
    let (fx, fy, phase) = (rng.random_range(0.01..0.05), rng.random_range(0.01..0.05), rng.random_range(0.0..6.28));
    let mut canvas = Canvas { size: n, data: vec![0.0; n * n * 3] };
    for y in 0..n {
        for x in 0..n {
            let wave = 8.0 * ((x as f64 * fx + phase).sin() + (y as f64 * fy - phase).cos());
            canvas.set(x, y, base.map(|b| b + wave));
        }
    }

    let mut taken: Vec<(f64, f64, f64)> = Vec::new();
    let n_objects = rng.random_range(cfg.objects_per_image[0]..=cfg.objects_per_image[1]);
    let mut ellipses = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let a = rng.random_range(cfg.object_axes[0]..=cfg.object_axes[1]);
        let b = rng.random_range(cfg.object_axes[0]..=cfg.object_axes[1]).min(a);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (cx, cy) = place(&mut rng, n, a, cfg.object_margin(), &taken)
            .ok_or_else(|| SynthError::PlacementFailed { image: id.clone(), requested: n_objects })?;
        taken.push((cx, cy, a));
        ellipses.push(Ellipse { center: (cx, cy), semi_axes: (a, b), angle });
    }

    // Confounders get positions after the objects so they never overlap them,
    // but are painted first.
    let n_conf = rng.random_range(cfg.confounders_per_image[0]..=cfg.confounders_per_image[1]);
    let mut confounders = 0;
    for _ in 0..n_conf {
        let ring = rng.random_bool(0.5);
        let color = dark_color(&mut rng, cfg);
        if ring {
            let outer = rng.random_range(cfg.object_axes[0] + 1.0..=cfg.object_axes[1] + 3.0);
            let width = rng.random_range(1.5..3.0);
            let Some((cx, cy)) = place(&mut rng, n, outer, 0.0, &taken) else { continue };
            taken.push((cx, cy, outer));
            let (x0, x1, y0, y1) = footprint(cx, cy, outer, n);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = (x as f64 + 0.5 - cx).hypot(y as f64 + 0.5 - cy);
                    if d <= outer && d >= outer - width {
                        canvas.set(x, y, color);
                    }
                }
            }
        } else {
            let half_long = rng.random_range(cfg.object_axes[0] + 2.0..=cfg.object_axes[1] + 4.0);
            let half_short = rng.random_range(1.0..2.5);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let Some((cx, cy)) = place(&mut rng, n, half_long, 0.0, &taken) else { continue };
            taken.push((cx, cy, half_long));
            let (s, c) = angle.sin_cos();
            let (x0, x1, y0, y1) = footprint(cx, cy, half_long, n);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if (dx * c + dy * s).abs() <= half_long && (-dx * s + dy * c).abs() <= half_short {
                        canvas.set(x, y, color);
                    }
                }
            }
        }
        confounders += 1;
    }

    let mut boxes = Vec::with_capacity(ellipses.len());
    for e in &ellipses {
        let color = dark_color(&mut rng, cfg);
        let (x0, x1, y0, y1) = footprint(e.center.0, e.center.1, e.reach(), n);
        let mut bounds: Option<[u32; 4]> = None;
        for y in y0..y1 {
            for x in x0..x1 {
                if e.contains(x, y) {
                    canvas.set(x, y, color);
                    let (x, y) = (x as u32, y as u32);
                    bounds = Some(match bounds {
                        None => [x, y, x + 1, y + 1],
                        Some([a, b, c, d]) => [a.min(x), b.min(y), c.max(x + 1), d.max(y + 1)],
                    });
                }
            }
        }
        let [a, b, c, d] = bounds.expect("semi-axes ≥ 1 cover at least one pixel center");
        boxes.push(BoundingBox::new(a, b, c, d, DEFAULT_TARGET_LABEL));
    }

    let noise = Normal::new(0.0, cfg.background_noise_std).expect("validated std");
    let pixels: Vec<f32> = canvas.data.iter().map(|&v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as f32).collect();
    let raster = Raster::new(n, n, pixels).expect("canvas dimensions");
    let image = AnnotatedImage::new(id, raster, boxes).expect("boxes lie inside the canvas");
    Ok(SynthImage { image, ellipses, confounders })
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let images = (0..cfg.n_images).map(|i| generate_one(cfg, i)).collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest::new(
        images
            .iter()
            .map(|s| ManifestImage {
                id: s.image.id.clone(),
                file: format!("images/{}.png", s.image.id),
                width: s.image.width(),
                height: s.image.height(),
                objects: s.image.boxes.iter().map(ManifestObject::from_box).collect(),
            })
            .collect(),
    );
    Ok(SynthCorpus { images, manifest })
}

/// Writes `images/<id>.png` for every image and `manifest.json` into `dir`;
/// returns the written paths, manifest last.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let werr = |path: &Path, e: &dyn std::fmt::Display| SynthError::Write { path: path.to_path_buf(), reason: e.to_string() };
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| werr(&images_dir, &e))?;
    let mut written = Vec::with_capacity(corpus.images.len() + 1);
    for (s, entry) in corpus.images.iter().zip(&corpus.manifest.images) {
        let path = dir.join(&entry.file);
        s.image.raster.to_rgb8().save(&path).map_err(|e| werr(&path, &e))?;
        written.push(path);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, corpus.manifest.to_json()).map_err(|e| werr(&path, &e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig { n_images: n, image_size: 96, object_axes: [4.0, 8.0], edge_margin: 12.0, ..Default::default() }
    }

    #[test]
    fn fixed_object_count() {
        let cfg = SynthConfig { objects_per_image: [3, 3], ..small(6) };
        let corpus = generate(&cfg).unwrap();
        assert!(corpus.manifest.images.iter().all(|e| e.objects.len() == 3));
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 8, ..small(3) }).unwrap();
        assert_ne!(a.images[0].image.raster, c.images[0].image.raster);
    }

    #[test]
    fn objects_are_dark_on_bright_background() {
        let s = &generate(&small(1)).unwrap().images[0];
        let e = &s.ellipses[0];
        let (cx, cy) = (e.center.0 as usize, e.center.1 as usize);
        let inside = s.image.raster.pixel(cx, cy);
        let corner = s.image.raster.pixel(0, 0);
        assert!(inside.iter().sum::<f32>() < corner.iter().sum::<f32>());
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_images: 0, ..small(1) },
            SynthConfig { objects_per_image: [3, 2], ..small(1) },
            SynthConfig { object_axes: [0.5, 3.0], ..small(1) },
            SynthConfig { image_size: 20, ..small(1) },
            SynthConfig { background_noise_std: -1.0, ..small(1) },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::ConfigInvalid(_))), "{cfg:?}");
        }
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&small(2)).unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let (manifest, images) = crate::patchset::load_corpus(dir.path()).unwrap();
        assert_eq!(manifest, corpus.manifest);
        assert_eq!(images, corpus.annotated());
    }
}
