//! Bounding boxes, annotated images, and the JSON annotation manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PatchError, Raster};

/// Integer pixel box, half-open: covers `x_min..x_max` × `y_min..y_max`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
    pub label: String,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32, label: impl Into<String>) -> Self {
        Self { x_min, y_min, x_max, y_max, label: label.into() }
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    /// Checks `0 ≤ x_min < x_max ≤ width` and likewise for y.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), PatchError> {
        let ok = self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_max as usize <= width
            && self.y_max as usize <= height;
        if ok {
            Ok(())
        } else {
            Err(PatchError::InvalidBox { bbox: self.to_array(), width, height })
        }
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        u64::from(w) * u64::from(h)
    }

    /// Share at least one pixel.
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x_min) + f64::from(self.x_max)) / 2.0,
            (f64::from(self.y_min) + f64::from(self.y_max)) / 2.0,
        )
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= f64::from(self.x_min) && x < f64::from(self.x_max) && y >= f64::from(self.y_min) && y < f64::from(self.y_max)
    }
}

/// A decoded field of view with its expert boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub raster: Raster,
    pub boxes: Vec<BoundingBox>,
}

impl AnnotatedImage {
    pub fn new(id: impl Into<String>, raster: Raster, boxes: Vec<BoundingBox>) -> Result<Self, PatchError> {
        let img = Self { id: id.into(), raster, boxes };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        self.boxes.iter().try_for_each(|b| b.validate(self.raster.width(), self.raster.height()))
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub label: String,
    pub bbox: [u32; 4],
}

impl ManifestObject {
    pub fn to_box(&self) -> BoundingBox {
        let [x0, y0, x1, y1] = self.bbox;
        BoundingBox::new(x0, y0, x1, y1, self.label.clone())
    }

    pub fn from_box(b: &BoundingBox) -> Self {
        Self { label: b.label.clone(), bbox: b.to_array() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ManifestObject>,
}

impl ManifestImage {
    pub fn validate(&self) -> Result<(), PatchError> {
        self.objects.iter().try_for_each(|o| o.to_box().validate(self.width, self.height))
    }
}

/// `{"version":1,"images":[{"id","file","width","height","objects":[{"label","bbox"}]}]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub images: Vec<ManifestImage>,
}

pub const MANIFEST_VERSION: u32 = 1;

impl Manifest {
    pub fn new(images: Vec<ManifestImage>) -> Self {
        Self { version: MANIFEST_VERSION, images }
    }

    pub fn from_json(text: &str) -> Result<Self, PatchError> {
        let manifest: Manifest = serde_json::from_str(text).map_err(|e| PatchError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PatchError> {
        let text = fs::read_to_string(path).map_err(|e| PatchError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        if self.version != MANIFEST_VERSION {
            return Err(PatchError::Manifest(format!("unsupported manifest version {}", self.version)));
        }
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.id.as_str()) {
                return Err(PatchError::Manifest(format!("duplicate image id {:?}", img.id)));
            }
            img.validate()?;
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ManifestImage> {
        self.images.iter().find(|i| i.id == id)
    }
}

/// Decodes one manifest entry (PNG or JPEG) relative to `root`.
pub fn load_image(root: &Path, entry: &ManifestImage) -> Result<AnnotatedImage, PatchError> {
    let path: PathBuf = root.join(&entry.file);
    let decoded = image::open(&path).map_err(|e| PatchError::Decode { path: path.clone(), reason: e.to_string() })?;
    let rgb = decoded.to_rgb8();
    if rgb.width() as usize != entry.width || rgb.height() as usize != entry.height {
        return Err(PatchError::Manifest(format!(
            "{}: manifest says {}x{}, file is {}x{}",
            entry.id,
            entry.width,
            entry.height,
            rgb.width(),
            rgb.height()
        )));
    }
    AnnotatedImage::new(entry.id.clone(), Raster::from_rgb8(&rgb), entry.objects.iter().map(ManifestObject::to_box).collect())
}

/// Loads `manifest.json` and every image it lists from `dir`.
pub fn load_corpus(dir: &Path) -> Result<(Manifest, Vec<AnnotatedImage>), PatchError> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let images = manifest.images.iter().map(|e| load_image(dir, e)).collect::<Result<_, _>>()?;
    Ok((manifest, images))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(0, 0, 10, 10, "a").validate(10, 10).is_ok());
        assert!(BoundingBox::new(5, 0, 5, 10, "a").validate(10, 10).is_err());
        assert!(BoundingBox::new(0, 0, 11, 10, "a").validate(10, 10).is_err());
    }

    #[test]
    fn iou_and_intersection() {
        let a = BoundingBox::new(0, 0, 10, 10, "a");
        let b = BoundingBox::new(5, 0, 15, 10, "a");
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        let touching = BoundingBox::new(10, 0, 20, 10, "a");
        assert!(!a.intersects(&touching));
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let text = r#"{"version":1,"images":[{"id":"a","file":"a.png","width":8,"height":8,
            "objects":[{"label":"p","bbox":[1,1,4,4]}]}]}"#;
        let m = Manifest::from_json(text).unwrap();
        assert_eq!(Manifest::from_json(&m.to_json()).unwrap(), m);

        let bad = text.replace("[1,1,4,4]", "[4,1,4,4]");
        assert!(matches!(Manifest::from_json(&bad), Err(PatchError::InvalidBox { .. })));
        let dup = r#"{"version":1,"images":[{"id":"a","file":"a.png","width":8,"height":8,"objects":[]},
            {"id":"a","file":"b.png","width":8,"height":8,"objects":[]}]}"#;
        assert!(matches!(Manifest::from_json(dup), Err(PatchError::Manifest(_))));
    }
}
