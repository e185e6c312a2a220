//! Synthetic scenes and patch extraction.
//!
//! A scene is an RGB image with an aligned 4-class mask: background, one
//! circle, one rectangle, one triangle (drawn in that order, later shapes
//! on top). Pixels are classified by their center against the recorded
//! geometry, and the image is colored from the mask plus mild per-pixel
//! noise, so mask and rendering agree exactly by construction.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{read_pgm, read_ppm, write_pgm, write_ppm, GrayImage, RgbImage};
use crate::seg::SegMap;
use crate::tensor::init::seeded_rng;

pub const CLASS_COUNT: u8 = 4;
pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_CIRCLE: u8 = 1;
pub const CLASS_RECTANGLE: u8 = 2;
pub const CLASS_TRIANGLE: u8 = 3;

const CLASS_COLORS: [[u8; 3]; 4] = [
    [44, 48, 64],   // background
    [198, 64, 64],  // circle
    [64, 178, 84],  // rectangle
    [228, 198, 72], // triangle
];
const NOISE_AMPLITUDE: i16 = 5;

/// Geometry of one scene, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGeometry {
    pub circle_center: (f32, f32),
    pub circle_radius: f32,
    /// (x0, y0, x1, y1), half-open.
    pub rect: (f32, f32, f32, f32),
    pub triangle: [(f32, f32); 3],
}

impl SceneGeometry {
    /// Class of the pixel whose center is at (x, y), honoring draw order.
    pub fn classify(&self, x: f32, y: f32) -> u8 {
        let mut class = CLASS_BACKGROUND;
        let (cx, cy) = self.circle_center;
        if (x - cx).powi(2) + (y - cy).powi(2) <= self.circle_radius.powi(2) {
            class = CLASS_CIRCLE;
        }
        let (x0, y0, x1, y1) = self.rect;
        if x >= x0 && x < x1 && y >= y0 && y < y1 {
            class = CLASS_RECTANGLE;
        }
        if point_in_triangle((x, y), &self.triangle) {
            class = CLASS_TRIANGLE;
        }
        class
    }
}

fn cross(o: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

pub fn point_in_triangle(p: (f32, f32), tri: &[(f32, f32); 3]) -> bool {
    let d1 = cross(tri[0], tri[1], p);
    let d2 = cross(tri[1], tri[2], p);
    let d3 = cross(tri[2], tri[0], p);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

/// One generated image + mask pair with its source geometry.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: RgbImage,
    pub mask: SegMap,
    pub geometry: SceneGeometry,
}

fn sample_geometry(size: usize, rng: &mut ChaCha8Rng) -> SceneGeometry {
    let s = size as f32;
    // shapes are sized generously so they stay resolvable on the latent grid
    let radius = rng.gen_range(0.13 * s..0.21 * s);
    let cx = rng.gen_range(radius..s - radius);
    let cy = rng.gen_range(radius..s - radius);

    let rw = rng.gen_range(0.22 * s..0.40 * s);
    let rh = rng.gen_range(0.22 * s..0.40 * s);
    let x0 = rng.gen_range(0.0..s - rw);
    let y0 = rng.gen_range(0.0..s - rh);

    // resample triangles until clearly non-degenerate
    let triangle = loop {
        let tcx = rng.gen_range(0.25 * s..0.75 * s);
        let tcy = rng.gen_range(0.25 * s..0.75 * s);
        let base = rng.gen_range(0.0..std::f32::consts::TAU);
        let mut pts = [(0.0f32, 0.0f32); 3];
        for (i, pt) in pts.iter_mut().enumerate() {
            let angle = base
                + i as f32 * std::f32::consts::TAU / 3.0
                + rng.gen_range(-0.35..0.35);
            let reach = rng.gen_range(0.16 * s..0.26 * s);
            *pt = (
                (tcx + reach * angle.cos()).clamp(0.0, s - 1.0),
                (tcy + reach * angle.sin()).clamp(0.0, s - 1.0),
            );
        }
        let area = cross(pts[0], pts[1], pts[2]).abs() * 0.5;
        if area > 0.01 * s * s {
            break pts;
        }
    };

    SceneGeometry {
        circle_center: (cx, cy),
        circle_radius: radius,
        rect: (x0, y0, x0 + rw, y0 + rh),
        triangle,
    }
}

/// Renders one scene. The same rng stream position always yields the same
/// scene.
pub fn generate_scene(size: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    if size % 32 != 0 {
        return Err(Error::Config(format!(
            "scene size must be divisible by 32, got {size}"
        )));
    }
    let geometry = sample_geometry(size, rng);
    let mut labels = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            labels[y * size + x] = geometry.classify(x as f32 + 0.5, y as f32 + 0.5);
        }
    }
    let mut pixels = vec![0u8; 3 * size * size];
    for (i, label) in labels.iter().enumerate() {
        let base = CLASS_COLORS[*label as usize];
        for c in 0..3 {
            let noise = rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
            pixels[3 * i + c] = (base[c] as i16 + noise).clamp(0, 255) as u8;
        }
    }
    Ok(SyntheticScene {
        image: RgbImage::new(size, size, pixels)?,
        mask: SegMap::new(size, size, CLASS_COUNT, 255, labels)?,
        geometry,
    })
}

/// Generates `count` scenes and writes `img_NNN.ppm` / `mask_NNN.pgm` pairs.
pub fn generate_synthetic(
    seed: u64,
    count: usize,
    size: usize,
    dir: &Path,
) -> Result<Vec<(PathBuf, PathBuf)>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = seeded_rng(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(size, &mut rng)?;
        let img_path = dir.join(format!("img_{i:03}.ppm"));
        let mask_path = dir.join(format!("mask_{i:03}.pgm"));
        write_ppm(&img_path, &scene.image)?;
        write_pgm(&mask_path, &scene.mask.to_gray())?;
        paths.push((img_path, mask_path));
    }
    Ok(paths)
}

/// Loads `img_*.ppm` / `mask_*.pgm` pairs from a directory, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<(RgbImage, GrayImage)>> {
    let mut image_names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("img_") && n.ends_with(".ppm"))
        .collect();
    image_names.sort();
    if image_names.is_empty() {
        return Err(Error::Validation(format!(
            "no img_*.ppm files under {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(image_names.len());
    for name in image_names {
        let mask_name = name.replacen("img_", "mask_", 1).replacen(".ppm", ".pgm", 1);
        let image = read_ppm(&dir.join(&name))?;
        let mask = read_pgm(&dir.join(&mask_name))?;
        if mask.width != image.width || mask.height != image.height {
            return Err(Error::Validation(format!(
                "{name}: image {}x{} but mask {}x{}",
                image.width, image.height, mask.width, mask.height
            )));
        }
        out.push((image, mask));
    }
    Ok(out)
}

/// Non-overlapping grid tiling (partial edge tiles discarded). With
/// `non_overlapping` false the grid advances by half a patch instead.
pub fn extract_patches(
    image: &RgbImage,
    mask: Option<&GrayImage>,
    patch: usize,
    non_overlapping: bool,
) -> Result<Vec<(RgbImage, Option<GrayImage>)>> {
    if patch == 0 || patch > image.width || patch > image.height {
        return Err(Error::Validation(format!(
            "patch {patch} does not fit a {}x{} image",
            image.width, image.height
        )));
    }
    if let Some(m) = mask {
        if m.width != image.width || m.height != image.height {
            return Err(Error::Shape("mask does not match image".into()));
        }
    }
    let stride = if non_overlapping { patch } else { (patch / 2).max(1) };
    let mut out = Vec::new();
    let mut y = 0;
    while y + patch <= image.height {
        let mut x = 0;
        while x + patch <= image.width {
            let mut pixels = Vec::with_capacity(3 * patch * patch);
            for py in 0..patch {
                let row = 3 * ((y + py) * image.width + x);
                pixels.extend_from_slice(&image.pixels[row..row + 3 * patch]);
            }
            let mask_patch = mask
                .map(|m| {
                    let mut labels = Vec::with_capacity(patch * patch);
                    for py in 0..patch {
                        let row = (y + py) * m.width + x;
                        labels.extend_from_slice(&m.pixels[row..row + patch]);
                    }
                    GrayImage::new(patch, patch, labels)
                })
                .transpose()?;
            out.push((RgbImage::new(patch, patch, pixels)?, mask_patch));
            x += stride;
        }
        y += stride;
    }
    Ok(out)
}

/// Deterministic 80:20 split: the first 4/5 of the items train, the rest
/// validate.
pub fn split_train_val<T>(items: Vec<T>) -> (Vec<T>, Vec<T>) {
    let train_len = (items.len() * 4) / 5;
    let mut items = items;
    let val = items.split_off(train_len.max(1).min(items.len()));
    (items, val)
}
