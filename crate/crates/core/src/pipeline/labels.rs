//! High-certainty polygon labels derived from generator truth: class cores
//! from eroded truth masks plus background boxes kept clear of the class.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::context::BinaryMask;
use crate::rng::seeded;
use crate::scene::{GeoTransform, LabelClass, LabelPolygon, LabelPolygonSet};
use crate::synthetic::GroundTruth;
use crate::tracking::{connected_components, Connectivity};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoLabelConfig {
    /// Chebyshev erosion radius applied to truth before labeling.
    pub erosion: usize,
    /// Background boxes per target.
    pub boxes: usize,
    pub box_size: usize,
    /// Minimum distance between a background box and the target class.
    pub margin: usize,
}

impl Default for AutoLabelConfig {
    fn default() -> Self {
        AutoLabelConfig {
            erosion: 2,
            boxes: 12,
            box_size: 8,
            margin: 3,
        }
    }
}

/// Keeps pixels whose whole `(2r+1)^2` neighbourhood is set and in bounds.
pub fn erode(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    (0..width * height)
        .map(|p| {
            let (row, col) = ((p / width) as isize, (p % width) as isize);
            mask[p]
                && (-r..=r).all(|dr| {
                    (-r..=r).all(|dc| {
                        let (y, x) = (row + dr, col + dc);
                        y >= 0
                            && x >= 0
                            && y < height as isize
                            && x < width as isize
                            && mask[y as usize * width + x as usize]
                    })
                })
        })
        .collect()
}

/// Sets every pixel within Chebyshev distance `radius` of a set pixel.
pub fn dilate(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    (0..width * height)
        .map(|p| {
            let (row, col) = ((p / width) as isize, (p % width) as isize);
            (-r..=r).any(|dr| {
                (-r..=r).any(|dc| {
                    let (y, x) = (row + dr, col + dc);
                    y >= 0
                        && x >= 0
                        && y < height as isize
                        && x < width as isize
                        && mask[y as usize * width + x as usize]
                })
            })
        })
        .collect()
}

/// Eroded core of a class mask. Components that erosion would wipe out
/// entirely are kept whole, so small objects still get labels.
fn core(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let mut eroded = erode(mask, width, height, radius);
    let m = BinaryMask::from_values(width, height, mask.to_vec()).expect("dims match");
    for inst in connected_components(&m, Connectivity::Eight) {
        if !inst.pixels().any(|(r, c)| eroded[r * width + c]) {
            for (r, c) in inst.pixels() {
                eroded[r * width + c] = true;
            }
        }
    }
    eroded
}

/// Rectangle polygons covering each horizontal run of set pixels, inset so
/// they contain exactly the run's pixel centers.
fn run_polygons(class: LabelClass, mask: &[bool], width: usize, gt: &GeoTransform) -> Vec<LabelPolygon> {
    let mut out = Vec::new();
    for (row, line) in mask.chunks(width).enumerate() {
        let mut col = 0;
        while col < width {
            if !line[col] {
                col += 1;
                continue;
            }
            let start = col;
            while col < width && line[col] {
                col += 1;
            }
            out.push(pixel_rect(class, row as f64, start as f64, row as f64 + 1.0, col as f64, gt));
        }
    }
    out
}

fn pixel_rect(class: LabelClass, r0: f64, c0: f64, r1: f64, c1: f64, gt: &GeoTransform) -> LabelPolygon {
    let inset = 0.25;
    let corners = [(c0 + inset, r0 + inset), (c1 - inset, r0 + inset), (c1 - inset, r1 - inset), (c0 + inset, r1 - inset)];
    LabelPolygon {
        class,
        rings: vec![corners.iter().map(|&(c, r)| gt.apply(c, r)).collect()],
    }
}

/// Square boxes placed at random where they stay `margin` pixels clear of
/// `avoid`. Fewer than `cfg.boxes` come back when space runs out.
fn background_boxes(
    class: LabelClass,
    avoid: &[bool],
    width: usize,
    height: usize,
    cfg: &AutoLabelConfig,
    gt: &GeoTransform,
    seed: u64,
) -> Vec<LabelPolygon> {
    let size = cfg.box_size;
    if size == 0 || size > width || size > height {
        return Vec::new();
    }
    let blocked = dilate(avoid, width, height, cfg.margin);
    let mut taken = vec![false; width * height];
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for _ in 0..cfg.boxes * 50 {
        if out.len() == cfg.boxes {
            break;
        }
        let r0 = rng.random_range(0..=height - size);
        let c0 = rng.random_range(0..=width - size);
        let clear = (r0..r0 + size).all(|r| (c0..c0 + size).all(|c| !blocked[r * width + c] && !taken[r * width + c]));
        if !clear {
            continue;
        }
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                taken[r * width + c] = true;
            }
        }
        out.push(pixel_rect(class, r0 as f64, c0 as f64, (r0 + size) as f64, (c0 + size) as f64, gt));
    }
    out
}

/// Smoke and fire cores plus per-target background boxes for one scene.
pub fn auto_labels(truth: &GroundTruth, gt: &GeoTransform, cfg: &AutoLabelConfig, seed: u64) -> Result<LabelPolygonSet> {
    let (w, h) = (truth.width, truth.height);
    if truth.smoke.len() != w * h || truth.fire.len() != w * h {
        return Err(Error::Shape("ground truth does not match its dimensions".into()));
    }
    let mut polygons = run_polygons(LabelClass::Smoke, &core(&truth.smoke, w, h, cfg.erosion), w, gt);
    polygons.extend(run_polygons(LabelClass::Fire, &core(&truth.fire, w, h, cfg.erosion), w, gt));
    polygons.extend(background_boxes(
        LabelClass::SmokeBackground,
        &truth.smoke,
        w,
        h,
        cfg,
        gt,
        crate::rng::derive_seed(seed, 0),
    ));
    polygons.extend(background_boxes(
        LabelClass::FireBackground,
        &truth.fire,
        w,
        h,
        cfg,
        gt,
        crate::rng::derive_seed(seed, 1),
    ));
    Ok(LabelPolygonSet { polygons })
}
