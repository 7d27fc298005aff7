use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::RasterScene;
use crate::{par, Error, Result};

/// Floor applied to per-band standard deviations during standardization.
pub const STD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub pixel_count: usize,
}

impl BandStats {
    pub fn band_count(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, band: usize, value: f32) -> f64 {
        (value as f64 - self.mean[band]) / self.std[band].max(STD_EPSILON)
    }
}

/// Per-band mean and population standard deviation over valid pixels.
pub fn compute_band_stats(scene: &RasterScene) -> Result<BandStats> {
    compute_pooled_band_stats(&[scene])
}

/// Pools valid pixels from several scenes with a common band layout.
pub fn compute_pooled_band_stats(scenes: &[&RasterScene]) -> Result<BandStats> {
    let bands = scenes
        .first()
        .ok_or(Error::NoValidPixels)?
        .band_count();
    if scenes.iter().any(|s| s.band_count() != bands) {
        return Err(Error::Shape("scenes disagree on band count".into()));
    }
    let pixel_count: usize = scenes.iter().map(|s| s.valid_count()).sum();
    if pixel_count == 0 {
        return Err(Error::NoValidPixels);
    }
    let n = pixel_count as f64;
    let mut mean = vec![0.0; bands];
    let mut std = vec![0.0; bands];
    for b in 0..bands {
        let valid_values = || {
            scenes.iter().flat_map(move |s| {
                s.band(b)
                    .iter()
                    .zip(s.valid())
                    .filter(|(_, ok)| **ok)
                    .map(|(v, _)| *v as f64)
            })
        };
        let m = valid_values().sum::<f64>() / n;
        let var = valid_values().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[b] = m;
        std[b] = var.sqrt();
    }
    Ok(BandStats {
        mean,
        std,
        pixel_count,
    })
}

/// Per-pixel feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    /// N x D, one row per sample.
    pub features: Array2<f64>,
    /// (row, col) of each sample's center pixel.
    pub coords: Vec<(usize, usize)>,
    pub scene_ref: String,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// One sample per pixel whose full `(2r+1)^2` window is in bounds and valid.
///
/// Features are standardized per band and flattened band-major, then
/// row-major within the window.
pub fn extract_samples(scene: &RasterScene, stats: &BandStats, radius: usize) -> Result<SampleSet> {
    let bands = scene.band_count();
    if stats.band_count() != bands || stats.std.len() != bands {
        return Err(Error::Shape(format!(
            "stats describe {} bands, scene has {bands}",
            stats.band_count()
        )));
    }
    let (w, h) = (scene.width(), scene.height());
    let side = 2 * radius + 1;
    let dim = bands * side * side;

    // summed-area table of invalid pixels for O(1) window checks
    let mut invalid = vec![0u32; (w + 1) * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            let bad = u32::from(!scene.is_valid(r, c));
            invalid[(r + 1) * (w + 1) + c + 1] =
                bad + invalid[r * (w + 1) + c + 1] + invalid[(r + 1) * (w + 1) + c] - invalid[r * (w + 1) + c];
        }
    }
    let window_clean = |r: usize, c: usize| {
        let (r0, c0, r1, c1) = (r - radius, c - radius, r + radius + 1, c + radius + 1);
        invalid[r1 * (w + 1) + c1] + invalid[r0 * (w + 1) + c0]
            == invalid[r0 * (w + 1) + c1] + invalid[r1 * (w + 1) + c0]
    };

    let rows: Vec<(Vec<f64>, Vec<(usize, usize)>)> = if w < side || h < side {
        Vec::new()
    } else {
        par::map_indexed(h - 2 * radius, |i| {
            let r = i + radius;
            let mut feats = Vec::new();
            let mut coords = Vec::new();
            for c in radius..w - radius {
                if !window_clean(r, c) {
                    continue;
                }
                for b in 0..bands {
                    for rr in r - radius..=r + radius {
                        for cc in c - radius..=c + radius {
                            feats.push(stats.standardize(b, scene.value(b, rr, cc)));
                        }
                    }
                }
                coords.push((r, c));
            }
            (feats, coords)
        })
    };

    let mut flat = Vec::new();
    let mut coords = Vec::new();
    for (f, c) in rows {
        flat.extend(f);
        coords.extend(c);
    }
    let features = Array2::from_shape_vec((coords.len(), dim), flat)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(SampleSet {
        dim,
        features,
        coords,
        scene_ref: scene.sensor_id.clone(),
    })
}
