//! Multi-stream certainty fusion and cloud-filter restoration.

use serde::{Deserialize, Serialize};

use crate::context::BinaryMask;
pub use crate::numeric::exact_sum;
use crate::par;
use crate::scene::{collocate_grid, GridGeometry, RasterScene, DEFAULT_NODATA};
use crate::{Error, Result};

pub const DEFAULT_CF_THRESHOLD: f64 = 0.2;
pub const DEFAULT_TIME_WINDOW: i64 = 3600;

/// One sensor's mask for a target, with optional soft scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamMask {
    pub geometry: GridGeometry,
    pub mask: BinaryMask,
    pub scores: Option<Vec<f64>>,
    pub weight: f64,
    pub timestamp: i64,
    pub sensor_id: String,
}

impl StreamMask {
    pub fn new(geometry: GridGeometry, mask: BinaryMask, scores: Option<Vec<f64>>, weight: f64) -> Result<Self> {
        if mask.width != geometry.width || mask.height != geometry.height {
            return Err(Error::Shape("stream mask does not match its geometry".into()));
        }
        if let Some(s) = &scores {
            if s.len() != geometry.pixel_count() {
                return Err(Error::Shape("stream scores do not match its geometry".into()));
            }
            if s.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::Invalid("stream scores must lie in [0, 1]".into()));
            }
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Invalid(format!("stream weight must be positive, got {weight}")));
        }
        let timestamp = mask.timestamp;
        Ok(StreamMask {
            geometry,
            mask,
            scores,
            weight,
            timestamp,
            sensor_id: String::new(),
        })
    }

    fn score(&self, p: usize) -> f64 {
        match &self.scores {
            Some(s) => s[p],
            None if self.mask.values()[p] => 1.0,
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyMask {
    pub geometry: GridGeometry,
    /// 0 where no stream contributes.
    pub certainty: Vec<f64>,
    pub contributors: Vec<u32>,
    pub timestamp: i64,
}

impl CertaintyMask {
    pub fn valid(&self) -> Vec<bool> {
        self.contributors.iter().map(|&c| c > 0).collect()
    }

    pub fn to_raster(&self) -> Result<RasterScene> {
        let plane: Vec<f32> = self.certainty.iter().map(|&c| c as f32).collect();
        let r = RasterScene::from_plane(self.geometry, &plane, &self.valid())?;
        Ok(r.with_metadata(self.timestamp, "fused"))
    }
}

/// Weighted mean of stream scores on the target grid, over the streams
/// within `time_window` seconds of `timestamp` that cover each pixel.
///
/// Sums are exact (correctly rounded), so the result does not depend on the
/// stream order and duplicating a stream leaves it unchanged.
pub fn fuse(
    streams: &[StreamMask],
    target: &GridGeometry,
    timestamp: i64,
    time_window: i64,
) -> Result<CertaintyMask> {
    if streams.is_empty() {
        return Err(Error::Invalid("fusion needs at least one stream".into()));
    }
    let active: Vec<&StreamMask> = streams
        .iter()
        .filter(|s| {
            let inside = (s.timestamp - timestamp).abs() <= time_window;
            if !inside {
                log::warn!("stream {} at {} is outside the time window", s.sensor_id, s.timestamp);
            }
            inside
        })
        .collect();
    if active.is_empty() {
        return Err(Error::Invalid(format!(
            "no stream within {time_window} s of timestamp {timestamp}"
        )));
    }
    let lookups: Vec<Vec<Option<usize>>> =
        par::map_slice(&active, |s| collocate_grid(&s.geometry, s.mask.valid(), target));

    let n = target.pixel_count();
    let per_pixel: Vec<(f64, u32)> = par::map_chunks(n, par::CHUNK, |range| {
        let mut out = Vec::with_capacity(range.len());
        let mut num = Vec::with_capacity(active.len());
        let mut den = Vec::with_capacity(active.len());
        for p in range {
            num.clear();
            den.clear();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (s, lookup) in active.iter().zip(&lookups) {
                if let Some(src) = lookup[p] {
                    let q = s.score(src);
                    num.push(s.weight * q);
                    den.push(s.weight);
                    lo = lo.min(q);
                    hi = hi.max(q);
                }
            }
            if den.is_empty() {
                out.push((0.0, 0));
            } else {
                let c = (exact_sum(&num) / exact_sum(&den)).clamp(lo, hi);
                out.push((c, den.len() as u32));
            }
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    if per_pixel.iter().all(|&(_, k)| k == 0) {
        log::warn!("no stream overlaps the target grid");
    }
    let (certainty, contributors) = per_pixel.into_iter().unzip();
    Ok(CertaintyMask {
        geometry: *target,
        certainty,
        contributors,
        timestamp,
    })
}

/// Strict view of a certainty mask: set iff valid and certainty >= `theta`.
pub fn binarize(cert: &CertaintyMask, theta: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Invalid(format!("threshold must be in [0, 1], got {theta}")));
    }
    let valid = cert.valid();
    let values = cert.certainty.iter().map(|&c| c >= theta).collect();
    let mask = BinaryMask::new(cert.geometry.width, cert.geometry.height, values, valid)?;
    Ok(mask.with_timestamp(cert.timestamp))
}

/// Retrieval values with a cloud-fraction estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f32>,
    pub cloud_fraction: Vec<f32>,
    pub valid: Vec<bool>,
}

impl RetrievalGrid {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Two bands: value, cloud fraction.
    pub fn to_raster(&self) -> Result<RasterScene> {
        let mut data = self.values.clone();
        data.extend_from_slice(&self.cloud_fraction);
        let n = self.geometry.pixel_count();
        for p in 0..n {
            if !self.valid[p] {
                data[p] = DEFAULT_NODATA;
                data[n + p] = DEFAULT_NODATA;
            }
        }
        let mut r = RasterScene::new(
            self.geometry.width,
            self.geometry.height,
            2,
            data,
            self.geometry.geotransform,
            DEFAULT_NODATA,
        )?;
        r.set_band_names(vec!["value".into(), "cloud_fraction".into()])?;
        Ok(r)
    }

    pub fn from_raster(r: &RasterScene) -> Result<Self> {
        if r.band_count() != 2 {
            return Err(Error::Shape(format!("retrieval raster needs 2 bands, has {}", r.band_count())));
        }
        Ok(RetrievalGrid {
            geometry: r.geometry(),
            values: r.band(0).to_vec(),
            cloud_fraction: r.band(1).to_vec(),
            valid: r.valid().to_vec(),
        })
    }
}

/// Cloud filter with smoke restoration: a valid value survives if its cloud
/// fraction is at most `cf_threshold` or the smoke mask covers it. Values
/// pass through untouched; everything else is invalidated.
pub fn restore_retrievals(ret: &RetrievalGrid, smoke: &BinaryMask, cf_threshold: f64) -> Result<RetrievalGrid> {
    if smoke.width != ret.geometry.width || smoke.height != ret.geometry.height {
        return Err(Error::Shape(format!(
            "smoke mask is {}x{}, retrieval grid {}x{}",
            smoke.width, smoke.height, ret.geometry.width, ret.geometry.height
        )));
    }
    let valid = (0..ret.values.len())
        .map(|p| {
            ret.valid[p] && (f64::from(ret.cloud_fraction[p]) <= cf_threshold || smoke.values()[p])
        })
        .collect();
    Ok(RetrievalGrid {
        geometry: ret.geometry,
        values: ret.values.clone(),
        cloud_fraction: ret.cloud_fraction.clone(),
        valid,
    })
}

/// Stream registry entry in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamEntry {
    pub mask: String,
    #[serde(default)]
    pub scores: Option<String>,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub sensor_id: String,
}

fn one() -> f64 {
    1.0
}
