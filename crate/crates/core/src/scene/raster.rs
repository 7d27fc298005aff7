use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_NODATA: f32 = -999.0;

/// Affine map from (col, row) pixel coordinates to world (x, y):
/// `x = g0 + col*g1 + row*g2`, `y = g3 + col*g4 + row*g5`.
/// Integer coordinates are pixel corners; centers sit at `+0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    /// Unit pixels, origin at the top-left corner, y growing downwards.
    pub const IDENTITY: GeoTransform = GeoTransform([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn scaled(origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        GeoTransform([origin_x, pixel_size, 0.0, origin_y, 0.0, pixel_size])
    }

    pub fn determinant(&self) -> f64 {
        let g = &self.0;
        g[1] * g[5] - g[2] * g[4]
    }

    pub fn is_invertible(&self) -> bool {
        let d = self.determinant();
        d.is_finite() && d != 0.0 && self.0.iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        let g = &self.0;
        (g[0] + col * g[1] + row * g[2], g[3] + col * g[4] + row * g[5])
    }

    /// World of the center of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.apply(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Inverse map, world (x, y) to fractional (col, row).
    pub fn invert(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if !self.is_invertible() {
            return Err(Error::NonInvertible);
        }
        let g = &self.0;
        let det = self.determinant();
        let dx = x - g[0];
        let dy = y - g[3];
        Ok(((g[5] * dx - g[2] * dy) / det, (-g[4] * dx + g[1] * dy) / det))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub geotransform: GeoTransform,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, geotransform: GeoTransform) -> Self {
        GridGeometry {
            width,
            height,
            geotransform,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Multi-band float grid, band-major then row-major (row 0 is the top).
///
/// A pixel is valid iff every band value is finite and differs from the
/// nodata sentinel; invalid pixels hold the sentinel in every band. The
/// constructor enforces this, which is what makes the file format
/// round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterScene {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
    nodata: f32,
    geotransform: GeoTransform,
    pub timestamp: i64,
    pub sensor_id: String,
    band_names: Vec<String>,
}

impl RasterScene {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        mut data: Vec<f32>,
        geotransform: GeoTransform,
        nodata: f32,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Invalid(format!(
                "raster dimensions must be positive, got {width}x{height}x{bands}"
            )));
        }
        if !nodata.is_finite() {
            return Err(Error::Invalid("nodata sentinel must be finite".into()));
        }
        let plane = width * height;
        if data.len() != plane * bands {
            return Err(Error::Shape(format!(
                "data holds {} values, expected {}",
                data.len(),
                plane * bands
            )));
        }
        if !geotransform.is_invertible() {
            return Err(Error::NonInvertible);
        }
        let mut valid = vec![true; plane];
        for b in 0..bands {
            for (p, ok) in valid.iter_mut().enumerate() {
                let v = data[b * plane + p];
                if !v.is_finite() || v == nodata {
                    *ok = false;
                }
            }
        }
        for b in 0..bands {
            for (p, ok) in valid.iter().enumerate() {
                if !ok {
                    data[b * plane + p] = nodata;
                }
            }
        }
        Ok(RasterScene {
            width,
            height,
            bands,
            data,
            valid,
            nodata,
            geotransform,
            timestamp: 0,
            sensor_id: String::new(),
            band_names: (0..bands).map(|b| format!("b{b}")).collect(),
        })
    }

    /// Single-band raster from values and an explicit validity grid.
    pub fn from_plane(geometry: GridGeometry, values: &[f32], valid: &[bool]) -> Result<Self> {
        if values.len() != geometry.pixel_count() || valid.len() != geometry.pixel_count() {
            return Err(Error::Shape("plane does not match geometry".into()));
        }
        let data = values
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| if ok { v } else { DEFAULT_NODATA })
            .collect();
        RasterScene::new(
            geometry.width,
            geometry.height,
            1,
            data,
            geometry.geotransform,
            DEFAULT_NODATA,
        )
    }

    pub fn with_metadata(mut self, timestamp: i64, sensor_id: impl Into<String>) -> Self {
        self.timestamp = timestamp;
        self.sensor_id = sensor_id.into();
        self
    }

    pub fn set_band_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = names;
        Ok(())
    }

    /// Marks a pixel invalid, writing the sentinel into every band.
    pub fn invalidate(&mut self, pixel: usize) {
        let plane = self.width * self.height;
        self.valid[pixel] = false;
        for b in 0..self.bands {
            self.data[b * plane + pixel] = self.nodata;
        }
    }

    /// New scene holding only the listed bands, in the given order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<Self> {
        if bands.is_empty() || bands.iter().any(|&b| b >= self.bands) {
            return Err(Error::Invalid(format!(
                "band subset {bands:?} out of range for {} bands",
                self.bands
            )));
        }
        let data = bands
            .iter()
            .flat_map(|&b| self.band(b).iter().copied())
            .collect();
        let mut out = RasterScene::new(
            self.width,
            self.height,
            bands.len(),
            data,
            self.geotransform,
            self.nodata,
        )?;
        out.timestamp = self.timestamp;
        out.sensor_id = self.sensor_id.clone();
        out.band_names = bands.iter().map(|&b| self.band_names[b].clone()).collect();
        // a pixel invalid in a dropped band stays invalid
        for (p, ok) in self.valid.iter().enumerate() {
            if !ok && out.valid[p] {
                out.invalidate(p);
            }
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[b * plane..(b + 1) * plane]
    }

    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[band * self.width * self.height + row * self.width + col]
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn geotransform(&self) -> GeoTransform {
        self.geotransform
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.width, self.height, self.geotransform)
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: usize,
    nodata: f32,
    geotransform: [f64; 6],
    timestamp: i64,
    sensor_id: String,
    band_names: Vec<String>,
}

/// `(payload, header)` paths for a raster named by `path` (any extension is replaced).
pub fn raster_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

pub fn save_raster(scene: &RasterScene, path: &Path) -> Result<()> {
    let (bin, json) = raster_paths(path);
    let header = Header {
        width: scene.width,
        height: scene.height,
        bands: scene.bands,
        nodata: scene.nodata,
        geotransform: scene.geotransform.0,
        timestamp: scene.timestamp,
        sensor_id: scene.sensor_id.clone(),
        band_names: scene.band_names.clone(),
    };
    let mut payload = Vec::with_capacity(scene.data.len() * 4);
    for v in &scene.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = bin.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn load_raster(path: &Path) -> Result<RasterScene> {
    let (bin, json) = raster_paths(path);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json.clone(),
        reason: e.to_string(),
    })?;
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(Error::Header {
            path: json,
            reason: "dimensions must be positive".into(),
        });
    }
    if header.band_names.len() != header.bands {
        return Err(Error::Header {
            path: json,
            reason: "band_names length differs from bands".into(),
        });
    }
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.width * header.height * header.bands * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut scene = RasterScene::new(
        header.width,
        header.height,
        header.bands,
        data,
        GeoTransform(header.geotransform),
        header.nodata,
    )?;
    scene.timestamp = header.timestamp;
    scene.sensor_id = header.sensor_id;
    scene.band_names = header.band_names;
    Ok(scene)
}
