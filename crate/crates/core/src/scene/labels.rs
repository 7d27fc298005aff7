use serde_json::{json, Value};

use super::RasterScene;
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelClass {
    Smoke,
    Fire,
    SmokeBackground,
    FireBackground,
}

impl LabelClass {
    pub const ALL: [LabelClass; 4] = [
        LabelClass::Smoke,
        LabelClass::Fire,
        LabelClass::SmokeBackground,
        LabelClass::FireBackground,
    ];

    pub fn bit(self) -> u8 {
        match self {
            LabelClass::Smoke => LabelRaster::SMOKE,
            LabelClass::Fire => LabelRaster::FIRE,
            LabelClass::SmokeBackground => LabelRaster::SMOKE_BG,
            LabelClass::FireBackground => LabelRaster::FIRE_BG,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelClass::Smoke => "smoke",
            LabelClass::Fire => "fire",
            LabelClass::SmokeBackground => "smoke_background",
            LabelClass::FireBackground => "fire_background",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        LabelClass::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Labels(format!("unknown class {name:?}")))
    }
}

/// A labeled area in world coordinates. The first ring is the outline, any
/// further rings are holes; membership uses the even-odd rule over all rings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPolygon {
    pub class: LabelClass,
    pub rings: Vec<Vec<(f64, f64)>>,
}

impl LabelPolygon {
    pub fn new(class: LabelClass, rings: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let mut cleaned = Vec::with_capacity(rings.len());
        for mut ring in rings {
            // GeoJSON rings repeat the first vertex at the end
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err(Error::Labels(format!(
                    "polygon ring with {} vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::Labels("non-finite vertex".into()));
            }
            cleaned.push(ring);
        }
        if cleaned.is_empty() {
            return Err(Error::Labels("polygon without rings".into()));
        }
        Ok(LabelPolygon {
            class,
            rings: cleaned,
        })
    }

    /// Axis-aligned rectangle `[x0,x1] x [y0,y1]`.
    pub fn rectangle(class: LabelClass, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        LabelPolygon {
            class,
            rings: vec![vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]],
        }
    }

    /// Even-odd membership; points on an edge count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            let n = ring.len();
            for i in 0..n {
                let (xi, yi) = ring[i];
                let (xj, yj) = ring[(i + 1) % n];
                if on_segment(x, y, xi, yi, xj, yj) {
                    return true;
                }
                if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.rings.iter().flatten();
        pts.fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }
}

fn on_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let cross = dx * (py - ay) - dy * (px - ax);
    if cross.abs() > 1e-9 * len2.sqrt().max(1e-300) {
        return false;
    }
    let t = dx * (px - ax) + dy * (py - ay);
    t >= 0.0 && t <= len2
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelPolygonSet {
    pub polygons: Vec<LabelPolygon>,
}

impl LabelPolygonSet {
    /// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon features
    /// carrying a `"class"` property.
    pub fn from_geojson(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(Error::Labels("expected a FeatureCollection".into()));
        }
        let features = root
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Labels("missing features array".into()))?;
        let mut polygons = Vec::new();
        for feature in features {
            let class = feature
                .pointer("/properties/class")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Labels("feature without a class property".into()))?;
            let class = LabelClass::parse(class)?;
            let geometry = feature
                .get("geometry")
                .ok_or_else(|| Error::Labels("feature without geometry".into()))?;
            let coords = geometry
                .get("coordinates")
                .ok_or_else(|| Error::Labels("geometry without coordinates".into()))?;
            match geometry.get("type").and_then(Value::as_str) {
                Some("Polygon") => polygons.push(LabelPolygon::new(class, parse_rings(coords)?)?),
                Some("MultiPolygon") => {
                    for poly in coords
                        .as_array()
                        .ok_or_else(|| Error::Labels("bad MultiPolygon".into()))?
                    {
                        polygons.push(LabelPolygon::new(class, parse_rings(poly)?)?);
                    }
                }
                other => {
                    return Err(Error::Labels(format!("unsupported geometry {other:?}")));
                }
            }
        }
        Ok(LabelPolygonSet { polygons })
    }

    pub fn to_geojson(&self) -> String {
        let features: Vec<Value> = self
            .polygons
            .iter()
            .map(|p| {
                let rings: Vec<Vec<[f64; 2]>> = p
                    .rings
                    .iter()
                    .map(|r| {
                        let mut ring: Vec<[f64; 2]> = r.iter().map(|&(x, y)| [x, y]).collect();
                        ring.push(ring[0]);
                        ring
                    })
                    .collect();
                json!({
                    "type": "Feature",
                    "properties": { "class": p.class.name() },
                    "geometry": { "type": "Polygon", "coordinates": rings },
                })
            })
            .collect();
        let doc = json!({ "type": "FeatureCollection", "features": features });
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }
}

fn parse_rings(coords: &Value) -> Result<Vec<Vec<(f64, f64)>>> {
    let bad = || Error::Labels("malformed polygon coordinates".into());
    coords
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| {
                    let pt = pt.as_array().ok_or_else(bad)?;
                    match (pt.first().and_then(Value::as_f64), pt.get(1).and_then(Value::as_f64)) {
                        (Some(x), Some(y)) => Ok((x, y)),
                        _ => Err(bad()),
                    }
                })
                .collect()
        })
        .collect()
}

/// Per-pixel class bitset; SMOKE and FIRE may co-occur.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl LabelRaster {
    pub const UNLABELED: u8 = 0;
    pub const SMOKE: u8 = 1;
    pub const FIRE: u8 = 2;
    pub const SMOKE_BG: u8 = 4;
    pub const FIRE_BG: u8 = 8;

    pub fn empty(width: usize, height: usize) -> Self {
        LabelRaster {
            width,
            height,
            bits: vec![Self::UNLABELED; width * height],
        }
    }

    pub fn has(&self, pixel: usize, class: LabelClass) -> bool {
        self.bits[pixel] & class.bit() != 0
    }

    pub fn count(&self, class: LabelClass) -> usize {
        self.bits.iter().filter(|b| *b & class.bit() != 0).count()
    }
}

/// Sets the bit of class `c` on every pixel whose center lies in a polygon of class `c`.
pub fn rasterize_polygons(labels: &LabelPolygonSet, scene: &RasterScene) -> Result<LabelRaster> {
    let gt = scene.geotransform();
    if !gt.is_invertible() {
        return Err(Error::NonInvertible);
    }
    let (w, h) = (scene.width(), scene.height());
    // pixel-space bounding rows/cols per polygon, to skip far pixels
    let boxes: Vec<(usize, usize, usize, usize)> = labels
        .polygons
        .iter()
        .map(|p| {
            let (x0, y0, x1, y1) = p.bounds();
            let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
            let mut cmin = f64::INFINITY;
            let mut cmax = f64::NEG_INFINITY;
            let mut rmin = f64::INFINITY;
            let mut rmax = f64::NEG_INFINITY;
            for (x, y) in corners {
                let (c, r) = gt.invert(x, y).expect("checked invertible");
                cmin = cmin.min(c);
                cmax = cmax.max(c);
                rmin = rmin.min(r);
                rmax = rmax.max(r);
            }
            let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
            (
                clamp((rmin - 1.0).floor(), h),
                clamp((rmax + 1.0).ceil(), h),
                clamp((cmin - 1.0).floor(), w),
                clamp((cmax + 1.0).ceil(), w),
            )
        })
        .collect();

    let rows = par::map_indexed(h, |r| {
        let mut row = vec![LabelRaster::UNLABELED; w];
        for (poly, &(r0, r1, c0, c1)) in labels.polygons.iter().zip(&boxes) {
            if r < r0 || r >= r1 {
                continue;
            }
            for (c, bits) in row.iter_mut().enumerate().take(c1).skip(c0) {
                let (x, y) = gt.pixel_center(r, c);
                if poly.contains(x, y) {
                    *bits |= poly.class.bit();
                }
            }
        }
        row
    });
    Ok(LabelRaster {
        width: w,
        height: h,
        bits: rows.concat(),
    })
}
