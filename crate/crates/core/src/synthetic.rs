//! Seeded synthetic multispectral scenes with clouds, smoke plumes and fire
//! hot spots, plus per-class ground truth.
//!
//! Object placement draws from stream 1 of the `SceneSpec` seed and sensor noise for
//! sequence step `s` from stream `1000 + s` (see [`crate::rng`]), so a
//! one-step sequence reproduces [`generate_scene`] exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fusion::RetrievalGrid;
use crate::rng::{derive_seed, seeded};
use crate::scene::{GeoTransform, GridGeometry, RasterScene, DEFAULT_NODATA};
use crate::{Error, Result};

/// Minimum angle between any two class signature vectors.
pub const MIN_SIGNATURE_ANGLE_DEG: f64 = 15.0;
/// Plume pixels count as smoke above this opacity.
pub const SMOKE_OPACITY: f64 = 0.5;

/// Mean per-band amplitudes of each class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signatures {
    pub background: Vec<f64>,
    /// Relative amplitude of the smooth background gradient.
    pub background_gradient: f64,
    pub cloud: Vec<f64>,
    pub plume: Vec<f64>,
    /// Thermal-band value of burning pixels.
    pub fire_thermal: f64,
}

impl Signatures {
    /// Land-like rising background, flat bright cold clouds, smoke falling
    /// off towards longer wavelengths. The last band is thermal when
    /// `thermal` is set.
    pub fn defaults(band_count: usize, thermal: bool) -> Self {
        let visible = if thermal { band_count - 1 } else { band_count };
        let x = |i: usize| if visible > 1 { i as f64 / (visible - 1) as f64 } else { 0.0 };
        let mut background: Vec<f64> = (0..visible).map(|i| 0.15 + 0.25 * x(i)).collect();
        let mut cloud: Vec<f64> = (0..visible).map(|i| 0.85 - 0.05 * x(i)).collect();
        let mut plume: Vec<f64> = (0..visible).map(|i| 0.7 - 0.5 * x(i)).collect();
        if thermal {
            background.push(0.5);
            cloud.push(0.1);
            plume.push(0.45);
        }
        Signatures {
            background,
            background_gradient: 0.3,
            cloud,
            plume,
            fire_thermal: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub band_count: usize,
    /// Last band carries the fire signature; TEMPO-like specs turn it off.
    pub thermal_band: bool,
    pub n_clouds: usize,
    pub n_plumes: usize,
    pub n_fires: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Filled from [`Signatures::defaults`] when absent.
    pub signatures: Option<Signatures>,
    /// Inclusive pixel-count range of each fire blob.
    pub fire_pixels: (usize, usize),
    pub pixel_size: f64,
    pub start_timestamp: i64,
    /// Seconds between sequence steps.
    pub time_step: i64,
    pub sensor_id: String,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            band_count: 6,
            thermal_band: true,
            n_clouds: 2,
            n_plumes: 2,
            n_fires: 2,
            noise_sigma: 0.05,
            seed: 0,
            signatures: None,
            fire_pixels: (1, 4),
            pixel_size: 1.0,
            start_timestamp: 1_721_998_800,
            time_step: 600,
            sensor_id: "synthetic".into(),
        }
    }
}

impl SceneSpec {
    pub fn signatures(&self) -> Signatures {
        self.signatures
            .clone()
            .unwrap_or_else(|| Signatures::defaults(self.band_count, self.thermal_band))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return fail("scene dimensions must be positive".into());
        }
        if self.band_count < 3 {
            return fail(format!("need at least 3 bands, got {}", self.band_count));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and >= 0".into());
        }
        if self.n_fires > 0 && !self.thermal_band {
            return fail("fires need a thermal band".into());
        }
        let (lo, hi) = self.fire_pixels;
        if lo == 0 || lo > hi {
            return fail(format!("bad fire_pixels range {:?}", self.fire_pixels));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return fail("pixel_size must be positive".into());
        }
        let sig = self.signatures();
        let vectors = class_vectors(&sig, self.band_count, self.thermal_band);
        if vectors.iter().any(|v| v.len() != self.band_count) {
            return fail("signature length differs from band_count".into());
        }
        if vectors.iter().flatten().any(|v| !v.is_finite())
            || !sig.fire_thermal.is_finite()
            || !sig.background_gradient.is_finite()
        {
            return fail("signature amplitudes must be finite".into());
        }
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                let a = angle_deg(&vectors[i], &vectors[j]);
                if !(a >= MIN_SIGNATURE_ANGLE_DEG) {
                    return fail(format!(
                        "class signatures {i} and {j} are only {a:.2} degrees apart"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(
            self.width,
            self.height,
            GeoTransform::scaled(0.0, 0.0, self.pixel_size),
        )
    }
}

/// Background, cloud, plume and fire signature vectors.
fn class_vectors(sig: &Signatures, bands: usize, thermal: bool) -> Vec<Vec<f64>> {
    let mut fire = vec![0.0; bands];
    if thermal && bands > 0 {
        fire[bands - 1] = sig.fire_thermal;
    }
    let mut v = vec![sig.background.clone(), sig.cloud.clone(), sig.plume.clone()];
    if thermal {
        v.push(fire);
    }
    v
}

pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub smoke: Vec<bool>,
    pub fire: Vec<bool>,
    pub cloud: Vec<bool>,
}

impl GroundTruth {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        GroundTruth {
            width,
            height,
            smoke: vec![false; n],
            fire: vec![false; n],
            cloud: vec![false; n],
        }
    }
}

#[derive(Debug, Clone)]
struct Plume {
    origin: (f64, f64),
    dir: (f64, f64),
    length: f64,
    /// Length before any sequence growth; fixes the widening profile.
    base_length: f64,
    width: f64,
}

impl Plume {
    /// Opacity at pixel center (x, y): 0.9 at the source ramping linearly to
    /// 0.4 at the tip, Gaussian across the axis and past either end.
    fn opacity(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.origin.0, y - self.origin.1);
        let along = dx * self.dir.0 + dy * self.dir.1;
        let across = -dx * self.dir.1 + dy * self.dir.0;
        let t = along / self.length;
        let tc = t.clamp(0.0, 1.0);
        let ramp = 0.9 - 0.5 * tc;
        let sigma = self.width * (0.75 + 0.5 * (along / self.base_length).clamp(0.0, 1.0));
        let overshoot = if t < 0.0 {
            along
        } else if t > 1.0 {
            along - self.length
        } else {
            0.0
        };
        ramp * (-0.5 * (across / sigma).powi(2)).exp() * (-0.5 * (overshoot / sigma).powi(2)).exp()
    }
}

#[derive(Debug, Clone)]
struct Cloud {
    center: (f64, f64),
    axes: (f64, f64),
    angle: f64,
}

impl Cloud {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone)]
struct Layout {
    gradient_dir: (f64, f64),
    plumes: Vec<Plume>,
    clouds: Vec<Cloud>,
    /// Pixel offsets of each fire blob relative to its anchor, plus the anchor.
    fires: Vec<((f64, f64), Vec<(i64, i64)>)>,
}

fn sample_layout(spec: &SceneSpec) -> Layout {
    let mut rng = seeded(derive_seed(spec.seed, 1));
    let (w, h) = (spec.width as f64, spec.height as f64);
    let size = w.min(h);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gradient_dir = (theta.cos(), theta.sin());

    let margin = 0.08 * size;
    let mut plumes = Vec::with_capacity(spec.n_plumes);
    for _ in 0..spec.n_plumes {
        let length = rng.random_range(0.35 * size..0.5 * size);
        let width = length / rng.random_range(6.0..8.0);
        let mut plume = None;
        for _ in 0..100 {
            let origin = (rng.random_range(margin..w - margin), rng.random_range(margin..h - margin));
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = (a.cos(), a.sin());
            let tip = (origin.0 + length * dir.0, origin.1 + length * dir.1);
            let candidate = Plume {
                origin,
                dir,
                length,
                base_length: length,
                width,
            };
            plume = Some(candidate);
            if tip.0 > margin && tip.0 < w - margin && tip.1 > margin && tip.1 < h - margin {
                break;
            }
        }
        plumes.push(plume.expect("at least one attempt"));
    }

    let mut clouds = Vec::with_capacity(spec.n_clouds);
    for _ in 0..spec.n_clouds {
        let mut cloud = None;
        for _ in 0..200 {
            let axes = (
                rng.random_range(0.06 * size..0.12 * size),
                rng.random_range(0.05 * size..0.1 * size),
            );
            let center = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let candidate = Cloud {
                center,
                axes,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            };
            // keep clear of plumes so smoke stays visible
            let reach = axes.0.max(axes.1) + 3.0;
            let clear = plumes.iter().all(|p| {
                segment_distance(center, p) > reach + 2.0 * p.width
            });
            cloud = Some(candidate);
            if clear {
                break;
            }
        }
        clouds.push(cloud.expect("at least one attempt"));
    }

    let mut fires = Vec::with_capacity(spec.n_fires);
    for i in 0..spec.n_fires {
        let anchor = if plumes.is_empty() {
            (rng.random_range(0.0..w), rng.random_range(0.0..h))
        } else {
            plumes[i % plumes.len()].origin
        };
        let count = rng.random_range(spec.fire_pixels.0..=spec.fire_pixels.1);
        let mut blob: Vec<(i64, i64)> = vec![(0, 0)];
        while blob.len() < count {
            let (br, bc) = blob[rng.random_range(0..blob.len())];
            let (dr, dc) = [(0, 1), (1, 0), (0, -1), (-1, 0)][rng.random_range(0..4)];
            let next = (br + dr, bc + dc);
            if !blob.contains(&next) {
                blob.push(next);
            }
        }
        fires.push((anchor, blob));
    }

    Layout {
        gradient_dir,
        plumes,
        clouds,
        fires,
    }
}

fn segment_distance(p: (f64, f64), plume: &Plume) -> f64 {
    let (dx, dy) = (p.0 - plume.origin.0, p.1 - plume.origin.1);
    let t = (dx * plume.dir.0 + dy * plume.dir.1).clamp(0.0, plume.length);
    let (cx, cy) = (plume.origin.0 + t * plume.dir.0, plume.origin.1 + t * plume.dir.1);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render(spec: &SceneSpec, layout: &Layout, step: usize, advection: (f64, f64)) -> Result<(RasterScene, GroundTruth)> {
    let sig = spec.signatures();
    let (w, h, bands) = (spec.width, spec.height, spec.band_count);
    let plane = w * h;
    let shift = (advection.0 * step as f64, advection.1 * step as f64);
    let growth = 1.05f64.powi(step as i32);
    let plumes: Vec<Plume> = layout
        .plumes
        .iter()
        .map(|p| Plume {
            origin: (p.origin.0 + shift.0, p.origin.1 + shift.1),
            length: p.length * growth,
            ..p.clone()
        })
        .collect();
    let clouds: Vec<Cloud> = layout
        .clouds
        .iter()
        .map(|c| Cloud {
            center: (c.center.0 + shift.0, c.center.1 + shift.1),
            ..c.clone()
        })
        .collect();

    let mut truth = GroundTruth::empty(w, h);
    for (anchor, blob) in &layout.fires {
        let (ac, ar) = (
            (anchor.0 + shift.0).floor() as i64,
            (anchor.1 + shift.1).floor() as i64,
        );
        for (dr, dc) in blob {
            let (r, c) = (ar + dr, ac + dc);
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                truth.fire[r as usize * w + c as usize] = true;
            }
        }
    }

    let mut data = vec![0.0f32; plane * bands];
    let mut noise = seeded(derive_seed(spec.seed, 1000 + step as u64));
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let extent = w.max(h) as f64;
    let mut pixel = vec![0.0f64; bands];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let p = r * w + c;
            let g = ((x - cx) * layout.gradient_dir.0 + (y - cy) * layout.gradient_dir.1) / extent;
            for (b, v) in pixel.iter_mut().enumerate() {
                *v = sig.background[b] * (1.0 + sig.background_gradient * g);
            }
            // plumes composite over the background
            let mut transmitted = 1.0;
            for plume in &plumes {
                let a = plume.opacity(x, y);
                if a > 1e-6 {
                    for (b, v) in pixel.iter_mut().enumerate() {
                        *v = (1.0 - a) * *v + a * sig.plume[b];
                    }
                    transmitted *= 1.0 - a;
                }
            }
            let cloudy = !truth.fire[p] && clouds.iter().any(|cl| cl.contains(x, y));
            if cloudy {
                pixel.copy_from_slice(&sig.cloud);
                truth.cloud[p] = true;
            } else if 1.0 - transmitted > SMOKE_OPACITY {
                truth.smoke[p] = true;
            }
            if truth.fire[p] {
                pixel[bands - 1] = sig.fire_thermal;
            }
            for (b, v) in pixel.iter().enumerate() {
                let n: f64 = StandardNormal.sample(&mut noise);
                data[b * plane + p] = (v + spec.noise_sigma * n) as f32;
            }
        }
    }

    let geometry = spec.geometry();
    let mut scene = RasterScene::new(w, h, bands, data, geometry.geotransform, DEFAULT_NODATA)?
        .with_metadata(
            spec.start_timestamp + spec.time_step * step as i64,
            spec.sensor_id.clone(),
        );
    let names = (0..bands)
        .map(|b| {
            if spec.thermal_band && b == bands - 1 {
                "thermal".to_string()
            } else {
                format!("vis{b}")
            }
        })
        .collect();
    scene.set_band_names(names)?;
    Ok((scene, truth))
}

pub fn generate_scene(spec: &SceneSpec) -> Result<(RasterScene, GroundTruth)> {
    spec.validate()?;
    render(spec, &sample_layout(spec), 0, (0.0, 0.0))
}

/// Objects drift by `advection` pixels per step and plumes lengthen 5% per step.
pub fn generate_sequence(
    spec: &SceneSpec,
    steps: usize,
    advection: (f64, f64),
) -> Result<Vec<(RasterScene, GroundTruth)>> {
    spec.validate()?;
    if steps == 0 {
        return Err(Error::Invalid("sequence needs at least one step".into()));
    }
    let layout = sample_layout(spec);
    (0..steps)
        .map(|s| render(spec, &layout, s, advection))
        .collect()
}

/// Trace-gas style retrieval over a generated scene: elevated columns inside
/// smoke, and a cloud-fraction estimate that reads thick smoke as cloud.
pub fn synthetic_retrieval(truth: &GroundTruth, geometry: GridGeometry, seed: u64) -> RetrievalGrid {
    let mut rng = seeded(derive_seed(seed, 7));
    let n = truth.width * truth.height;
    let mut values = Vec::with_capacity(n);
    let mut cloud_fraction = Vec::with_capacity(n);
    for p in 0..n {
        let base = if truth.smoke[p] { 4.0 } else { 1.0 };
        values.push((base + 0.1 * rng.random::<f64>()) as f32);
        let cf: f64 = if truth.cloud[p] {
            rng.random_range(0.6..1.0)
        } else if truth.smoke[p] {
            rng.random_range(0.25..0.6)
        } else {
            rng.random_range(0.0..0.15)
        };
        cloud_fraction.push(cf as f32);
    }
    RetrievalGrid {
        geometry,
        values,
        cloud_fraction,
        valid: vec![true; n],
    }
}
