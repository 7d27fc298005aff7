//! Maps leaf clusters to smoke/fire using sparse high-certainty labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::iic::{HierarchicalLabelMap, NO_LABEL};
use crate::scene::{GridGeometry, LabelClass, LabelRaster, RasterScene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Smoke,
    Fire,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Smoke, Target::Fire];

    pub fn class(self) -> LabelClass {
        match self {
            Target::Smoke => LabelClass::Smoke,
            Target::Fire => LabelClass::Fire,
        }
    }

    /// The background set labeled specifically for this target.
    pub fn background(self) -> LabelClass {
        match self {
            Target::Smoke => LabelClass::SmokeBackground,
            Target::Fire => LabelClass::FireBackground,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Smoke => "smoke",
            Target::Fire => "fire",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub tree_id: String,
}

/// Binary product on a grid. A pixel can only be set where it is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    values: Vec<bool>,
    valid: Vec<bool>,
    pub target: Option<Target>,
    pub provenance: Provenance,
    pub timestamp: i64,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Shape(format!("mask buffers do not match {width}x{height}")));
        }
        let values = values.iter().zip(&valid).map(|(v, ok)| *v && *ok).collect();
        Ok(BinaryMask {
            width,
            height,
            values,
            valid,
            target: None,
            provenance: Provenance::default(),
            timestamp: 0,
        })
    }

    /// All pixels valid.
    pub fn from_values(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        BinaryMask::new(width, height, values, vec![true; width * height])
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }

    /// 0/1 floats, invalid pixels as 0.
    pub fn to_unit_grid(&self) -> Vec<f64> {
        self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_raster(&self, geometry: GridGeometry) -> Result<RasterScene> {
        let plane: Vec<f32> = self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let mut r = RasterScene::from_plane(geometry, &plane, &self.valid)?;
        r.timestamp = self.timestamp;
        r.sensor_id = self.provenance.scene_id.clone();
        Ok(r)
    }

    /// Reads band 0 of a raster; values above 0.5 are set.
    pub fn from_raster(raster: &RasterScene) -> Result<Self> {
        let values = raster.band(0).iter().map(|&v| v > 0.5).collect();
        let mut m = BinaryMask::new(raster.width(), raster.height(), values, raster.valid().to_vec())?;
        m.timestamp = raster.timestamp;
        m.provenance.scene_id = raster.sensor_id.clone();
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafCounts {
    pub smoke: usize,
    pub fire: usize,
    pub smoke_background: usize,
    pub fire_background: usize,
    pub unlabeled: usize,
    /// Every pixel of the leaf within the label raster.
    pub pixels: usize,
}

impl LeafCounts {
    pub fn count(&self, class: LabelClass) -> usize {
        match class {
            LabelClass::Smoke => self.smoke,
            LabelClass::Fire => self.fire,
            LabelClass::SmokeBackground => self.smoke_background,
            LabelClass::FireBackground => self.fire_background,
        }
    }

    fn add(&mut self, other: &LeafCounts) {
        self.smoke += other.smoke;
        self.fire += other.fire;
        self.smoke_background += other.smoke_background;
        self.fire_background += other.fire_background;
        self.unlabeled += other.unlabeled;
        self.pixels += other.pixels;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterClassHistogram {
    pub leaves: BTreeMap<i64, LeafCounts>,
}

impl ClusterClassHistogram {
    /// Pools counts from another scene.
    pub fn merge(&mut self, other: &ClusterClassHistogram) {
        for (leaf, counts) in &other.leaves {
            self.leaves.entry(*leaf).or_default().add(counts);
        }
    }
}

/// Counts, per leaf, the labeled pixels of each class. A pixel carrying
/// several class bits counts towards each of them.
pub fn build_histogram(label_map: &HierarchicalLabelMap, labels: &LabelRaster) -> Result<ClusterClassHistogram> {
    if label_map.width != labels.width || label_map.height != labels.height {
        return Err(Error::Shape(format!(
            "label map is {}x{}, label raster {}x{}",
            label_map.width, label_map.height, labels.width, labels.height
        )));
    }
    let mut hist = ClusterClassHistogram::default();
    for (p, &leaf) in label_map.leaf.iter().enumerate() {
        if leaf == NO_LABEL {
            continue;
        }
        let entry = hist.leaves.entry(leaf).or_default();
        entry.pixels += 1;
        let bits = labels.bits[p];
        if bits == LabelRaster::UNLABELED {
            entry.unlabeled += 1;
            continue;
        }
        for class in LabelClass::ALL {
            if bits & class.bit() != 0 {
                match class {
                    LabelClass::Smoke => entry.smoke += 1,
                    LabelClass::Fire => entry.fire += 1,
                    LabelClass::SmokeBackground => entry.smoke_background += 1,
                    LabelClass::FireBackground => entry.fire_background += 1,
                }
            }
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafScore {
    pub leaf: i64,
    pub purity: f64,
    pub support: usize,
}

/// Positive leaves for one target: support `count(target) + count(target
/// background) >= min_support` and purity `count(target) / support >= tau`.
pub fn assign_context(hist: &ClusterClassHistogram, target: Target, tau: f64, min_support: usize) -> Result<Vec<LeafScore>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Invalid(format!("purity threshold must be in (0, 1], got {tau}")));
    }
    let mut positives = Vec::new();
    for (&leaf, counts) in &hist.leaves {
        let hits = counts.count(target.class());
        let support = hits + counts.count(target.background());
        if support == 0 {
            continue;
        }
        let purity = hits as f64 / support as f64;
        if support >= min_support && purity >= tau {
            positives.push(LeafScore { leaf, purity, support });
        }
    }
    Ok(positives)
}

/// Leaf-to-class assignment for every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMap {
    pub tau: f64,
    pub min_support: usize,
    pub smoke: Vec<LeafScore>,
    pub fire: Vec<LeafScore>,
}

impl ContextMap {
    pub fn build(hist: &ClusterClassHistogram, tau: f64, min_support: usize) -> Result<Self> {
        Ok(ContextMap {
            tau,
            min_support,
            smoke: assign_context(hist, Target::Smoke, tau, min_support)?,
            fire: assign_context(hist, Target::Fire, tau, min_support)?,
        })
    }

    pub fn positives(&self, target: Target) -> &[LeafScore] {
        match target {
            Target::Smoke => &self.smoke,
            Target::Fire => &self.fire,
        }
    }

    pub fn purity(&self, target: Target, leaf: i64) -> Option<f64> {
        self.positives(target).iter().find(|s| s.leaf == leaf).map(|s| s.purity)
    }

    pub fn is_positive_any(&self, leaf: i64) -> bool {
        Target::ALL.iter().any(|&t| self.purity(t, leaf).is_some())
    }
}

/// Pixels whose leaf is positive for `target`. Pixels without a leaf are invalid.
pub fn apply_context(label_map: &HierarchicalLabelMap, positives: &[LeafScore], target: Target) -> BinaryMask {
    let valid: Vec<bool> = label_map.leaf.iter().map(|&l| l != NO_LABEL).collect();
    let values = label_map
        .leaf
        .iter()
        .map(|&l| l != NO_LABEL && positives.iter().any(|s| s.leaf == l))
        .collect();
    let mut mask = BinaryMask::new(label_map.width, label_map.height, values, valid).expect("dims from label map");
    mask.target = Some(target);
    mask
}

/// Purity of each pixel's leaf for the target; 0 for negative leaves and
/// for pixels without a leaf.
pub fn soft_scores(label_map: &HierarchicalLabelMap, positives: &[LeafScore]) -> Vec<f64> {
    label_map
        .leaf
        .iter()
        .map(|&l| {
            positives
                .iter()
                .find(|s| s.leaf == l && l != NO_LABEL)
                .map_or(0.0, |s| s.purity)
        })
        .collect()
}

/// Leaf labels kept only where the leaf is positive for some target;
/// [`NO_LABEL`] elsewhere.
pub fn context_subset(label_map: &HierarchicalLabelMap, context: &ContextMap) -> Vec<i64> {
    label_map
        .leaf
        .iter()
        .map(|&l| if l != NO_LABEL && context.is_positive_any(l) { l } else { NO_LABEL })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_map(leaf: Vec<i64>, w: usize) -> HierarchicalLabelMap {
        let h = leaf.len() / w;
        let paths = leaf.iter().map(|&l| if l == NO_LABEL { vec![] } else { vec![l as u16] }).collect();
        HierarchicalLabelMap {
            width: w,
            height: h,
            k: 8,
            depth: 1,
            leaf,
            paths,
        }
    }

    fn counts(smoke: usize, smoke_bg: usize, fire: usize, fire_bg: usize) -> ClusterClassHistogram {
        let mut h = ClusterClassHistogram::default();
        h.leaves.insert(
            0,
            LeafCounts {
                smoke,
                fire,
                smoke_background: smoke_bg,
                fire_background: fire_bg,
                unlabeled: 0,
                pixels: smoke + smoke_bg + fire + fire_bg,
            },
        );
        h
    }

    #[test]
    fn histogram_examples() {
        let lm = label_map(vec![3; 10], 5);
        let none = LabelRaster::empty(5, 2);
        let h = build_histogram(&lm, &none).unwrap();
        assert_eq!(h.leaves[&3].smoke + h.leaves[&3].fire, 0);
        assert_eq!(h.leaves[&3].unlabeled, 10);

        let smoke = LabelRaster {
            width: 5,
            height: 2,
            bits: vec![LabelRaster::SMOKE; 10],
        };
        assert_eq!(build_histogram(&lm, &smoke).unwrap().leaves[&3].smoke, 10);

        let mut both = LabelRaster::empty(5, 2);
        both.bits[0] = LabelRaster::SMOKE | LabelRaster::FIRE;
        let h = build_histogram(&lm, &both).unwrap();
        assert_eq!((h.leaves[&3].smoke, h.leaves[&3].fire), (1, 1));

        assert!(build_histogram(&lm, &LabelRaster::empty(2, 5)).is_err());
    }

    #[test]
    fn assignment_examples() {
        let pos = assign_context(&counts(90, 10, 0, 0), Target::Smoke, 0.5, 10).unwrap();
        assert_eq!(pos, vec![LeafScore { leaf: 0, purity: 0.9, support: 100 }]);
        assert!(assign_context(&counts(4, 0, 0, 0), Target::Smoke, 0.5, 10).unwrap().is_empty());
        assert!(assign_context(&counts(0, 0, 50, 0), Target::Smoke, 0.5, 10).unwrap().is_empty());
        assert!(assign_context(&counts(1, 0, 0, 0), Target::Smoke, 0.0, 1).is_err());
        assert!(assign_context(&counts(1, 0, 0, 0), Target::Smoke, 1.5, 1).is_err());
    }

    #[test]
    fn application_examples() {
        let lm = label_map(vec![0, 1, 1, 2, NO_LABEL, 2], 3);
        let empty = apply_context(&lm, &[], Target::Smoke);
        assert_eq!(empty.count(), 0);

        let all: Vec<LeafScore> = (0..3).map(|leaf| LeafScore { leaf, purity: 1.0, support: 5 }).collect();
        let full = apply_context(&lm, &all, Target::Smoke);
        assert_eq!(full.values(), full.valid());
        assert!(!full.valid()[4]);

        let some = [LeafScore { leaf: 1, purity: 0.9, support: 5 }, LeafScore { leaf: 2, purity: 0.6, support: 9 }];
        let m = apply_context(&lm, &some, Target::Smoke);
        assert_eq!(m.count(), 4);
        let scores = soft_scores(&lm, &some);
        assert_eq!(scores, vec![0.0, 0.9, 0.9, 0.6, 0.0, 0.6]);
        let ones = soft_scores(&lm, &all);
        assert_eq!(ones, vec![1.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn raising_tau_never_adds_leaves() {
        let mut h = ClusterClassHistogram::default();
        for leaf in 0..20i64 {
            h.leaves.insert(
                leaf,
                LeafCounts {
                    smoke: (leaf * 7 % 23) as usize,
                    smoke_background: (leaf * 5 % 11) as usize,
                    ..LeafCounts::default()
                },
            );
        }
        let mut prev = usize::MAX;
        for step in 1..=20 {
            let tau = step as f64 / 20.0;
            let n = assign_context(&h, Target::Smoke, tau, 3).unwrap().len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn mask_raster_round_trip() {
        let m = BinaryMask::new(2, 2, vec![true, false, true, true], vec![true, true, false, true]).unwrap();
        assert_eq!(m.count(), 2);
        let g = GridGeometry::new(2, 2, crate::scene::GeoTransform::IDENTITY);
        let back = BinaryMask::from_raster(&m.to_raster(g).unwrap()).unwrap();
        assert_eq!(back.values(), m.values());
        assert_eq!(back.valid(), m.valid());
    }
}
