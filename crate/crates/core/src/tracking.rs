//! Connected-component instances, shape descriptors and greedy IoU tracking.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::context::BinaryMask;
use crate::par;
use crate::{Error, Result};

pub const DEFAULT_IOU_MIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::Invalid(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

/// Horizontal run of pixels `[col, col + len)` on one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub row: usize,
    pub col: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptors {
    pub centroid: (f64, f64),
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
    pub eccentricity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    /// Sorted by row, then column.
    pub runs: Vec<Run>,
    pub area: usize,
    pub centroid: (f64, f64),
    /// (row_min, col_min, row_max, col_max), inclusive.
    pub bbox: (usize, usize, usize, usize),
    pub eccentricity: f64,
    pub timestamp: i64,
}

impl Instance {
    /// Builds an instance from its pixels given as (row, col).
    pub fn from_pixels(id: usize, mut pixels: Vec<(usize, usize)>, timestamp: i64) -> Self {
        assert!(!pixels.is_empty(), "instance needs at least one pixel");
        pixels.sort_unstable();
        pixels.dedup();
        let mut runs: Vec<Run> = Vec::new();
        for &(row, col) in &pixels {
            match runs.last_mut() {
                Some(r) if r.row == row && r.col + r.len == col => r.len += 1,
                _ => runs.push(Run { row, col, len: 1 }),
            }
        }
        let bbox = pixels.iter().fold(
            (usize::MAX, usize::MAX, 0, 0),
            |(r0, c0, r1, c1), &(r, c)| (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
        );
        let mut inst = Instance {
            id,
            runs,
            area: pixels.len(),
            centroid: (0.0, 0.0),
            bbox,
            eccentricity: 0.0,
            timestamp,
        };
        let d = shape_descriptors(&inst);
        inst.centroid = d.centroid;
        inst.eccentricity = d.eccentricity;
        inst
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.runs.iter().flat_map(|r| (r.col..r.col + r.len).map(move |c| (r.row, c)))
    }

    fn bbox_overlaps(&self, other: &Instance) -> bool {
        let (a, b) = (self.bbox, other.bbox);
        a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
    }

    /// Number of shared pixels.
    pub fn intersection(&self, other: &Instance) -> usize {
        if !self.bbox_overlaps(other) {
            return 0;
        }
        let (mut i, mut j, mut shared) = (0, 0, 0);
        while i < self.runs.len() && j < other.runs.len() {
            let (a, b) = (self.runs[i], other.runs[j]);
            if a.row < b.row {
                i += 1;
                continue;
            }
            if b.row < a.row {
                j += 1;
                continue;
            }
            let lo = a.col.max(b.col);
            let hi = (a.col + a.len).min(b.col + b.len);
            shared += hi.saturating_sub(lo);
            if a.col + a.len <= b.col + b.len {
                i += 1;
            } else {
                j += 1;
            }
        }
        shared
    }

    pub fn iou(&self, other: &Instance) -> f64 {
        let inter = self.intersection(other);
        inter as f64 / (self.area + other.area - inter) as f64
    }
}

/// Centroid, second central moments (normalized by area; 20 along rows) and
/// eccentricity `sqrt(1 - lmin / lmax)` of the moment matrix. Collinear
/// shapes get 1, a single pixel 0.
pub fn shape_descriptors(inst: &Instance) -> ShapeDescriptors {
    let n = inst.area as f64;
    let (mut sr, mut sc) = (0.0, 0.0);
    for (r, c) in inst.pixels() {
        sr += r as f64;
        sc += c as f64;
    }
    let centroid = (sr / n, sc / n);
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for (r, c) in inst.pixels() {
        let dr = r as f64 - centroid.0;
        let dc = c as f64 - centroid.1;
        mu20 += dr * dr;
        mu02 += dc * dc;
        mu11 += dr * dc;
    }
    mu20 /= n;
    mu02 /= n;
    mu11 /= n;
    let half_trace = 0.5 * (mu20 + mu02);
    let disc = (0.25 * (mu20 - mu02).powi(2) + mu11 * mu11).sqrt();
    let lmax = half_trace + disc;
    let lmin = (half_trace - disc).max(0.0);
    let eccentricity = if lmax <= 0.0 {
        0.0
    } else {
        (1.0 - lmin / lmax).clamp(0.0, 1.0).sqrt()
    };
    ShapeDescriptors {
        centroid,
        mu20,
        mu02,
        mu11,
        eccentricity,
    }
}

/// Maximal connected sets of set pixels. Ids follow the raster scan order of
/// each component's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Instance> {
    let (w, h) = (mask.width, mask.height);
    let values = mask.values();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !values[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if values[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(Instance::from_pixels(out.len(), pixels, mask.timestamp));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// (prev id, curr id, IoU), in the order they were taken.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_prev: Vec<usize>,
    pub unmatched_curr: Vec<usize>,
}

/// Greedy global matching: repeatedly takes the highest remaining IoU that
/// reaches `iou_min`, ties going to the smaller prev id, then curr id.
/// Results refer to positions in the input slices.
pub fn match_instances(prev: &[Instance], curr: &[Instance], iou_min: f64) -> Result<Matching> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(Error::Invalid(format!("iou_min must be in (0, 1], got {iou_min}")));
    }
    let mut candidates = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in curr.iter().enumerate() {
            let iou = a.iou(b);
            if iou >= iou_min {
                candidates.push((i, j, iou));
            }
        }
    }
    candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_prev = vec![false; prev.len()];
    let mut used_curr = vec![false; curr.len()];
    let mut pairs = Vec::new();
    for (i, j, iou) in candidates {
        if !used_prev[i] && !used_curr[j] {
            used_prev[i] = true;
            used_curr[j] = true;
            pairs.push((i, j, iou));
        }
    }
    let unused = |u: &[bool]| u.iter().enumerate().filter(|(_, &x)| !x).map(|(i, _)| i).collect();
    Ok(Matching {
        pairs,
        unmatched_prev: unused(&used_prev),
        unmatched_curr: unused(&used_curr),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub timestamp: i64,
    pub instance_id: usize,
    pub area: usize,
    pub centroid: (f64, f64),
    pub eccentricity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: usize,
    pub entries: Vec<TrackEntry>,
    pub status: TrackStatus,
}

fn entry(inst: &Instance) -> TrackEntry {
    TrackEntry {
        timestamp: inst.timestamp,
        instance_id: inst.id,
        area: inst.area,
        centroid: inst.centroid,
        eccentricity: inst.eccentricity,
    }
}

/// Frame-by-frame greedy association. Components of all frames are
/// extracted in parallel; the association pass is sequential.
pub fn track_sequence(masks: &[BinaryMask], connectivity: Connectivity, iou_min: f64) -> Result<Vec<Track>> {
    if masks.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::Invalid("mask timestamps must be strictly increasing".into()));
    }
    let frames: Vec<Vec<Instance>> = par::map_slice(masks, |m| connected_components(m, connectivity));
    let mut tracks: Vec<Track> = Vec::new();
    // Index of the track each instance of the previous frame belongs to.
    let mut prev_tracks: Vec<usize> = Vec::new();
    let mut prev: &[Instance] = &[];
    for frame in &frames {
        let m = match_instances(prev, frame, iou_min)?;
        let mut curr_tracks = vec![usize::MAX; frame.len()];
        for &(i, j, _) in &m.pairs {
            let t = prev_tracks[i];
            tracks[t].entries.push(entry(&frame[j]));
            curr_tracks[j] = t;
        }
        for &i in &m.unmatched_prev {
            tracks[prev_tracks[i]].status = TrackStatus::Terminated;
        }
        for &j in &m.unmatched_curr {
            curr_tracks[j] = tracks.len();
            tracks.push(Track {
                track_id: tracks.len(),
                entries: vec![entry(&frame[j])],
                status: TrackStatus::Active,
            });
        }
        prev_tracks = curr_tracks;
        prev = frame;
    }
    Ok(tracks)
}

pub const TRACK_CSV_HEADER: &str = "track_id,timestamp,instance_id,area,centroid_row,centroid_col,eccentricity";

pub fn tracks_to_csv(tracks: &[Track]) -> String {
    let mut s = String::from(TRACK_CSV_HEADER);
    s.push('\n');
    for t in tracks {
        for e in &t.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                t.track_id, e.timestamp, e.instance_id, e.area, e.centroid.0, e.centroid.1, e.eccentricity
            );
        }
    }
    s
}
