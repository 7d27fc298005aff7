//! Mask scoring against a reference: SSIM plus confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use crate::context::BinaryMask;
use crate::par;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Invalid(format!("SSIM window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.gaussian_sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(Error::Invalid("SSIM sigma and dynamic range must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / total).collect()
    }
}

/// Mean SSIM over every position where the full window fits inside the grid.
/// Grids are row-major with the given width.
pub fn ssim(a: &[f64], b: &[f64], width: usize, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if a.len() != b.len() {
        return Err(Error::Shape(format!("SSIM inputs differ in size: {} vs {}", a.len(), b.len())));
    }
    if width == 0 || a.len() % width != 0 {
        return Err(Error::Shape(format!("grid of {} values is not a multiple of width {width}", a.len())));
    }
    let height = a.len() / width;
    let win = params.window;
    if width < win || height < win {
        return Err(Error::Shape(format!("{width}x{height} grid is smaller than the {win}x{win} window")));
    }
    let kernel = params.kernel();
    let out_w = width - win + 1;
    let out_h = height - win + 1;

    // Horizontal pass over each input row: filtered a, b, a², b², ab.
    let horizontal: Vec<[Vec<f64>; 5]> = par::map_indexed(height, |r| {
        let ra = &a[r * width..(r + 1) * width];
        let rb = &b[r * width..(r + 1) * width];
        let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; out_w]);
        for c in 0..out_w {
            let mut s = [0.0f64; 5];
            for (t, &w) in kernel.iter().enumerate() {
                let x = ra[c + t];
                let y = rb[c + t];
                s[0] += w * x;
                s[1] += w * y;
                s[2] += w * (x * x);
                s[3] += w * (y * y);
                s[4] += w * (x * y);
            }
            for (o, v) in out.iter_mut().zip(s) {
                o[c] = v;
            }
        }
        out
    });

    let c1 = params.c1();
    let c2 = params.c2();
    let row_sums: Vec<f64> = par::map_indexed(out_h, |r| {
        let mut total = 0.0;
        for c in 0..out_w {
            let mut s = [0.0f64; 5];
            for (t, &w) in kernel.iter().enumerate() {
                let h = &horizontal[r + t];
                for (acc, plane) in s.iter_mut().zip(h.iter()) {
                    *acc += w * plane[c];
                }
            }
            total += local_ssim(s, c1, c2);
        }
        total
    });
    let sum: f64 = row_sums.iter().sum();
    Ok(sum / (out_w * out_h) as f64)
}

/// Local SSIM from windowed first and second moments `[µa, µb, E a², E b², E ab]`.
/// Written so that swapping a and b gives a bit-identical result.
fn local_ssim(m: [f64; 5], c1: f64, c2: f64) -> f64 {
    let [mu_a, mu_b, ea2, eb2, eab] = m;
    let var_a = ea2 - mu_a * mu_a;
    let var_b = eb2 - mu_b * mu_b;
    let cov = eab - mu_a * mu_b;
    let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    num / den
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn n_valid(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `tp / (tp + fp)`; with no predicted positives this is 1 when the
    /// reference is also empty and 0 otherwise.
    pub fn precision(&self) -> f64 {
        ratio_or_convention(self.tp, self.tp + self.fp, self.fn_ == 0)
    }

    /// `tp / (tp + fn)`; with no reference positives this is 1 when the
    /// mask is also empty and 0 otherwise.
    pub fn recall(&self) -> f64 {
        ratio_or_convention(self.tp, self.tp + self.fn_, self.fp == 0)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// `tp / (tp + fp + fn)`, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        ratio_or_convention(self.tp, self.tp + self.fp + self.fn_, true)
    }
}

fn ratio_or_convention(num: usize, den: usize, empty_ok: bool) -> f64 {
    if den == 0 {
        if empty_ok {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Counts over pixels valid in both masks.
pub fn confusion(mask: &BinaryMask, reference: &BinaryMask) -> Result<Confusion> {
    check_dims(mask, reference)?;
    let mut c = Confusion::default();
    for p in 0..mask.values().len() {
        if !(mask.valid()[p] && reference.valid()[p]) {
            continue;
        }
        match (mask.values()[p], reference.values()[p]) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "mask is {}x{}, reference {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub target: String,
    pub reference: String,
    pub ssim: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub n_valid: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "scene,target,reference,ssim,precision,recall,f1,iou,tp,fp,fn,tn,n_valid";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{}",
            self.scene,
            self.target,
            self.reference,
            self.ssim,
            self.precision,
            self.recall,
            self.f1,
            self.iou,
            self.tp,
            self.fp,
            self.fn_,
            self.tn,
            self.n_valid
        )
    }
}

/// SSIM on the masks as 0/1 floats (pixels not valid in both set to 0)
/// together with the confusion metrics.
pub fn evaluate_pair(mask: &BinaryMask, reference: &BinaryMask, params: &SsimParams) -> Result<EvalReport> {
    let c = confusion(mask, reference)?;
    let both = |m: &BinaryMask| -> Vec<f64> {
        (0..m.values().len())
            .map(|p| {
                let ok = mask.valid()[p] && reference.valid()[p];
                if ok && m.values()[p] {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    let s = ssim(&both(mask), &both(reference), mask.width, params)?;
    Ok(EvalReport {
        scene: mask.provenance.scene_id.clone(),
        target: mask.target.map_or_else(String::new, |t| t.name().to_string()),
        reference: String::new(),
        ssim: s,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        iou: c.iou(),
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
        tn: c.tn,
        n_valid: c.n_valid(),
    })
}

/// Unweighted mean SSIM over per-scene reports.
pub fn mean_ssim(reports: &[EvalReport]) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    Some(reports.iter().map(|r| r.ssim).sum::<f64>() / reports.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(values: Vec<bool>, w: usize) -> BinaryMask {
        let h = values.len() / w;
        BinaryMask::from_values(w, h, values).unwrap()
    }

    #[test]
    fn constant_grids_closed_form() {
        let p = SsimParams::default();
        let a = vec![0.0; 16 * 16];
        let b = vec![1.0; 16 * 16];
        let got = ssim(&a, &b, 16, &p).unwrap();
        let c1 = p.c1();
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((got - 9.999e-5).abs() < 1e-7);
    }

    #[test]
    fn identity_and_symmetry() {
        let a: Vec<f64> = (0..400).map(|i| ((i * 37 % 101) as f64) / 100.0).collect();
        let b: Vec<f64> = (0..400).map(|i| ((i * 53 % 89) as f64) / 88.0).collect();
        let p = SsimParams::default();
        assert!((ssim(&a, &a, 20, &p).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b, 20, &p).unwrap(), ssim(&b, &a, 20, &p).unwrap());
    }

    #[test]
    fn ssim_errors() {
        let p = SsimParams::default();
        assert!(ssim(&[0.0; 100], &[0.0; 99], 10, &p).is_err());
        assert!(ssim(&[0.0; 100], &[0.0; 100], 10, &p).is_err());
        let bad = SsimParams { window: 4, ..p };
        assert!(ssim(&[0.0; 400], &[0.0; 400], 20, &bad).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = mask(vec![true, true, false, false], 2);
        let c = confusion(&m, &m).unwrap();
        assert_eq!((c.precision(), c.recall(), c.iou()), (1.0, 1.0, 1.0));

        let empty = mask(vec![false; 4], 2);
        let c = confusion(&empty, &empty).unwrap();
        assert_eq!((c.precision(), c.recall()), (1.0, 1.0));

        let all = mask(vec![true; 4], 2);
        let c = confusion(&all, &m).unwrap();
        assert_eq!((c.precision(), c.recall()), (0.5, 1.0));
        assert_eq!(c.n_valid(), 4);

        let c = confusion(&empty, &m).unwrap();
        assert_eq!((c.precision(), c.recall()), (0.0, 0.0));
        assert!(confusion(&m, &mask(vec![true; 6], 3)).is_err());
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let a = BinaryMask::new(2, 1, vec![true, true], vec![true, false]).unwrap();
        let b = BinaryMask::from_values(2, 1, vec![false, true]).unwrap();
        let c = confusion(&a, &b).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0, 1, 0, 0));
    }

    #[test]
    fn evaluate_pair_examples() {
        let values: Vec<bool> = (0..256).map(|i| (i / 16) < 8).collect();
        let m = mask(values.clone(), 16);
        let r = evaluate_pair(&m, &m, &SsimParams::default()).unwrap();
        assert!((r.ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.f1, 1.0);
        let comp = mask(values.iter().map(|v| !v).collect(), 16);
        let r = evaluate_pair(&m, &comp, &SsimParams::default()).unwrap();
        assert_eq!(r.iou, 0.0);
        assert_eq!(r.csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }
}
