//! Recovery-quality metrics: relative reconstruction error, PSNR and SSIM.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

fn same_shape(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("shapes {:?} and {:?} differ", a.dims(), b.dims())));
    }
    Ok(())
}

/// `‖truth − estimate‖_F / ‖truth‖_F`.
pub fn rre(truth: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    same_shape(truth, estimate)?;
    let norm = truth.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Precondition(
            "relative error undefined for a zero reference".into(),
        ));
    }
    let err: f64 = truth
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

pub fn mse(truth: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    same_shape(truth, estimate)?;
    let sum: f64 = truth
        .values()
        .iter()
        .zip(estimate.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / truth.len() as f64)
}

/// `10 log10(peak² / MSE)` in dB; `+inf` when the tensors are equal.
pub fn psnr(truth: &DenseTensor, estimate: &DenseTensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Parameter(format!("peak must be positive, got {peak}")));
    }
    let mse = mse(truth, estimate)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mirror index for symmetric padding (edge sample repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Symmetric-pads a plane to at least the window size in each direction.
fn pad_plane(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h.max(WINDOW), w.max(WINDOW));
    if (ph, pw) == (h, w) {
        return (plane.to_vec(), h, w);
    }
    let (top, left) = (((ph - h) / 2) as isize, ((pw - w) / 2) as isize);
    let mut out = Vec::with_capacity(ph * pw);
    for i in 0..ph {
        let si = reflect(i as isize - top, h);
        for j in 0..pw {
            out.push(plane[si * w + reflect(j as isize - left, w)]);
        }
    }
    (out, ph, pw)
}

/// Separable "valid" filtering with the Gaussian window.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..WINDOW).map(|t| win[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..WINDOW).map(|t| win[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM between two single-channel planes stored row-major.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!("planes do not match {h}x{w}")));
    }
    let (a, ph, pw) = pad_plane(a, h, w);
    let (b, _, _) = pad_plane(b, h, w);
    let win = gaussian_window();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let (mu_a, _, _) = filter_valid(&a, ph, pw, &win);
    let (mu_b, _, _) = filter_valid(&b, ph, pw, &win);
    let (saa, _, _) = filter_valid(&aa, ph, pw, &win);
    let (sbb, _, _) = filter_valid(&bb, ph, pw, &win);
    let (sab, _, _) = filter_valid(&ab, ph, pw, &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1). The first two modes are the image plane; any further
/// modes (channels, frames) are averaged over.
pub fn ssim(truth: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    same_shape(truth, estimate)?;
    let dims = truth.dims();
    let (h, w) = (dims[0], dims[1]);
    let planes: usize = dims[2..].iter().product();
    let mut pa = vec![0.0; h * w];
    let mut pb = vec![0.0; h * w];
    let mut total = 0.0;
    for p in 0..planes {
        for px in 0..h * w {
            pa[px] = truth.values()[px * planes + p];
            pb[px] = estimate.values()[px * planes + p];
        }
        total += ssim_plane(&pa, &pb, h, w)?;
    }
    Ok(total / planes as f64)
}

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub missing_ratio: f64,
    pub rre: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub seconds: f64,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "dataset,missing_ratio,rre,psnr,ssim,seconds,seed";

    pub fn write_csv_row<W: Write>(&self, w: &mut W) -> Result<()> {
        let ssim = self.ssim.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.8},{:.4},{},{:.3},{}",
            self.dataset, self.missing_ratio, self.rre, self.psnr, ssim, self.seconds, self.seed
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorShape;
    use proptest::prelude::*;

    fn tensor(dims: &[usize], values: Vec<f64>) -> DenseTensor {
        DenseTensor::new(TensorShape::new(dims.to_vec()).unwrap(), values).unwrap()
    }

    fn textured(h: usize, w: usize, c: usize) -> DenseTensor {
        let shape = TensorShape::new(vec![h, w, c]).unwrap();
        DenseTensor::from_fn(shape, |i| {
            0.5 + 0.3 * ((i[0] as f64 * 0.4).sin() * (i[1] as f64 * 0.27).cos()) + 0.05 * i[2] as f64
        })
        .unwrap()
    }

    #[test]
    fn rre_examples() {
        let truth = tensor(&[2, 1], vec![3.0, 4.0]);
        assert_eq!(rre(&truth, &truth).unwrap(), 0.0);
        assert_eq!(rre(&truth, &tensor(&[2, 1], vec![0.0, 0.0])).unwrap(), 1.0);
        assert!((rre(&truth, &tensor(&[2, 1], vec![3.0, 0.0])).unwrap() - 0.8).abs() < 1e-15);
        assert!(rre(&tensor(&[2, 1], vec![0.0, 0.0]), &truth).is_err());
        assert!(rre(&truth, &tensor(&[1, 2], vec![3.0, 4.0])).is_err());
    }

    #[test]
    fn psnr_examples() {
        let truth = tensor(&[2, 2], vec![0.0; 4]);
        let off = tensor(&[2, 2], vec![0.1; 4]);
        assert!((psnr(&truth, &off, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let one = tensor(&[2, 2], vec![1.0; 4]);
        assert!(psnr(&truth, &one, 1.0).unwrap().abs() < 1e-12);
        let gain = psnr(&truth, &off, 2.0).unwrap() - psnr(&truth, &off, 1.0).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert_eq!(psnr(&truth, &truth, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identical_is_one() {
        let img = textured(32, 24, 3);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negative_is_low() {
        let img = textured(32, 32, 1);
        let neg = img
            .scale(-1.0)
            .unwrap()
            .add(&DenseTensor::new(img.shape().clone(), vec![1.0; img.len()]).unwrap())
            .unwrap();
        assert!(ssim(&img, &neg).unwrap() < 0.5);
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance_term() {
        for (h, w) in [(20, 20), (5, 7)] {
            let a = tensor(&[h, w], vec![0.3; h * w]);
            let b = tensor(&[h, w], vec![0.7; h * w]);
            let expected = (2.0 * 0.3 * 0.7 + C1) / (0.09 + 0.49 + C1);
            assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_averages_frames() {
        let a = textured(16, 16, 2);
        let mut vals = a.values().to_vec();
        // perturb only channel 1
        for (i, v) in vals.iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = 1.0 - *v;
            }
        }
        let b = DenseTensor::new(a.shape().clone(), vals).unwrap();
        let full = ssim(&a, &b).unwrap();
        let plane = |t: &DenseTensor, c: usize| t.values().iter().skip(c).step_by(2).copied().collect::<Vec<_>>();
        let s0 = ssim_plane(&plane(&a, 0), &plane(&b, 0), 16, 16).unwrap();
        let s1 = ssim_plane(&plane(&a, 1), &plane(&b, 1), 16, 16).unwrap();
        assert!((s0 - 1.0).abs() < 1e-12);
        assert!((full - (s0 + s1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_row_format() {
        let r = MetricReport {
            dataset: "synthetic".into(),
            missing_ratio: 0.9,
            rre: 0.0123,
            psnr: 31.5,
            ssim: None,
            seconds: 1.5,
            seed: 7,
        };
        let mut buf = Vec::new();
        r.write_csv_row(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "synthetic,0.9,0.01230000,31.5000,,1.500,7\n"
        );
    }

    proptest! {
        #[test]
        fn rre_is_homogeneous(alpha in -5.0f64..5.0, seed in 0u64..1000) {
            let truth = tensor(&[3, 4], (0..12).map(|i| ((i as u64 * 31 + seed) % 17) as f64 + 1.0).collect());
            let delta: Vec<f64> = (0..12).map(|i| ((i as u64 * 7 + seed) % 5) as f64 - 2.0).collect();
            let est = |a: f64| tensor(&[3, 4], truth.values().iter().zip(&delta).map(|(t, d)| t + a * d).collect());
            let base = rre(&truth, &est(1.0)).unwrap();
            prop_assert!((rre(&truth, &est(alpha)).unwrap() - alpha.abs() * base).abs() < 1e-12 * (1.0 + base));
        }

        #[test]
        fn ssim_is_symmetric(seed in 0u64..500) {
            let a = textured(14, 13, 1);
            let b = DenseTensor::from_fn(a.shape().clone(), |i| (((i[0] * 13 + i[1]) as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0).unwrap();
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn psnr_decreases_with_error(e1 in 0.001f64..1.0, e2 in 0.001f64..1.0) {
            prop_assume!((e1 - e2).abs() > 1e-9);
            let truth = tensor(&[2, 2], vec![0.0; 4]);
            let p1 = psnr(&truth, &tensor(&[2, 2], vec![e1; 4]), 1.0).unwrap();
            let p2 = psnr(&truth, &tensor(&[2, 2], vec![e2; 4]), 1.0).unwrap();
            prop_assert_eq!(e1 < e2, p1 > p2);
        }
    }
}
