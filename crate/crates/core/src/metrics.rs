//! Field comparison metrics on scaled grids.

use crate::error::{Error, Result};

/// Threshold on scaled concentration that marks a pixel as occupied.
pub const AREA_THRESHOLD: f64 = 0.5;

/// Default acceptability line for correlation curves.
pub const PCC_THRESHOLD: f64 = 0.75;

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("grids differ in size: {a} vs {b}")));
    }
    Ok(())
}

/// Pearson correlation. `None` when either argument has zero variance.
pub fn pcc<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<Option<f64>> {
    check_same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two values"));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v.into()).sum::<f64>() / n;
    let my = y.iter().map(|&v| v.into()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a.into() - mx, b.into() - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

pub fn mse<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    check_same_len(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::invalid("mean squared error of empty grids"));
    }
    Ok(x.iter().zip(y).map(|(&a, &b)| (a.into() - b.into()).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Signed percentage difference in the number of pixels strictly above `threshold`.
pub fn area_error<T: Copy + Into<f64>>(truth: &[T], pred: &[T], threshold: f64) -> Result<f64> {
    check_same_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::invalid("area error of empty grids"));
    }
    let count = |g: &[T]| g.iter().filter(|&&v| v.into() > threshold).count() as f64;
    Ok(100.0 * (count(truth) - count(pred)) / truth.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Normalised 1D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window).map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of an `h x w` grid.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, g)| g * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, g)| g * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over every window that fits entirely inside the grid.
pub fn ssim_with<T: Copy + Into<f64>>(x: &[T], y: &[T], height: usize, width: usize, p: &SsimParams) -> Result<f64> {
    check_same_len(x.len(), y.len())?;
    check_same_len(x.len(), height * width)?;
    if height < p.window || width < p.window {
        return Err(Error::invalid(format!(
            "grid {height}x{width} is smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let xs: Vec<f64> = x.iter().map(|&v| v.into()).collect();
    let ys: Vec<f64> = y.iter().map(|&v| v.into()).collect();
    let taps = p.taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mx = filter_valid(&xs, height, width, &taps);
    let my = filter_valid(&ys, height, width, &taps);
    let mxx = filter_valid(&prod(&xs, &xs), height, width, &taps);
    let myy = filter_valid(&prod(&ys, &ys), height, width, &taps);
    let mxy = filter_valid(&prod(&xs, &ys), height, width, &taps);
    let (c1, c2) = (p.c1(), p.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

pub fn ssim<T: Copy + Into<f64>>(x: &[T], y: &[T], height: usize, width: usize) -> Result<f64> {
    ssim_with(x, y, height, width, &SsimParams::default())
}

/// Quartiles with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    Some((q(0.25), q(0.5), q(0.75)))
}
