use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PorosityConfig {
    /// Gaussian smoothing length of the noise, in cells. Zero keeps white noise.
    pub correlation_length: f64,
    /// Threshold on the standardised smoothed noise; cells above it are open.
    pub threshold: f64,
    /// Width of the logistic transition around the threshold; zero gives a sharp step.
    pub transition_width: f64,
    /// Porosity of tight (closed) cells.
    pub min: f64,
    /// Porosity of open cells at time zero.
    pub max: f64,
    /// Seeds tried (`seed`, `seed + 1`, ...) before giving up on percolation.
    pub max_attempts: usize,
}

impl Default for PorosityConfig {
    fn default() -> Self {
        Self { correlation_length: 4.0, threshold: -0.2, transition_width: 0.25, min: 0.2, max: 0.85, max_attempts: 20 }
    }
}

impl PorosityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min <= self.max && self.max <= 1.0) {
            return Err(Error::invalid(format!(
                "porosity bounds must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.correlation_length < 0.0 || self.transition_width < 0.0 || self.max_attempts == 0 {
            return Err(Error::invalid("correlation_length and transition_width must be >= 0, max_attempts >= 1"));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur with mirrored borders.
fn smooth(field: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; field.len()];
    for i in 0..ny {
        for j in 0..nx {
            tmp[i * nx + j] =
                k.iter().enumerate().map(|(t, w)| w * field[i * nx + reflect(j as i64 + t as i64 - r, nx)]).sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for i in 0..ny {
        for j in 0..nx {
            out[i * nx + j] =
                k.iter().enumerate().map(|(t, w)| w * tmp[reflect(i as i64 + t as i64 - r, ny) * nx + j]).sum();
        }
    }
    out
}

fn field_for_seed(nx: usize, ny: usize, cfg: &PorosityConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut s = smooth(&noise, nx, ny, cfg.correlation_length);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let std = (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt().max(1e-12);
    for v in &mut s {
        *v = (*v - mean) / std;
    }
    s.into_iter()
        .map(|z| {
            let open = if cfg.transition_width > 0.0 {
                1.0 / (1.0 + (-(z - cfg.threshold) / cfg.transition_width).exp())
            } else if z > cfg.threshold {
                1.0
            } else {
                0.0
            };
            cfg.min * (1.0 - open) + cfg.max * open
        })
        .collect()
}

/// Whether open cells (above mid-range porosity) connect the left column to the right column.
pub fn percolates(eps: &[f64], nx: usize, ny: usize, open_above: f64) -> bool {
    let open = |c: usize| eps[c] > open_above;
    let mut seen = vec![false; nx * ny];
    let mut queue = VecDeque::new();
    for i in 0..ny {
        let c = i * nx;
        if open(c) {
            seen[c] = true;
            queue.push_back(c);
        }
    }
    while let Some(c) = queue.pop_front() {
        let (i, j) = (c / nx, c % nx);
        if j + 1 == nx {
            return true;
        }
        let mut visit = |n: usize| {
            if !seen[n] && open(n) {
                seen[n] = true;
                queue.push_back(n);
            }
        };
        if j > 0 {
            visit(c - 1);
        }
        visit(c + 1);
        if i > 0 {
            visit(c - nx);
        }
        if i + 1 < ny {
            visit(c + nx);
        }
    }
    false
}

/// Smoothed, thresholded random porosity with an open inlet-to-outlet path.
///
/// Returns the field and the seed that produced it.
pub fn init_porosity(nx: usize, ny: usize, cfg: &PorosityConfig, seed: u64) -> Result<(Vec<f64>, u64)> {
    cfg.validate()?;
    let mid = 0.5 * (cfg.min + cfg.max);
    for attempt in 0..cfg.max_attempts {
        let s = seed.wrapping_add(attempt as u64);
        let eps = field_for_seed(nx, ny, cfg, s);
        if cfg.min == cfg.max || percolates(&eps, nx, ny, mid) {
            return Ok((eps, s));
        }
    }
    Err(Error::NoPercolation { attempts: cfg.max_attempts, seed })
}
