use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportBoundary {
    /// No advective or diffusive flux through any boundary.
    Closed,
    /// Fixed inlet concentration on the left, free outflow on the right, walls elsewhere.
    InletOutlet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportParams {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub diffusion: f64,
    pub inlet_concentration: f64,
    pub boundary: TransportBoundary,
}

/// Largest step that keeps the explicit update positive and within the
/// advective and diffusive limits `dx / |u|_max` and `dx^2 / (4 D)`.
pub fn stable_dt(flow: &FlowField, p: &TransportParams) -> f64 {
    let (nx, ny, dx) = (p.nx, p.ny, p.dx);
    let open = p.boundary == TransportBoundary::InletOutlet;
    let d = p.diffusion / (dx * dx);
    let mut worst: f64 = 0.0;
    let mut umax: f64 = 0.0;
    for i in 0..ny {
        for j in 0..nx {
            let w = flow.face_x[i * (nx + 1) + j];
            let e = flow.face_x[i * (nx + 1) + j + 1];
            let s = flow.face_y[i * nx + j];
            let n = flow.face_y[(i + 1) * nx + j];
            let west_open = j > 0 || open;
            let east_open = j + 1 < nx || open;
            let mut out = 0.0;
            if west_open {
                out += (-w).max(0.0);
            }
            if east_open {
                out += e.max(0.0);
            }
            if i > 0 {
                out += (-s).max(0.0);
            }
            if i + 1 < ny {
                out += n.max(0.0);
            }
            let mut neighbours = [j > 0, j + 1 < nx, i > 0, i + 1 < ny].iter().filter(|b| **b).count() as f64;
            if j == 0 && open {
                // half-cell distance to the fixed inlet value
                neighbours += 2.0;
            }
            worst = worst.max(out / dx + neighbours * d);
            umax = umax.max(w.abs()).max(e.abs()).max(s.abs()).max(n.abs());
        }
    }
    let mut limit = if worst > 0.0 { 1.0 / worst } else { f64::INFINITY };
    if umax > 0.0 {
        limit = limit.min(dx / umax);
    }
    if p.diffusion > 0.0 {
        limit = limit.min(dx * dx / (4.0 * p.diffusion));
    }
    limit
}

/// Explicit conservative update of the concentration over `dt`.
pub fn step_transport(c: &mut [f64], flow: &FlowField, p: &TransportParams, dt: f64) -> Result<()> {
    let (nx, ny, dx) = (p.nx, p.ny, p.dx);
    if c.len() != nx * ny {
        return Err(Error::invalid(format!("concentration has {} cells, grid has {}", c.len(), nx * ny)));
    }
    let limit = stable_dt(flow, p);
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    let open = p.boundary == TransportBoundary::InletOutlet;
    let dd = p.diffusion / dx;
    // net flux into each cell, per unit face length
    let mut net = vec![0.0; nx * ny];
    for i in 0..ny {
        for j in 0..=nx {
            let u = flow.face_x[i * (nx + 1) + j];
            let flux = if j == 0 {
                if !open {
                    continue;
                }
                let c_in = p.inlet_concentration;
                let cc = c[i * nx];
                let adv = if u > 0.0 { u * c_in } else { u * cc };
                adv - 2.0 * dd * (cc - c_in)
            } else if j == nx {
                if !open {
                    continue;
                }
                let cc = c[i * nx + nx - 1];
                if u > 0.0 {
                    u * cc
                } else {
                    0.0
                }
            } else {
                let (l, r) = (c[i * nx + j - 1], c[i * nx + j]);
                let adv = if u > 0.0 { u * l } else { u * r };
                adv - dd * (r - l)
            };
            if j > 0 {
                net[i * nx + j - 1] -= flux;
            }
            if j < nx {
                net[i * nx + j] += flux;
            }
        }
    }
    for i in 1..ny {
        for j in 0..nx {
            let u = flow.face_y[i * nx + j];
            let (lo, hi) = (c[(i - 1) * nx + j], c[i * nx + j]);
            let flux = if u > 0.0 { u * lo } else { u * hi } - dd * (hi - lo);
            net[(i - 1) * nx + j] -= flux;
            net[i * nx + j] += flux;
        }
    }
    let s = dt / dx;
    for (ci, n) in c.iter_mut().zip(&net) {
        // positivity is guaranteed by the step limit up to rounding
        *ci = (*ci + s * n).max(0.0);
    }
    Ok(())
}
