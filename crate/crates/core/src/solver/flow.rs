use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub inlet_pressure: f64,
    pub outlet_pressure: f64,
    pub divergence_tolerance: f64,
    pub max_iterations: usize,
}

/// Cell-centred pressure and face-normal velocities on a staggered grid.
///
/// `face_x[i * (nx + 1) + j]` is the x-velocity through the west face of cell
/// `(i, j)`; `face_y[i * nx + j]` is the y-velocity through the face above row
/// `i` (row index increases with y). Top and bottom faces carry zero flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub pressure: Vec<f64>,
    pub face_x: Vec<f64>,
    pub face_y: Vec<f64>,
    pub iterations: usize,
}

impl FlowField {
    /// Uniform velocity field, mainly for transport tests.
    pub fn uniform(nx: usize, ny: usize, ux: f64, uy: f64) -> Self {
        let mut face_y = vec![uy; (ny + 1) * nx];
        face_y[..nx].fill(0.0);
        face_y[ny * nx..].fill(0.0);
        Self { pressure: vec![0.0; nx * ny], face_x: vec![ux; ny * (nx + 1)], face_y, iterations: 0 }
    }

    /// Face averages interpolated to cell centres.
    pub fn cell_velocities(&self, nx: usize, ny: usize) -> (Vec<f64>, Vec<f64>) {
        let mut ux = vec![0.0; nx * ny];
        let mut uy = vec![0.0; nx * ny];
        for i in 0..ny {
            for j in 0..nx {
                ux[i * nx + j] = 0.5 * (self.face_x[i * (nx + 1) + j] + self.face_x[i * (nx + 1) + j + 1]);
                uy[i * nx + j] = 0.5 * (self.face_y[i * nx + j] + self.face_y[(i + 1) * nx + j]);
            }
        }
        (ux, uy)
    }

    /// Discrete divergence per cell (1/s).
    pub fn divergence(&self, nx: usize, ny: usize, dx: f64) -> Vec<f64> {
        let mut div = vec![0.0; nx * ny];
        for i in 0..ny {
            for j in 0..nx {
                let ex = self.face_x[i * (nx + 1) + j + 1] - self.face_x[i * (nx + 1) + j];
                let ey = self.face_y[(i + 1) * nx + j] - self.face_y[i * nx + j];
                div[i * nx + j] = (ex + ey) / dx;
            }
        }
        div
    }

    pub fn max_divergence(&self, nx: usize, ny: usize, dx: f64) -> f64 {
        self.divergence(nx, ny, dx).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Net volumetric flux per unit depth through the inlet and outlet columns.
    pub fn boundary_fluxes(&self, nx: usize, ny: usize, dx: f64) -> (f64, f64) {
        let inlet = (0..ny).map(|i| self.face_x[i * (nx + 1)] * dx).sum();
        let outlet = (0..ny).map(|i| self.face_x[i * (nx + 1) + nx] * dx).sum();
        (inlet, outlet)
    }
}

/// Five-point operator in flux form: `A p = b`, `(A p - b)_c / dx^2` is the cell divergence.
struct Operator {
    nx: usize,
    ny: usize,
    /// Transmissibility of the west face of each cell (nx + 1 per row), boundary faces included.
    tx: Vec<f64>,
    /// Transmissibility of the face above each row (ny + 1 rows of nx), zero on walls.
    ty: Vec<f64>,
    diag: Vec<f64>,
    rhs: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

impl Operator {
    fn new(porosity: &[f64], p: &FlowParams) -> Self {
        let (nx, ny) = (p.nx, p.ny);
        let k: Vec<f64> = porosity.iter().map(|e| e * e * e).collect();
        let mut tx = vec![0.0; ny * (nx + 1)];
        let mut ty = vec![0.0; (ny + 1) * nx];
        for i in 0..ny {
            // half-cell distance to the fixed-pressure boundary faces
            tx[i * (nx + 1)] = 2.0 * k[i * nx];
            tx[i * (nx + 1) + nx] = 2.0 * k[i * nx + nx - 1];
            for j in 1..nx {
                tx[i * (nx + 1) + j] = harmonic(k[i * nx + j - 1], k[i * nx + j]);
            }
        }
        for i in 1..ny {
            for j in 0..nx {
                ty[i * nx + j] = harmonic(k[(i - 1) * nx + j], k[i * nx + j]);
            }
        }
        let mut diag = vec![0.0; nx * ny];
        let mut rhs = vec![0.0; nx * ny];
        for i in 0..ny {
            for j in 0..nx {
                let c = i * nx + j;
                diag[c] = tx[i * (nx + 1) + j] + tx[i * (nx + 1) + j + 1] + ty[i * nx + j] + ty[(i + 1) * nx + j];
            }
            rhs[i * nx] += tx[i * (nx + 1)] * p.inlet_pressure;
            rhs[i * nx + nx - 1] += tx[i * (nx + 1) + nx] * p.outlet_pressure;
        }
        Self { nx, ny, tx, ty, diag, rhs }
    }

    fn west(&self, i: usize, j: usize) -> f64 {
        self.tx[i * (self.nx + 1) + j]
    }

    fn north(&self, i: usize, j: usize) -> f64 {
        self.ty[i * self.nx + j]
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        for i in 0..self.ny {
            for j in 0..nx {
                let c = i * nx + j;
                let mut v = self.diag[c] * x[c];
                if j > 0 {
                    v -= self.west(i, j) * x[c - 1];
                }
                if j + 1 < nx {
                    v -= self.west(i, j + 1) * x[c + 1];
                }
                if i > 0 {
                    v -= self.north(i, j) * x[c - nx];
                }
                if i + 1 < self.ny {
                    v -= self.north(i + 1, j) * x[c + nx];
                }
                out[c] = v;
            }
        }
    }

    /// Zero-fill incomplete Cholesky pivots: `M = (D + L) D^-1 (D + L^T)`.
    fn ic0_pivots(&self) -> Vec<f64> {
        let nx = self.nx;
        let mut d = vec![0.0; nx * self.ny];
        for i in 0..self.ny {
            for j in 0..nx {
                let c = i * nx + j;
                let mut v = self.diag[c];
                if j > 0 {
                    let a = self.west(i, j);
                    v -= a * a / d[c - 1];
                }
                if i > 0 {
                    let a = self.north(i, j);
                    v -= a * a / d[c - nx];
                }
                d[c] = v;
            }
        }
        d
    }

    fn precondition(&self, d: &[f64], r: &[f64], z: &mut [f64]) {
        let nx = self.nx;
        let n = nx * self.ny;
        // forward: (D + L) y = r
        for i in 0..self.ny {
            for j in 0..nx {
                let c = i * nx + j;
                let mut v = r[c];
                if j > 0 {
                    v += self.west(i, j) * z[c - 1];
                }
                if i > 0 {
                    v += self.north(i, j) * z[c - nx];
                }
                z[c] = v / d[c];
            }
        }
        // backward: (D + L^T) z = D y
        for c in (0..n).rev() {
            let (i, j) = (c / nx, c % nx);
            let mut v = 0.0;
            if j + 1 < nx {
                v += self.west(i, j + 1) * z[c + 1];
            }
            if i + 1 < self.ny {
                v += self.north(i + 1, j) * z[c + nx];
            }
            z[c] += v / d[c];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solve the pressure equation and return face velocities.
///
/// Iterates until the largest cell divergence drops below the tolerance.
pub fn solve_flow(porosity: &[f64], params: &FlowParams, warm_start: Option<&[f64]>) -> Result<FlowField> {
    let (nx, ny, dx) = (params.nx, params.ny, params.dx);
    let n = nx * ny;
    if porosity.len() != n {
        return Err(Error::invalid(format!("porosity has {} cells, grid has {n}", porosity.len())));
    }
    if let Some(v) = porosity.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::invalid(format!("porosity {v} outside (0, 1]")));
    }
    let op = Operator::new(porosity, params);
    let pivots = op.ic0_pivots();
    let mut x = match warm_start {
        Some(p) if p.len() == n => p.to_vec(),
        _ => {
            // linear profile between the boundary pressures
            let mut p = vec![0.0; n];
            for i in 0..ny {
                for j in 0..nx {
                    let s = (j as f64 + 0.5) / nx as f64;
                    p[i * nx + j] = params.inlet_pressure + s * (params.outlet_pressure - params.inlet_pressure);
                }
            }
            p
        }
    };
    // (A p - b) / dx^2 is the cell divergence
    let tol = params.divergence_tolerance * dx * dx;
    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut r: Vec<f64> = op.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![0.0; n];
    let mut iterations = 0;
    if max_abs(&r) > tol {
        op.precondition(&pivots, &r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        loop {
            iterations += 1;
            op.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            if iterations % 50 == 0 {
                // refresh against drift of the recursive residual
                op.apply(&x, &mut ax);
                for k in 0..n {
                    r[k] = op.rhs[k] - ax[k];
                }
            }
            if max_abs(&r) <= tol {
                op.apply(&x, &mut ax);
                for k in 0..n {
                    r[k] = op.rhs[k] - ax[k];
                }
                if max_abs(&r) <= tol {
                    break;
                }
            }
            if iterations >= params.max_iterations {
                return Err(Error::NoConvergence { iterations, residual: max_abs(&r) / (dx * dx) });
            }
            op.precondition(&pivots, &r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
    }

    let mut face_x = vec![0.0; ny * (nx + 1)];
    let mut face_y = vec![0.0; (ny + 1) * nx];
    for i in 0..ny {
        for j in 0..=nx {
            let left = if j == 0 { params.inlet_pressure } else { x[i * nx + j - 1] };
            let right = if j == nx { params.outlet_pressure } else { x[i * nx + j] };
            face_x[i * (nx + 1) + j] = -op.west(i, j) * (right - left) / dx;
        }
    }
    for i in 1..ny {
        for j in 0..nx {
            face_y[i * nx + j] = -op.north(i, j) * (x[i * nx + j] - x[(i - 1) * nx + j]) / dx;
        }
    }
    Ok(FlowField { pressure: x, face_x, face_y, iterations })
}
