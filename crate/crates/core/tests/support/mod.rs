//! Oracles and measurements shared by the focused test files and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rockflow_core::dataset::{plan_whole_domain, FieldSnapshot, SimulationSeries};
use rockflow_core::metrics::{area_error, mse, pcc, ssim, SsimParams};
use rockflow_core::predictor::{Predictor, PredictorSpec, StepModel, Variant};
use rockflow_core::solver::{advance, init_porosity, solve_flow, SolverConfig, SolverState, TransportBoundary};
use rockflow_core::training::{boundary_weighted_loss, rollout_loss, train_one_step, LambdaSchedule, TrainConfig, WindowSet};
use rockflow_nn::{Graph, ParamStore, Tensor, Var};

// ---- metrics ----

/// Textbook single-pass Pearson formula.
pub fn pcc_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 1e-12).then(|| (n * sxy - sx * sy) / den)
}

/// Direct 2D-window SSIM: explicit kernel, central moments about each window mean.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let p = SsimParams::default();
    let r = 5i64;
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (a, row) in kernel.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as i64 - r, b as i64 - r);
            *v = (-((da * da + db * db) as f64) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((p.k1 * p.data_range).powi(2), (p.k2 * p.data_range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for cy in 5..h - 5 {
        for cx in 5..w - 5 {
            let mut m = [0.0; 2];
            for (a, row) in kernel.iter().enumerate() {
                for (b, k) in row.iter().enumerate() {
                    let idx = (cy + a - 5) * w + cx + b - 5;
                    m[0] += k / total * x[idx];
                    m[1] += k / total * y[idx];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (a, row) in kernel.iter().enumerate() {
                for (b, k) in row.iter().enumerate() {
                    let idx = (cy + a - 5) * w + cx + b - 5;
                    let (dx, dy) = (x[idx] - m[0], y[idx] - m[1]);
                    vx += k / total * dx * dx;
                    vy += k / total * dy * dy;
                    cxy += k / total * dx * dy;
                }
            }
            acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cxy + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // mixture of smooth structure and noise, kept inside [0, 1]
    let (a, b, ph) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0), rng.gen_range(0.0..6.0));
    (0..n)
        .map(|k| {
            let (i, j) = ((k / 16) as f64, (k % 16) as f64);
            let s = 0.5 + 0.3 * (a * i + b * j + ph).sin();
            (s + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Largest deviation of PCC, SSIM, MSE and area error from their oracles over
/// `grids` random 16x16 pairs.
pub fn worst_metric_deviation(grids: usize, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..grids {
        let x = random_grid(&mut rng, 256);
        let y = random_grid(&mut rng, 256);
        let p = pcc(&x, &y).unwrap().unwrap();
        worst[0] = worst[0].max((p - pcc_oracle(&x, &y).unwrap()).abs());
        worst[1] = worst[1].max((ssim(&x, &y, 16, 16).unwrap() - ssim_oracle(&x, &y, 16, 16)).abs());
        let m: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 256.0;
        worst[2] = worst[2].max((mse(&x, &y).unwrap() - m).abs());
        let mut above = 0i64;
        for k in 0..256 {
            above += (x[k] > 0.5) as i64 - (y[k] > 0.5) as i64;
        }
        worst[3] = worst[3].max((area_error(&x, &y, 0.5).unwrap() - 100.0 * above as f64 / 256.0).abs());
    }
    worst
}

// ---- gradients ----

pub fn toy_spec(variant: Variant) -> PredictorSpec {
    PredictorSpec { depth: 2, ..PredictorSpec::full(variant).with_base_width(2) }
}

pub fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn toy_model(variant: Variant, seed: u64) -> (Predictor, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Predictor::new(&toy_spec(variant), &mut store, &mut rng).unwrap();
    // random biases keep ReLU units away from the all-zero kink
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".bias") {
            let dims = store.get(id).dims();
            store.set(id, random(dims, &mut rng).map(|v| 0.1 * v)).unwrap();
        }
    }
    (p, store)
}

pub fn predict(model: &Predictor, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::frozen(store);
    let v = g.input(x.clone());
    let y = model.forward(&mut g, v).unwrap();
    g.value(y).clone()
}

/// `||a - n|| / max(||a||, ||n||)` over every parameter entry, where `n` is a
/// central difference of `loss` with step 1e-6.
pub fn relative_gradient_error(
    store: &ParamStore<f64>,
    analytic: impl Fn(usize, usize) -> f64,
    loss: impl Fn(&ParamStore<f64>) -> f64,
) -> f64 {
    let h = 1e-6;
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let mut probe = store.clone();
    for (pi, id) in store.ids().enumerate() {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + h;
            let up = loss(&probe);
            probe.get_mut(id).data_mut()[k] = orig - h;
            let down = loss(&probe);
            probe.get_mut(id).data_mut()[k] = orig;
            let n = (up - down) / (2.0 * h);
            let a = analytic(pi, k);
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

/// Relative error of backpropagated parameter gradients of the boundary-weighted loss.
pub fn loss_gradient_error(variant: Variant, lambda: f64) -> f64 {
    let (model, store) = toy_model(variant, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random([12, 2, 8, 8], &mut rng);
    let t = random([4, 2, 8, 8], &mut rng);
    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let tv = g.input(t.clone());
    let y = model.forward(&mut g, xv).unwrap();
    let l = g.boundary_mse(y, tv, lambda).unwrap();
    let backprop = g.value(l).item();
    let grads = g.backward(l);
    let ids: Vec<_> = store.ids().collect();
    assert!((backprop - boundary_weighted_loss(&predict(&model, &store, &x), &t, lambda).unwrap()).abs() < 1e-12);
    relative_gradient_error(
        &store,
        |pi, k| grads.param(ids[pi]).unwrap().data()[k],
        |s| boundary_weighted_loss(&predict(&model, s, &x), &t, lambda).unwrap(),
    )
}

/// Reference rollout built from plain tensors.
pub fn unrolled_loss(model: &Predictor, store: &ParamStore<f64>, x: &Tensor<f64>, targets: &[Tensor<f64>], lambda: f64) -> f64 {
    let mut window = x.clone();
    let mut total = 0.0;
    for t in targets {
        let p = predict(model, store, &window);
        total += boundary_weighted_loss(&p, t, lambda).unwrap() / targets.len() as f64;
        window = Tensor::concat_channels(&[&window.channel_slice(4, 8), &p]).unwrap();
    }
    total
}

/// Relative errors of the parameter and input gradients of a two-step rollout loss.
pub fn rollout_gradient_errors() -> (f64, f64) {
    let (model, store) = toy_model(Variant::Unet, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random([12, 1, 8, 8], &mut rng);
    let targets = [random([4, 1, 8, 8], &mut rng), random([4, 1, 8, 8], &mut rng)];
    let lambda = 0.5;
    let mut g = Graph::new(&store);
    let xv = g.input_with_grad(x.clone());
    let tv: Vec<Var> = targets.iter().map(|t| g.input(t.clone())).collect();
    let l = rollout_loss(&mut g, &model, xv, &tv, lambda).unwrap();
    assert!((g.value(l).item() - unrolled_loss(&model, &store, &x, &targets, lambda)).abs() < 1e-12);
    let grads = g.backward(l);
    let ids: Vec<_> = store.ids().collect();
    let params = relative_gradient_error(
        &store,
        |pi, k| grads.param(ids[pi]).unwrap().data()[k],
        |s| unrolled_loss(&model, s, &x, &targets, lambda),
    );

    // the second step's loss must reach the input through the first prediction
    let gx = grads.input(xv).unwrap();
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    for k in (0..x.len()).step_by(7) {
        let mut up = x.clone();
        up.data_mut()[k] += h;
        let mut down = x.clone();
        down.data_mut()[k] -= h;
        let n = (unrolled_loss(&model, &store, &up, &targets, lambda) - unrolled_loss(&model, &store, &down, &targets, lambda)) / (2.0 * h);
        diff += (gx.data()[k] - n).powi(2);
        norm += n * n;
    }
    (params, diff.sqrt() / norm.sqrt())
}

// ---- training ----

pub fn toy_series(id: &str, seed: u64, len: usize) -> SimulationSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f32> = (0..4 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
    let snaps = (0..len)
        .map(|t| FieldSnapshot::new(8, 8, base.iter().map(|v| (v + 0.02 * t as f32).min(1.0)).collect()).unwrap())
        .collect();
    SimulationSeries::new(id, seed, 1.0, 1.0, snaps).unwrap()
}

pub fn f32_model(seed: u64) -> (Predictor, ParamStore<f32>) {
    Predictor::seeded(&toy_spec(Variant::Unet), seed).unwrap()
}

/// Per-epoch λ of a 250-epoch run on a toy series with λ stepping to 0.5 at
/// `first` and to 1 at `second`, and the step function it should follow.
pub fn lambda_trace(first: usize, second: usize) -> (Vec<f64>, Vec<f64>) {
    let series = [toy_series("a", 3, 5)];
    let windows = WindowSet { series: &series, windows: plan_whole_domain(&series, 1).unwrap() };
    let empty = WindowSet { series: &series, windows: Vec::new() };
    let schedule = LambdaSchedule::new(vec![(0, 0.0), (first, 0.5), (second, 1.0)]).unwrap();
    let cfg = TrainConfig { epochs: 250, batch_size: 2, schedule, ..TrainConfig::default() };
    let (model, mut store) = f32_model(1);
    let h = train_one_step(&model, &mut store, &windows, &empty, &cfg).unwrap();
    assert!(h.epochs.iter().all(|e| e.train_boundary_mse.is_finite()));
    let trace = h.epochs.iter().map(|e| e.lambda).collect();
    let expect = (0..250).map(|e| if e < first { 0.0 } else if e < second { 0.5 } else { 1.0 }).collect();
    (trace, expect)
}

// ---- solver ----

pub fn small_config(seed: u64) -> SolverConfig {
    SolverConfig { nx: 48, ny: 32, snapshots: 12, seed, ..SolverConfig::default() }
}

#[derive(Debug, Default)]
pub struct CoupledRun {
    /// Largest decrease of porosity in any cell over one step (0 when monotone).
    pub porosity_decrease: f64,
    pub max_divergence: f64,
    pub porosity_above_one: bool,
    pub negative_concentration: bool,
    /// Largest inlet/outlet flux mismatch divided by the column height and cell size.
    pub flux_mismatch: f64,
    pub reached_concentration: f64,
}

/// Step the coupled solver `steps` times from a fresh porosity field.
pub fn coupled_run(cfg: &SolverConfig, steps: usize) -> CoupledRun {
    let (eps, _) = init_porosity(cfg.nx, cfg.ny, &cfg.porosity, cfg.seed).unwrap();
    let fp = cfg.flow_params();
    let flow = solve_flow(&eps, &fp, None).unwrap();
    let mut state = SolverState { concentration: vec![0.0; eps.len()], porosity: eps, flow, clamp_events: 0, transport_substeps: 0 };
    let mut out = CoupledRun::default();
    for _ in 0..steps {
        let before = state.porosity.clone();
        advance(&mut state, cfg, &fp, &cfg.transport_params(), &cfg.reaction_params()).unwrap();
        for (a, b) in state.porosity.iter().zip(&before) {
            out.porosity_decrease = out.porosity_decrease.max(b - a);
        }
        out.porosity_above_one |= state.porosity.iter().any(|&e| e > 1.0);
        out.negative_concentration |= state.concentration.iter().any(|&c| c < 0.0);
        out.max_divergence = out.max_divergence.max(state.flow.max_divergence(cfg.nx, cfg.ny, cfg.dx));
        let (inlet, outlet) = state.flow.boundary_fluxes(cfg.nx, cfg.ny, cfg.dx);
        // fluxes are per unit depth; compare as velocities through the column
        out.flux_mismatch = out.flux_mismatch.max((inlet - outlet).abs() / cfg.dx / cfg.ny as f64);
    }
    out.reached_concentration = state.concentration.iter().fold(0.0, |m: f64, &c| m.max(c));
    out
}

/// Largest per-step change of total concentration in a closed domain without reaction.
pub fn closed_mass_drift(seed: u64, steps: usize) -> f64 {
    let mut cfg = small_config(seed);
    cfg.reaction_rate = 0.0;
    cfg.boundary = TransportBoundary::Closed;
    let (eps, _) = init_porosity(cfg.nx, cfg.ny, &cfg.porosity, cfg.seed).unwrap();
    let fp = cfg.flow_params();
    let flow = solve_flow(&eps, &fp, None).unwrap();
    let conc: Vec<f64> = (0..eps.len()).map(|k| ((k * 31) % 17) as f64 / 17.0).collect();
    let mut state = SolverState { concentration: conc, porosity: eps, flow, clamp_events: 0, transport_substeps: 0 };
    let tp = cfg.transport_params();
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let before: f64 = state.concentration.iter().sum();
        advance(&mut state, &cfg, &fp, &tp, &cfg.reaction_params()).unwrap();
        let after: f64 = state.concentration.iter().sum();
        worst = worst.max((after - before).abs());
    }
    worst
}

/// Largest `|u_y(i, j) + u_y(ny-1-i, j)|` relative to the peak horizontal speed
/// (floored at 1) for a porosity field mirrored about the horizontal mid-line.
pub fn mirrored_uy_asymmetry(seed: u64) -> f64 {
    let cfg = small_config(seed);
    let (nx, ny) = (cfg.nx, cfg.ny);
    let (mut eps, _) = init_porosity(nx, ny, &cfg.porosity, cfg.seed).unwrap();
    for i in 0..ny / 2 {
        for j in 0..nx {
            eps[(ny - 1 - i) * nx + j] = eps[i * nx + j];
        }
    }
    let flow = solve_flow(&eps, &cfg.flow_params(), None).unwrap();
    let (ux, uy) = flow.cell_velocities(nx, ny);
    let scale = ux.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut worst = 0.0f64;
    for i in 0..ny {
        for j in 0..nx {
            worst = worst.max((uy[i * nx + j] + uy[(ny - 1 - i) * nx + j]).abs() / scale);
        }
    }
    worst
}
