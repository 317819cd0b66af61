//! The ten acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! Criteria 7 to 10 train on a freshly generated 10-simulation, 128x128,
//! 60-snapshot dataset (cached under the cargo target directory) and take
//! roughly an hour on one CPU core.

mod support;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rockflow_core::checkpoint::sha256_hex;
use rockflow_core::compression::{
    baseline_roundtrip, latent_moments, AutoencoderSpec, BaselineMethod, CompressionKind, CompressionModel, CompressionTrainConfig,
};
use rockflow_core::dataset::{FieldSnapshot, SimulationSeries, FIELD_COUNT, FIELD_NAMES};
use rockflow_core::experiment::{
    evaluate_engine, standard_schedule, train_compression_model, train_predictor_plan, PreparedData, PredictorPlan,
    Regime, TrainedPredictor,
};
use rockflow_core::inference::{InferenceEngine, RolloutRequest};
use rockflow_core::io::{read_dataset, write_dataset};
use rockflow_core::metrics::mse;
use rockflow_core::predictor::{count_parameters, PredictorSpec, StepModel, Variant};
use rockflow_core::profile::{measure, CountingAllocator, MemorySource};
use rockflow_core::report::{per_timestep_curves, Curves, Split};
use rockflow_core::solver::{generate_dataset, SolverConfig};
use rockflow_core::training::{LambdaSchedule, TrainConfig};
use rockflow_nn::{Graph, ParamStore, Tensor};

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

const SEEDS: [u64; 3] = [0, 1, 2];
const HORIZON: usize = 30;
/// Steps 21 to 30 of the validation rollout.
const LATE: std::ops::Range<usize> = 20..30;
const VALIDATION_SIMS: usize = 2;

/// Written straight to the process stdout so the lines survive output capture.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Verdict {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn run(id: &'static str, title: &'static str, budget_s: Option<f64>, f: impl FnOnce() -> Outcome) -> Verdict {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let seconds = start.elapsed().as_secs_f64();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    if let Some(b) = budget_s {
        if seconds >= b {
            pass = false;
            detail += &format!("; took {seconds:.0}s, budget {b:.0}s");
        }
    }
    let v = Verdict { id, title, pass, detail, seconds };
    say(&line(&v));
    v
}

fn line(v: &Verdict) -> String {
    format!("criterion {:>3} {} {} ({:.1}s): {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.title, v.seconds, v.detail)
}

fn fmt4(v: &[f64; FIELD_COUNT]) -> String {
    let parts: Vec<String> = v.iter().zip(FIELD_NAMES).map(|(x, n)| format!("{n} {x:.4}")).collect();
    parts.join(", ")
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- criteria 1 to 6 ----

fn metric_oracles() -> Outcome {
    let worst = support::worst_metric_deviation(1000, 2024);
    let pass = worst.iter().all(|&w| w < 1e-6);
    outcome(pass, format!("max |metric - oracle| over 1000 grids: pcc {:.1e}, ssim {:.1e}, mse {:.1e}, area {:.1e} (tol 1e-6)", worst[0], worst[1], worst[2], worst[3]))
}

fn predict_scaled(p: &impl StepModel, weights: &ParamStore<f32>, x: Tensor<f32>) -> Tensor<f32> {
    let mut g = Graph::frozen(weights);
    let v = g.input(x);
    let y = p.forward(&mut g, v).unwrap();
    g.value(y).clone()
}

fn patch_plan(depth: usize, base: usize) -> PredictorPlan {
    PredictorPlan {
        variant: Variant::Unet,
        depth,
        base_width: base,
        residual: true,
        regime: Regime::Patches { size: 64, stride: 32 },
        one_step: TrainConfig { epochs: 1, batch_size: 8, samples_per_epoch: Some(16), validation_samples: Some(4), ..Default::default() },
        rollout_horizon: None,
        init_seed: 0,
        ..Default::default()
    }
}

/// Window of `series` at `start`, tiled `reps` times in each direction.
fn tiled_window(series: &SimulationSeries, start: usize, reps: usize) -> Vec<FieldSnapshot> {
    series.snapshots()[start..start + 3]
        .iter()
        .map(|s| {
            let (h, w) = (s.height(), s.width());
            let mut out = FieldSnapshot::zeros(h * reps, w * reps);
            for f in 0..FIELD_COUNT {
                let src = s.field(f).to_vec();
                let dst = out.field_mut(f);
                for y in 0..h * reps {
                    for x in 0..w * reps {
                        dst[y * w * reps + x] = src[(y % h) * w + x % w];
                    }
                }
            }
            out
        })
        .collect()
}

fn grid_size_invariance(data: &PreparedData) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // shapes: a depth-5 network trained on 64x64 patches, run on 128 and 256 grids
    let deep = train_predictor_plan(&patch_plan(5, 4), &data.train, &data.validation).unwrap();
    let engine = InferenceEngine::gsi(deep.predictor.clone(), deep.one_step.clone(), data.scaler.clone()).unwrap();
    for reps in [1, 2] {
        let window = tiled_window(&data.raw_validation[0], 0, reps);
        let size = window[0].height();
        let out = engine.predict(&RolloutRequest::new(window, 2)).unwrap();
        let ok = out.snapshots.len() == 2 && out.snapshots.iter().all(|s| s.height() == size && s.width() == size);
        pass &= ok;
        notes.push(format!("{size}x{size} -> {}x{} {}", out.snapshots[0].height(), out.snapshots[0].width(), if ok { "ok" } else { "WRONG" }));
    }

    // central consistency: a 64x64 patch alone versus embedded in a constant 256x256 field
    let central = 16..48;
    let offset = 96;
    let patch: Vec<FieldSnapshot> = data.validation[0].snapshots()[10..13].iter().map(|s| s.crop(32, 32, 64, 64)).collect();
    let patch_input = Tensor::concat_channels(&patch.iter().map(|s| s.to_tensor()).collect::<Vec<_>>().iter().collect::<Vec<_>>()).unwrap();
    let mut canvas = Tensor::full([12, 1, 256, 256], 0.5f32);
    for c in 0..12 {
        for y in 0..64 {
            for x in 0..64 {
                canvas.set(c, 0, offset + y, offset + x, patch_input.at(c, 0, y, x));
            }
        }
    }
    let discrepancy = |p: &TrainedPredictor| {
        let alone = predict_scaled(&p.predictor, &p.one_step, patch_input.clone());
        let embedded = predict_scaled(&p.predictor, &p.one_step, canvas.clone());
        let mut worst = 0.0f32;
        for c in 0..FIELD_COUNT {
            for y in central.clone() {
                for x in central.clone() {
                    worst = worst.max((alone.at(c, 0, y, x) - embedded.at(c, 0, offset + y, offset + x)).abs());
                }
            }
        }
        worst as f64
    };
    let shallow = train_predictor_plan(&patch_plan(2, 8), &data.train, &data.validation).unwrap();
    let r_shallow = shallow.predictor.spec().receptive_radius();
    let r_deep = deep.predictor.spec().receptive_radius();
    let d_shallow = discrepancy(&shallow);
    pass &= r_shallow < central.start && d_shallow < 1e-4;
    notes.push(format!("central 32x32 patch-vs-embedded max diff {d_shallow:.1e} for depth 2 (receptive radius {r_shallow} < 16, tol 1e-4)"));
    notes.push(format!(
        "depth 5: receptive radius {r_deep} exceeds the 16-pixel margin, so no central pixel qualifies (informative diff {:.1e})",
        discrepancy(&deep)
    ));
    outcome(pass, notes.join("; "))
}

fn parameter_counts() -> Outcome {
    let unet = count_parameters(&PredictorSpec::full(Variant::Unet)) as f64;
    let unetpp = count_parameters(&PredictorSpec::full(Variant::UnetPlusPlus)) as f64;
    let ae = AutoencoderSpec::full(CompressionKind::Ae).parameter_count() as f64;
    let within = |v: f64, target: f64, tol: f64| (v - target).abs() <= tol * target;
    let pass = within(unet, 7.7e6, 0.15) && within(unetpp, 9.0e6, 0.15) && unetpp > unet && within(ae, 854_728.0, 0.02);
    outcome(pass, format!("UNet {unet} (7.7M ±15%), UNet++ {unetpp} (9M ±15%), AE {ae} (854,728 ±2%)"))
}

fn gradient_checks() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (variant, lambda) in [(Variant::Unet, 0.0), (Variant::Unet, 0.5), (Variant::Unet, 1.0), (Variant::UnetPlusPlus, 0.5)] {
        let e = support::loss_gradient_error(variant, lambda);
        pass &= e < 1e-4;
        notes.push(format!("{} λ={lambda}: {e:.1e}", variant.name()));
    }
    let (params, input) = support::rollout_gradient_errors();
    pass &= params < 1e-4 && input < 1e-4;
    notes.push(format!("T=2 rollout params {params:.1e}, input {input:.1e}"));
    outcome(pass, format!("relative error vs central differences (tol 1e-4): {}", notes.join(", ")))
}

fn lambda_schedules() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (first, second) in [(100, 200), (50, 100), (15, 65)] {
        let (trace, expect) = support::lambda_trace(first, second);
        let ok = trace == expect;
        pass &= ok;
        notes.push(format!("({first}, {second}) {}", if ok { "exact" } else { "MISMATCH" }));
    }
    outcome(pass, format!("250-epoch λ traces: {}", notes.join(", ")))
}

fn solver_physics(desk: &[SimulationSeries]) -> Outcome {
    let run = support::coupled_run(&support::small_config(4), 40);
    let mut desk_decrease = 0.0f64;
    for s in desk {
        for pair in s.snapshots().windows(2) {
            for (a, b) in pair[0].field(1).iter().zip(pair[1].field(1)) {
                desk_decrease = desk_decrease.max((a - b) as f64);
            }
        }
    }
    let drift = support::closed_mass_drift(2, 20);
    let asym = support::mirrored_uy_asymmetry(8);
    let pass = run.porosity_decrease == 0.0 && desk_decrease <= 0.0 && run.max_divergence <= 1e-8 && drift <= 1e-10 && asym <= 1e-8;
    outcome(
        pass,
        format!(
            "max porosity decrease {:.1e} per step, {desk_decrease:.1e} over the desk snapshots; divergence {:.1e} (≤1e-8); \
             closed mass drift {drift:.1e}/step (≤1e-10); mirrored u_y asymmetry {asym:.1e} (≤1e-8)",
            run.porosity_decrease, run.max_divergence
        ),
    )
}

// ---- desk-scale experiments ----

fn desk_dataset() -> Vec<SimulationSeries> {
    let cfg = SolverConfig::default();
    let seeds: Vec<u64> = (1000..1010).collect();
    let key = sha256_hex(format!("{}|{seeds:?}", serde_json::to_string(&cfg).unwrap()).as_bytes());
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("desk-{}", &key[..12]));
    if let Ok((series, false)) = read_dataset(&dir) {
        return series;
    }
    let series = generate_dataset(&cfg, &seeds).unwrap();
    write_dataset(&series, &dir, false).unwrap();
    series
}

fn gsi_plan(seed: u64) -> PredictorPlan {
    PredictorPlan {
        variant: Variant::Unet,
        depth: 5,
        base_width: 8,
        residual: true,
        regime: Regime::Patches { size: 64, stride: 32 },
        one_step: TrainConfig {
            epochs: 60,
            batch_size: 8,
            samples_per_epoch: Some(64),
            validation_samples: Some(32),
            schedule: standard_schedule(20, 40).unwrap(),
            seed,
            ..Default::default()
        },
        rollout_horizon: Some(8),
        rollout: TrainConfig {
            epochs: 15,
            batch_size: 4,
            samples_per_epoch: Some(16),
            validation_samples: Some(16),
            schedule: LambdaSchedule::constant(1.0).unwrap(),
            learning_rate: 5e-4,
            seed,
            ..Default::default()
        },
        init_seed: seed,
    }
}

/// Whole-domain UNet++ with the same pixel budget per epoch as the patch runs.
fn baseline_plan(seed: u64) -> PredictorPlan {
    PredictorPlan {
        variant: Variant::UnetPlusPlus,
        regime: Regime::WholeDomain,
        one_step: TrainConfig {
            epochs: 60,
            batch_size: 4,
            samples_per_epoch: Some(16),
            validation_samples: Some(4),
            schedule: standard_schedule(20, 40).unwrap(),
            seed,
            ..Default::default()
        },
        rollout_horizon: None,
        ..gsi_plan(seed)
    }
}

fn validation_curves(name: &str, p: &TrainedPredictor, weights: &ParamStore<f32>, data: &PreparedData) -> Curves {
    let engine = InferenceEngine::gsi(p.predictor.clone(), weights.clone(), data.scaler.clone()).unwrap();
    let reports = evaluate_engine(name, &engine, &data.raw_validation, Split::Validation, 0, HORIZON, false, &data.scaler).unwrap();
    per_timestep_curves(&reports, Split::Validation).unwrap()
}

fn late_mean(c: &Curves) -> f64 {
    c.pcc[LATE].iter().map(|row| row.iter().sum::<f64>() / FIELD_COUNT as f64).sum::<f64>() / LATE.len() as f64
}

struct SeedRun {
    one_step_late: f64,
    rollout_late: f64,
    rollout_horizon: [f64; FIELD_COUNT],
    baseline_late: f64,
}

fn seed_run(seed: u64, data: &PreparedData) -> SeedRun {
    let start = Instant::now();
    let gsi = train_predictor_plan(&gsi_plan(seed), &data.train, &data.validation).unwrap();
    let one = validation_curves("gsi-unet", &gsi, &gsi.one_step, data);
    let roll = validation_curves("gsi-unet-rollT8", &gsi, gsi.final_weights(), data);
    let baseline = train_predictor_plan(&baseline_plan(seed), &data.train, &data.validation).unwrap();
    let base = validation_curves("baseline-unetpp", &baseline, &baseline.one_step, data);
    let r = SeedRun {
        one_step_late: late_mean(&one),
        rollout_late: late_mean(&roll),
        rollout_horizon: roll.horizon_mean_pcc(HORIZON),
        baseline_late: late_mean(&base),
    };
    say(&format!(
        "  seed {seed} ({:.0}s): late PCC one-step {:.4}, rollT8 {:.4}, baseline {:.4}; rollT8 30-step means {}",
        start.elapsed().as_secs_f64(),
        r.one_step_late,
        r.rollout_late,
        r.baseline_late,
        fmt4(&r.rollout_horizon)
    ));
    r
}

fn rollout_horizon_pcc(runs: &[SeedRun]) -> Outcome {
    let med: [f64; FIELD_COUNT] = std::array::from_fn(|f| median(&runs.iter().map(|r| r.rollout_horizon[f]).collect::<Vec<_>>()));
    let pass = med.iter().all(|&m| m >= 0.75);
    outcome(pass, format!("GSI UNet rollT8, 3-seed median of the 30-step mean validation PCC: {} (≥ 0.75 each)", fmt4(&med)))
}

fn orderings(runs: &[SeedRun], memory: &Outcome) -> [Outcome; 3] {
    let m = |f: fn(&SeedRun) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    let (one, roll, base) = (m(|r| r.one_step_late), m(|r| r.rollout_late), m(|r| r.baseline_late));
    [
        outcome(roll >= one, format!("late-horizon (steps 21-30) median PCC: rollT8 {roll:.4} vs one-step {one:.4}")),
        outcome(roll >= base, format!("late-horizon median PCC: GSI UNet rollT8 {roll:.4} vs whole-domain UNet++ baseline {base:.4}")),
        outcome(memory.pass, memory.detail.clone()),
    ]
}

fn training_peak(plan: &PredictorPlan, data: &PreparedData) -> u64 {
    let ((), m) = measure(|| {
        train_predictor_plan(plan, &data.train, &data.validation).unwrap();
    });
    assert_eq!(m.source, MemorySource::HeapAllocator);
    m.peak_bytes
}

fn memory_orderings(data: &PreparedData) -> Outcome {
    let short = |variant, base, regime| PredictorPlan {
        variant,
        depth: 5,
        base_width: base,
        residual: true,
        regime,
        one_step: TrainConfig { epochs: 1, batch_size: 8, samples_per_epoch: Some(8), validation_samples: Some(1), ..Default::default() },
        rollout_horizon: None,
        init_seed: 0,
        ..Default::default()
    };
    let patches = Regime::Patches { size: 64, stride: 32 };
    let mb = |b: u64| b as f64 / 1e6;
    let patch = training_peak(&short(Variant::Unet, 8, patches), data);
    let whole = training_peak(&short(Variant::Unet, 8, Regime::WholeDomain), data);
    let unet = training_peak(&short(Variant::Unet, 32, patches), data);
    let unetpp = training_peak(&short(Variant::UnetPlusPlus, 32, patches), data);
    let desk_pp = training_peak(&short(Variant::UnetPlusPlus, 8, patches), data);
    let ratio = unetpp as f64 / unet as f64;
    let pass = patch < whole && (1.3..=2.5).contains(&ratio);
    outcome(
        pass,
        format!(
            "training heap peak: 64x64 patches {:.1} MB < whole domain {:.1} MB; full-width UNet++/UNet {:.1}/{:.1} MB = {ratio:.2}x \
             (1.3-2.5x); desk-width ratio {:.2}x",
            mb(patch),
            mb(whole),
            mb(unetpp),
            mb(unet),
            desk_pp as f64 / patch as f64
        ),
    )
}

struct CompressionRun {
    ae_mse: f64,
    ae_gap: (f64, f64),
    aae_gap: (f64, f64),
    aae_mse: f64,
    baselines: Vec<(BaselineMethod, f64)>,
}

fn compression_run(data: &PreparedData) -> CompressionRun {
    let snaps: Vec<&FieldSnapshot> = data.validation.iter().flat_map(|s| s.snapshots().iter().step_by(6)).collect();
    let cfg = CompressionTrainConfig {
        epochs: 150,
        batch_size: 8,
        crop: Some(32),
        samples_per_epoch: Some(160),
        validation_samples: Some(20),
        seed: 3,
        ..Default::default()
    };
    let train = |kind| -> CompressionModel {
        let t = Instant::now();
        let (m, h) = train_compression_model(&AutoencoderSpec::full(kind).with_widths([16, 64, 64, 16]), data, &cfg, 7).unwrap();
        say(&format!("  {} trained in {:.0}s, best epoch {}, switch to reconstruction only: {:?}", kind.name(), t.elapsed().as_secs_f64(), h.best_epoch, h.mode_transition));
        m
    };
    let ae = train(CompressionKind::Ae);
    let aae = train(CompressionKind::Aae);
    let baselines = BaselineMethod::ALL
        .iter()
        .map(|&m| {
            let total: f64 = snaps.iter().map(|s| mse(s.data(), baseline_roundtrip(s, m).unwrap().data()).unwrap()).sum();
            (m, total / snaps.len() as f64)
        })
        .collect();
    CompressionRun {
        ae_mse: ae.reconstruction_mse(&snaps).unwrap(),
        aae_mse: aae.reconstruction_mse(&snaps).unwrap(),
        ae_gap: latent_moments(&ae, &snaps).unwrap().prior_gap(),
        aae_gap: latent_moments(&aae, &snaps).unwrap().prior_gap(),
        baselines,
    }
}

fn latent_regularisation(c: &CompressionRun) -> Outcome {
    let pass = c.aae_gap.0 < c.ae_gap.0 && c.aae_gap.1 < c.ae_gap.1 && c.ae_mse < 1e-3;
    outcome(
        pass,
        format!(
            "validation latents |mean|, |std-1|: AAE {:.3}, {:.3} vs AE {:.3}, {:.3}; AE reconstruction MSE {:.3e} (< 1e-3), AAE {:.3e}",
            c.aae_gap.0, c.aae_gap.1, c.ae_gap.0, c.ae_gap.1, c.ae_mse, c.aae_mse
        ),
    )
}

fn compression_baselines(c: &CompressionRun) -> Outcome {
    let pass = c.baselines.iter().all(|&(_, b)| c.ae_mse < b);
    let parts: Vec<String> = c.baselines.iter().map(|(m, b)| format!("{} {b:.3e}", m.name())).collect();
    outcome(pass, format!("validation MSE: AE {:.3e} vs {}", c.ae_mse, parts.join(", ")))
}

#[test]
fn acceptance_criteria() {
    let mut verdicts = vec![
        run("1", "metric oracle equivalence", Some(60.0), metric_oracles),
        run("3", "parameter-count targets", None, parameter_counts),
        run("4", "gradient correctness", Some(300.0), gradient_checks),
        run("5", "loss-schedule conformance", None, lambda_schedules),
    ];

    let t = Instant::now();
    let desk = desk_dataset();
    let data = PreparedData::split_last(&desk, VALIDATION_SIMS).unwrap();
    say(&format!("desk dataset: {} simulations, {} validation, ready in {:.0}s", desk.len(), VALIDATION_SIMS, t.elapsed().as_secs_f64()));

    verdicts.push(run("2", "grid-size invariance", Some(60.0), || grid_size_invariance(&data)));
    verdicts.push(run("6", "solver physics", Some(300.0), || solver_physics(&desk)));

    let mut compression = None;
    let c10 = run("10", "compression beats classical baselines", Some(1800.0), || {
        let c = compression_run(&data);
        let o = compression_baselines(&c);
        compression = Some(c);
        o
    });
    verdicts.push(match &compression {
        Some(c) => run("9", "adversarial latent regularisation", None, || latent_regularisation(c)),
        None => run("9", "adversarial latent regularisation", None, || outcome(false, "compression training failed")),
    });
    verdicts.push(c10);

    let mut memory = None;
    run("--", "memory measurement", None, || {
        let o = memory_orderings(&data);
        let pass = o.pass;
        memory = Some(o);
        outcome(pass, "see 8c")
    });
    let memory = memory.unwrap_or_else(|| outcome(false, "memory measurement failed"));

    let mut runs = Vec::new();
    let trained = run("--", "three-seed training", None, || {
        for seed in SEEDS {
            runs.push(seed_run(seed, &data));
        }
        outcome(true, format!("{} seeds", SEEDS.len()))
    });
    if trained.pass {
        verdicts.push(run("7", "desk-scale rollout PCC", None, || rollout_horizon_pcc(&runs)));
        let [a, b, c] = orderings(&runs, &memory);
        verdicts.push(run("8a", "rollout ≥ one-step", None, || a));
        verdicts.push(run("8b", "GSI ≥ whole-domain baseline", None, || b));
        verdicts.push(run("8c", "memory orderings", None, || c));
    } else {
        for (id, title) in [("7", "desk-scale rollout PCC"), ("8a", "rollout ≥ one-step"), ("8b", "GSI ≥ whole-domain baseline")] {
            verdicts.push(run(id, title, None, || outcome(false, "training failed")));
        }
        verdicts.push(run("8c", "memory orderings", None, || memory));
    }

    verdicts.sort_by_key(|v| {
        let digits: String = v.id.chars().take_while(char::is_ascii_digit).collect();
        (digits.parse::<u32>().unwrap_or(0), v.id)
    });
    let summary: Vec<String> = verdicts.iter().map(line).collect();
    say("\nacceptance summary");
    for l in &summary {
        say(l);
    }
    let report = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-report.txt");
    std::fs::write(&report, summary.join("\n") + "\n").unwrap();
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
