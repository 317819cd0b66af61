//! Per-timestep metrics of predicted series, split-wise curves and summary tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Field, FieldSnapshot, ScalerParams, FIELD_COUNT, FIELD_NAMES};
use crate::error::{Error, Result};
use crate::metrics::{area_error, mse, pcc, quartiles, ssim, AREA_THRESHOLD, PCC_THRESHOLD};

/// All metrics are computed on min-max scaled fields.
pub const REPORT_NOTE: &str = "metrics computed per field on min-max scaled values";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based prediction step.
    pub step: usize,
    /// `None` where the correlation is undefined (a constant field).
    pub pcc: [Option<f64>; FIELD_COUNT],
    pub ssim: [f64; FIELD_COUNT],
    pub mse: [f64; FIELD_COUNT],
    pub area_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub model: String,
    pub sim_id: String,
    pub split: Split,
    pub steps: Vec<StepMetrics>,
}

/// Compare predictions with aligned ground truth (both physical units).
pub fn evaluate_series(
    model: &str,
    sim_id: &str,
    split: Split,
    predictions: &[FieldSnapshot],
    truth: &[FieldSnapshot],
    scaler: &ScalerParams,
) -> Result<SeriesMetrics> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::invalid(format!(
            "{sim_id}: {} predictions against {} truth snapshots",
            predictions.len(),
            truth.len()
        )));
    }
    let mut steps = Vec::with_capacity(predictions.len());
    for (i, (p, t)) in predictions.iter().zip(truth).enumerate() {
        if p.height() != t.height() || p.width() != t.width() {
            return Err(Error::invalid(format!("{sim_id}: step {} shapes differ", i + 1)));
        }
        let (ps, ts) = (scaler.apply(p)?, scaler.apply(t)?);
        let (h, w) = (p.height(), p.width());
        let mut m = StepMetrics { step: i + 1, pcc: [None; FIELD_COUNT], ssim: [0.0; FIELD_COUNT], mse: [0.0; FIELD_COUNT], area_error: 0.0 };
        for f in 0..FIELD_COUNT {
            m.pcc[f] = pcc(ts.field(f), ps.field(f))?;
            m.ssim[f] = ssim(ts.field(f), ps.field(f), h, w)?;
            m.mse[f] = mse(ts.field(f), ps.field(f))?;
        }
        let c = Field::Concentration.index();
        m.area_error = area_error(ts.field(c), ps.field(c), AREA_THRESHOLD)?;
        steps.push(m);
    }
    Ok(SeriesMetrics { model: model.into(), sim_id: sim_id.into(), split, steps })
}

/// Undefined correlations enter averages as 0, below any useful threshold.
pub fn pcc_or_floor(v: Option<f64>) -> f64 {
    v.unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub model: String,
    pub split: Split,
    pub simulations: usize,
    pub pcc: Vec<[f64; FIELD_COUNT]>,
    pub ssim: Vec<[f64; FIELD_COUNT]>,
    pub mse: Vec<[f64; FIELD_COUNT]>,
    pub area_error: Vec<f64>,
    pub threshold: f64,
}

impl Curves {
    pub fn len(&self) -> usize {
        self.pcc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pcc.is_empty()
    }

    /// Mean PCC per field over the first `steps` steps.
    pub fn horizon_mean_pcc(&self, steps: usize) -> [f64; FIELD_COUNT] {
        let n = steps.min(self.len()).max(1);
        let mut out = [0.0; FIELD_COUNT];
        for row in &self.pcc[..n.min(self.len())] {
            for f in 0..FIELD_COUNT {
                out[f] += row[f] / n as f64;
            }
        }
        out
    }
}

/// Average per-step metrics over the simulations of one split.
pub fn per_timestep_curves(reports: &[SeriesMetrics], split: Split) -> Result<Curves> {
    let chosen: Vec<&SeriesMetrics> = reports.iter().filter(|r| r.split == split).collect();
    let first = chosen.first().ok_or_else(|| Error::invalid(format!("no {split:?} simulations to average")))?;
    let len = first.steps.len();
    if chosen.iter().any(|r| r.steps.len() != len) {
        return Err(Error::invalid("series of different lengths cannot be averaged"));
    }
    let n = chosen.len() as f64;
    let mut curves = Curves {
        model: first.model.clone(),
        split,
        simulations: chosen.len(),
        pcc: vec![[0.0; FIELD_COUNT]; len],
        ssim: vec![[0.0; FIELD_COUNT]; len],
        mse: vec![[0.0; FIELD_COUNT]; len],
        area_error: vec![0.0; len],
        threshold: PCC_THRESHOLD,
    };
    for r in &chosen {
        for (t, s) in r.steps.iter().enumerate() {
            for f in 0..FIELD_COUNT {
                curves.pcc[t][f] += pcc_or_floor(s.pcc[f]) / n;
                curves.ssim[t][f] += s.ssim[f] / n;
                curves.mse[t][f] += s.mse[f] / n;
            }
            curves.area_error[t] += s.area_error / n;
        }
    }
    Ok(curves)
}

/// One row per model: final-step PCC and SSIM per field, mean MSE and area-error quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub pcc: [f64; FIELD_COUNT],
    pub ssim: [f64; FIELD_COUNT],
    pub mse: f64,
    pub area_q1: f64,
    pub area_median: f64,
    pub area_q3: f64,
}

/// Summary over the last step of every validation simulation.
pub fn summarize(model: &str, reports: &[SeriesMetrics]) -> Result<SummaryRow> {
    let finals: Vec<&StepMetrics> = reports
        .iter()
        .filter(|r| r.split == Split::Validation)
        .filter_map(|r| r.steps.last())
        .collect();
    if finals.is_empty() {
        return Err(Error::invalid("summary needs at least one validation simulation"));
    }
    let n = finals.len() as f64;
    let mut row = SummaryRow {
        model: model.into(),
        pcc: [0.0; FIELD_COUNT],
        ssim: [0.0; FIELD_COUNT],
        mse: 0.0,
        area_q1: 0.0,
        area_median: 0.0,
        area_q3: 0.0,
    };
    for s in &finals {
        for f in 0..FIELD_COUNT {
            row.pcc[f] += pcc_or_floor(s.pcc[f]) / n;
            row.ssim[f] += s.ssim[f] / n;
        }
        row.mse += s.mse.iter().sum::<f64>() / FIELD_COUNT as f64 / n;
    }
    let areas: Vec<f64> = finals.iter().map(|s| s.area_error).collect();
    let (q1, med, q3) = quartiles(&areas).expect("non-empty");
    (row.area_q1, row.area_median, row.area_q3) = (q1, med, q3);
    Ok(row)
}

/// Column names of `summary.csv`: model, eight metric columns, three quartile columns.
pub fn summary_header() -> Vec<String> {
    let mut h = vec!["model".to_string()];
    h.extend(FIELD_NAMES.iter().map(|f| format!("pcc_{f}")));
    h.extend(FIELD_NAMES.iter().map(|f| format!("ssim_{f}")));
    h.extend(["area_error_q1", "area_error_median", "area_error_q3"].map(String::from));
    h
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(summary_header()).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.model.clone()];
        rec.extend(r.pcc.iter().chain(&r.ssim).chain(&[r.area_q1, r.area_median, r.area_q3]).map(|v| format!("{v:.6}")));
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct StepRow<'a> {
    model: &'a str,
    sim_id: &'a str,
    split: Split,
    step: usize,
    field: &'static str,
    pcc: Option<f64>,
    ssim: f64,
    mse: f64,
    area_error: f64,
}

/// Long-format table: one row per model, simulation, step and field.
pub fn write_steps_csv(reports: &[SeriesMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for s in &r.steps {
            for (f, name) in FIELD_NAMES.iter().enumerate() {
                w.serialize(StepRow {
                    model: &r.model,
                    sim_id: &r.sim_id,
                    split: r.split,
                    step: s.step,
                    field: name,
                    pcc: s.pcc[f],
                    ssim: s.ssim[f],
                    mse: s.mse[f],
                    area_error: s.area_error,
                })
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plain-text renderings of the correlation/similarity table and the error table.
pub fn render_tables(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {REPORT_NOTE}; final prediction step, validation simulations\n");
    let _ = write!(s, "{:<24}", "model");
    for f in FIELD_NAMES {
        let _ = write!(s, " {:>10} {:>10}", format!("pcc:{}", &f[..f.len().min(6)]), format!("ssim:{}", &f[..f.len().min(5)]));
    }
    let _ = writeln!(s);
    for r in rows {
        let _ = write!(s, "{:<24}", r.model);
        for f in 0..FIELD_COUNT {
            let _ = write!(s, " {:>10.4} {:>10.4}", r.pcc[f], r.ssim[f]);
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s, "\n{:<24} {:>12} {:>10} {:>10} {:>10}", "model", "mse", "area_q1", "area_med", "area_q3");
    for r in rows {
        let _ = writeln!(s, "{:<24} {:>12.4e} {:>10.3} {:>10.3} {:>10.3}", r.model, r.mse, r.area_q1, r.area_median, r.area_q3);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(pcc: f64, area: f64) -> StepMetrics {
        StepMetrics { step: 1, pcc: [Some(pcc); 4], ssim: [0.5; 4], mse: [0.01; 4], area_error: area }
    }

    fn series(sim: &str, split: Split, steps: Vec<StepMetrics>) -> SeriesMetrics {
        SeriesMetrics { model: "m".into(), sim_id: sim.into(), split, steps }
    }

    #[test]
    fn single_simulation_curve_is_its_own_metric() {
        let r = vec![series("a", Split::Validation, vec![step(0.9, 1.0), step(0.8, 2.0)])];
        let c = per_timestep_curves(&r, Split::Validation).unwrap();
        assert_eq!(c.pcc[0], [0.9; 4]);
        assert_eq!(c.area_error, vec![1.0, 2.0]);
        assert_eq!(c.threshold, 0.75);
    }

    #[test]
    fn undefined_correlation_averages_as_zero() {
        let mut s = step(0.8, 0.0);
        s.pcc[2] = None;
        let r = vec![series("a", Split::Validation, vec![s]), series("b", Split::Validation, vec![step(0.8, 0.0)])];
        let c = per_timestep_curves(&r, Split::Validation).unwrap();
        assert!((c.pcc[0][2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn misaligned_lengths_error() {
        let r = vec![series("a", Split::Train, vec![step(1.0, 0.0)]), series("b", Split::Train, vec![step(1.0, 0.0), step(1.0, 0.0)])];
        assert!(per_timestep_curves(&r, Split::Train).is_err());
        assert!(per_timestep_curves(&r, Split::Validation).is_err());
    }

    #[test]
    fn summary_quartiles_from_final_steps() {
        let r = vec![
            series("a", Split::Validation, vec![step(0.1, 9.0), step(0.9, -2.0)]),
            series("b", Split::Validation, vec![step(0.9, 0.0)]),
            series("c", Split::Validation, vec![step(0.9, 2.0)]),
            series("d", Split::Train, vec![step(0.9, 50.0)]),
        ];
        let row = summarize("m", &r).unwrap();
        assert_eq!(row.area_median, 0.0);
        assert_eq!((row.area_q1, row.area_q3), (-1.0, 1.0));
        assert!((row.pcc[0] - 0.9).abs() < 1e-12);
        assert_eq!(summary_header().len(), 12);
    }

    #[test]
    fn perfect_prediction_gives_unit_curve() {
        let snaps: Vec<FieldSnapshot> = (0..2)
            .map(|t| FieldSnapshot::new(16, 16, (0..4 * 256).map(|i| ((i * 7 + t) % 13) as f32 / 13.0).collect()).unwrap())
            .collect();
        let scaler = ScalerParams { min: vec![0.0; 4], max: vec![1.0; 4] };
        let r = evaluate_series("m", "a", Split::Validation, &snaps, &snaps, &scaler).unwrap();
        let c = per_timestep_curves(&[r], Split::Validation).unwrap();
        for row in c.pcc.iter().chain(&c.ssim) {
            assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn csv_schema_has_twelve_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        let rows = vec![summarize("m", &[series("a", Split::Validation, vec![step(0.5, 1.0)])]).unwrap()];
        write_summary_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
        assert!(render_tables(&rows).contains("area_med"));
    }
}
