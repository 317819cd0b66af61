//! On-disk dataset format: `manifest.json` plus one raw little-endian `f32` file per simulation.
//!
//! Each binary file is timestep-major, then field-major, then row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FieldSnapshot, SimulationSeries, FIELD_COUNT, FIELD_NAMES, LATENT_FIELD_NAMES};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "float32-le";
const LAYOUT: &str = "timestep,field,row,col";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationEntry {
    pub sim_id: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub dx: f64,
    pub dt_snapshot: f64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub field_order: Vec<String>,
    pub dtype: String,
    pub layout: String,
    #[serde(default)]
    pub latent: bool,
    pub simulations: Vec<SimulationEntry>,
}

fn expected_fields(latent: bool) -> &'static [&'static str; FIELD_COUNT] {
    if latent {
        &LATENT_FIELD_NAMES
    } else {
        &FIELD_NAMES
    }
}

pub fn write_dataset(series: &[SimulationSeries], dir: &Path, latent: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(series.len());
    for s in series {
        let file = format!("{}.bin", s.sim_id);
        let mut bytes = Vec::with_capacity(s.len() * FIELD_COUNT * s.height() * s.width() * 4);
        for snap in s.snapshots() {
            for v in snap.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(SimulationEntry {
            sim_id: s.sim_id.clone(),
            seed: s.seed,
            height: s.height(),
            width: s.width(),
            timesteps: s.len(),
            dx: s.dx,
            dt_snapshot: s.dt_snapshot,
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        field_order: expected_fields(latent).iter().map(|s| s.to_string()).collect(),
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        latent,
        simulations: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Json { context: path.display().to_string(), source: e })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Json { context: path.display().to_string(), source: e })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::invalid(format!("unsupported dataset format version {}", manifest.format_version)));
    }
    let expected = expected_fields(manifest.latent);
    if manifest.field_order.len() != FIELD_COUNT || manifest.field_order.iter().zip(expected.iter()).any(|(a, b)| a != b) {
        return Err(Error::invalid(format!(
            "field order {:?} does not match the required order {:?}",
            manifest.field_order, expected
        )));
    }
    if manifest.dtype != DTYPE || manifest.layout != LAYOUT {
        return Err(Error::invalid(format!("unsupported dtype/layout `{}` / `{}`", manifest.dtype, manifest.layout)));
    }
    Ok(manifest)
}

/// Returns the series and whether the dataset holds latent codes.
pub fn read_dataset(dir: &Path) -> Result<(Vec<SimulationSeries>, bool)> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.simulations.len());
    for e in &manifest.simulations {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::in_simulation(&e.sim_id, Error::io(&path, err)))?;
        let per_snap = FIELD_COUNT * e.height * e.width;
        let expected = e.timesteps * per_snap * 4;
        if bytes.len() != expected {
            return Err(Error::Simulation {
                sim_id: e.sim_id.clone(),
                message: format!("payload size mismatch: expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let values: Vec<f32> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let snaps = values
            .chunks_exact(per_snap)
            .map(|c| FieldSnapshot::new(e.height, e.width, c.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|err| Error::in_simulation(&e.sim_id, err))?;
        let s = SimulationSeries::new(e.sim_id.clone(), e.seed, e.dx, e.dt_snapshot, snaps)?;
        out.push(s);
    }
    Ok((out, manifest.latent))
}
