//! Device CSV ingestion and jump-table model serialization.
//!
//! Device data arrives as UTF-8 CSV with the exact header `g_ns,delta_g_ns`
//! and one (G, ΔG) pair per row, both in nanosiemens. On load the compliance
//! transform clips each landing point G+ΔG into the conductance window, so
//! every stored sample is physically reachable. Models persist as JSON with
//! a schema version and a provenance block; loading revalidates every
//! profile invariant, so a tampered document (negative sigma, inverted
//! bounds) is rejected rather than propagated.

use crate::device::{ConductanceBounds, DeviceDataset, JumpTablePair, Profile, Sample};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

pub const CSV_HEADER: [&str; 2] = ["g_ns", "delta_g_ns"];
pub const MODEL_SCHEMA_VERSION: &str = "1";

fn data_err(path: &Path, detail: String) -> Error {
    Error::DataFormat {
        path: path.display().to_string(),
        detail,
    }
}

/// Loads a (G, ΔG) dataset. `voltage` is a label carried through to
/// summaries; it does not affect parsing. Line numbers in errors are
/// 1-based file lines (the header is line 1).
pub fn load_device_csv(
    path: &Path,
    voltage: Option<f64>,
    bounds: &ConductanceBounds,
) -> Result<DeviceDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() != 2 || header[0] != *CSV_HEADER[0] || header[1] != *CSV_HEADER[1] {
        return Err(data_err(
            path,
            format!(
                "expected header \"{},{}\", found \"{}\"",
                CSV_HEADER[0],
                CSV_HEADER[1],
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(samples.len() as u64 + 2);
        if record.len() != 2 {
            return Err(data_err(
                path,
                format!("line {line}: expected 2 fields, found {}", record.len()),
            ));
        }
        let parse = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field.trim().parse().map_err(|_| {
                data_err(path, format!("line {line}: {name} is not a number: {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(data_err(path, format!("line {line}: {name} is not finite: {field:?}")));
            }
            Ok(v)
        };
        let g = parse(&record[0], "g_ns")?;
        let dg = parse(&record[1], "delta_g_ns")?;
        if !bounds.contains(g) {
            return Err(data_err(
                path,
                format!(
                    "line {line}: g_ns {g} outside conductance window [{}, {}]",
                    bounds.g_min, bounds.g_max
                ),
            ));
        }
        // Compliance transform: the landing point cannot leave the window.
        let dg = if bounds.contains(g + dg) {
            dg
        } else {
            bounds.clip(g + dg) - g
        };
        samples.push(Sample { g, delta_g: dg });
    }
    DeviceDataset::new(samples, voltage)
}

/// Writes the dataset in the same dialect [`load_device_csv`] reads.
/// Values print as the shortest decimal string that parses back to the
/// identical bits, so a save/load cycle is exact.
pub fn save_device_csv(path: &Path, dataset: &DeviceDataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for s in &dataset.samples {
        writer.write_record([format!("{}", s.g), format!("{}", s.delta_g)])?;
    }
    writer.flush()?;
    Ok(())
}

/// How a persisted model was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMethod {
    Target,
    Binning,
    Optimized,
}

/// Reproducibility block stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub method: ModelMethod,
    /// SHA-256 of the source CSV bytes, when the model came from a file.
    pub dataset_sha256: Option<String>,
    pub seed: Option<u64>,
    /// Flat snapshot of the configuration that produced the model.
    pub config: serde_json::Value,
}

impl ModelProvenance {
    pub fn new(method: ModelMethod) -> Self {
        Self {
            method,
            dataset_sha256: None,
            seed: None,
            config: serde_json::Value::Null,
        }
    }

    /// None when no source hash was recorded.
    pub fn matches_dataset(&self, csv_bytes: &[u8]) -> Option<bool> {
        self.dataset_sha256
            .as_deref()
            .map(|h| h == sha256_hex(csv_bytes))
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileDoc {
    knots: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl ProfileDoc {
    fn of(p: &Profile) -> Self {
        Self {
            knots: p.knots().to_vec(),
            mu: p.mu().to_vec(),
            sigma: p.sigma().to_vec(),
        }
    }

    fn build(self) -> Result<Profile> {
        Profile::new(self.knots, self.mu, self.sigma)
    }
}

#[derive(Serialize, Deserialize)]
struct BoundsDoc {
    g_min: f64,
    g_max: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    schema_version: String,
    set: ProfileDoc,
    reset: ProfileDoc,
    bounds: BoundsDoc,
    provenance: ModelProvenance,
}

/// A model read back from disk.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub tables: JumpTablePair,
    pub provenance: ModelProvenance,
}

pub fn save_model(path: &Path, tables: &JumpTablePair, provenance: &ModelProvenance) -> Result<()> {
    let doc = ModelDoc {
        schema_version: MODEL_SCHEMA_VERSION.to_string(),
        set: ProfileDoc::of(&tables.set_table),
        reset: ProfileDoc::of(&tables.reset_table),
        bounds: BoundsDoc {
            g_min: tables.bounds.g_min,
            g_max: tables.bounds.g_max,
        },
        provenance: provenance.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a model and revalidates every structural invariant.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let file = std::fs::File::open(path)?;
    let doc: ModelDoc = serde_json::from_reader(std::io::BufReader::new(file))?;
    if doc.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported model schema version {:?} (expected {:?})",
            doc.schema_version, MODEL_SCHEMA_VERSION
        )));
    }
    let bounds = ConductanceBounds::new(doc.bounds.g_min, doc.bounds.g_max)?;
    let tables = JumpTablePair::new(doc.set.build()?, doc.reset.build()?, bounds);
    Ok(SavedModel {
        tables,
        provenance: doc.provenance,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
