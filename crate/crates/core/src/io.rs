//! Plain-text formats.
//!
//! - Matrices: headerless CSV, one matrix row per line, numbers written with
//!   17 significant digits so a write/read cycle is bit-exact.
//! - Settings: TOML with file references, relative to the settings file:
//!
//! ```toml
//! m = "m.csv"
//! sigma = "sigma.csv"
//! gamma = "gamma.csv"   # optional, defaults to all ones
//! strategic = [0, 2]    # optional, zero-based
//! ```
//!
//! - Observations for belief recovery: TOML referencing the observed network,
//!   the covariance, the features and optionally risk aversions:
//!
//! ```toml
//! w = "w.csv"
//! sigma = "sigma.csv"
//! x = "x.csv"
//! ```
//!
//! - Trade panels: TOML listing agents, the covariance file and one network
//!   file per quarter:
//!
//! ```toml
//! agents = ["A", "B", "C"]
//! sigma = "sigma.csv"
//! [[quarters]]
//! label = "2020Q1"
//! w = "w_2020Q1.csv"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::TradePanel;
use crate::linalg::{Mat, Vector};
use crate::network::{NetworkSetting, RiskModel};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Parses a headerless numeric CSV.
pub fn parse_matrix(text: &str, path: &Path) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| format_err(path, format!("row {}: `{field}` is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(
                    path,
                    format!("row {} has {} entries, expected {}", line + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let m = Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(format_err(path, "non-finite entry"));
    }
    Ok(m)
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    parse_matrix(&read_to_string(path)?, path)
}

pub fn format_matrix(m: &Mat) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_string(path, &format_matrix(m))
}

/// A single row or single column of numbers.
pub fn read_vector(path: &Path) -> Result<Vector> {
    let m = read_matrix(path)?;
    match m.shape() {
        (1, c) => Ok(Vector::from_iterator(c, m.iter().copied())),
        (r, 1) => Ok(Vector::from_iterator(r, m.iter().copied())),
        (r, c) => Err(format_err(path, format!("expected a vector, found a {r}x{c} matrix"))),
    }
}

pub fn write_vector(path: &Path, v: &Vector) -> Result<()> {
    write_matrix(path, &Mat::from_column_slice(v.len(), 1, v.as_slice()))
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_to_string(path)?).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingFile {
    pub m: String,
    pub sigma: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
    #[serde(default)]
    pub strategic: Vec<usize>,
}

/// Loads a setting; domain validation errors keep their own kind.
pub fn load_setting(path: &Path) -> Result<NetworkSetting> {
    let file: SettingFile = parse_toml(path)?;
    let m = read_matrix(&resolve(path, &file.m))?;
    let sigma = read_matrix(&resolve(path, &file.sigma))?;
    let gamma = match &file.gamma {
        Some(g) => read_vector(&resolve(path, g))?.iter().copied().collect(),
        None => vec![1.0; sigma.nrows()],
    };
    NetworkSetting::new(m, gamma, sigma, file.strategic)
}

/// Writes `m.csv`, `sigma.csv`, `gamma.csv` and `setting.toml` into `dir`;
/// returns the settings path.
pub fn save_setting(dir: &Path, setting: &NetworkSetting) -> Result<PathBuf> {
    write_matrix(&dir.join("m.csv"), setting.m())?;
    write_matrix(&dir.join("sigma.csv"), setting.sigma())?;
    write_vector(&dir.join("gamma.csv"), &Vector::from_column_slice(setting.gamma()))?;
    let file = SettingFile {
        m: "m.csv".into(),
        sigma: "sigma.csv".into(),
        gamma: Some("gamma.csv".into()),
        strategic: setting.strategic().to_vec(),
    };
    let path = dir.join("setting.toml");
    write_string(&path, &toml::to_string(&file).expect("setting file serializes"))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub w: String,
    pub sigma: String,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<String>,
}

/// An observed network with its risk model and agent features.
#[derive(Debug, Clone)]
pub struct Observation {
    pub w: Mat,
    pub risk: RiskModel,
    pub x: Mat,
}

pub fn load_observation(path: &Path) -> Result<Observation> {
    let file: ObservationFile = parse_toml(path)?;
    let w = read_matrix(&resolve(path, &file.w))?;
    let sigma = read_matrix(&resolve(path, &file.sigma))?;
    let x = read_matrix(&resolve(path, &file.x))?;
    let gamma = match &file.gamma {
        Some(g) => read_vector(&resolve(path, g))?.iter().copied().collect(),
        None => vec![1.0; sigma.nrows()],
    };
    Ok(Observation { w, risk: RiskModel::new(sigma, gamma)?, x })
}

/// Writes `w.csv`, `x.csv` and `observation.toml` into `dir`, referencing an
/// existing `sigma.csv` and `gamma.csv` there; returns the observation path.
pub fn save_observation(dir: &Path, w: &Mat, x: &Mat) -> Result<PathBuf> {
    write_matrix(&dir.join("w.csv"), w)?;
    write_matrix(&dir.join("x.csv"), x)?;
    let file = ObservationFile {
        w: "w.csv".into(),
        sigma: "sigma.csv".into(),
        x: "x.csv".into(),
        gamma: Some("gamma.csv".into()),
    };
    let path = dir.join("observation.toml");
    write_string(&path, &toml::to_string(&file).expect("observation file serializes"))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuarterFile {
    pub label: String,
    pub w: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelFile {
    pub agents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    pub quarters: Vec<QuarterFile>,
}

pub fn load_panel(path: &Path) -> Result<TradePanel> {
    let file: PanelFile = parse_toml(path)?;
    let sigma_file = file.sigma.as_deref().ok_or(Error::MissingCovariance)?;
    let sigma = read_matrix(&resolve(path, sigma_file))?;
    let mut labels = Vec::with_capacity(file.quarters.len());
    let mut networks = Vec::with_capacity(file.quarters.len());
    for q in &file.quarters {
        labels.push(q.label.clone());
        networks.push(read_matrix(&resolve(path, &q.w))?);
    }
    TradePanel::new(labels, networks, sigma, file.agents)
}

/// Writes the panel's matrices and `panel.toml` into `dir`; returns the panel path.
pub fn save_panel(dir: &Path, panel: &TradePanel) -> Result<PathBuf> {
    write_matrix(&dir.join("sigma.csv"), &panel.sigma)?;
    let mut quarters = Vec::new();
    for (label, w) in panel.quarters.iter().zip(&panel.networks) {
        let name = format!("w_{label}.csv");
        write_matrix(&dir.join(&name), w)?;
        quarters.push(QuarterFile { label: label.clone(), w: name });
    }
    let file = PanelFile { agents: panel.agent_names.clone(), sigma: Some("sigma.csv".into()), quarters };
    let path = dir.join("panel.toml");
    write_string(&path, &toml::to_string(&file).expect("panel file serializes"))?;
    Ok(path)
}

/// CSV text from a header and pre-formatted rows.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
