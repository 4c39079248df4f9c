//! Declarative run configuration: a TOML file with sections mirroring the
//! command-line flags. Flags override file values.

use excursion_core::{Error, IsotropicKernel, PointSet, Result};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: Option<String>,
    pub scale: Option<f64>,
    pub variance: Option<f64>,
    /// CSV of (distance, value) rows for the tabulated family.
    pub file: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: Option<usize>,
    pub r: Option<f64>,
    pub rho: Option<f64>,
    pub rho_max: Option<f64>,
    pub k1: Option<String>,
    pub k2: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: Option<usize>,
    pub rho_points: Option<usize>,
    pub b_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub samples: Option<usize>,
    pub u: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub estimator: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<String>,
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::domain(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::domain(format!("config parse error: {e}")))
    }
}

/// Builds the kernel from (possibly merged) settings.
pub fn build_kernel(
    family: &str,
    scale: f64,
    variance: f64,
    table_file: Option<&str>,
) -> Result<IsotropicKernel> {
    match family {
        "squared-exponential" | "se" => IsotropicKernel::squared_exponential(scale, variance),
        "exponential" | "exp" => IsotropicKernel::exponential(scale, variance),
        "tabulated" | "tab" => {
            let file = table_file
                .ok_or_else(|| Error::domain("tabulated kernel needs a kernel file"))?;
            let (distances, values) = read_kernel_table(Path::new(file))?;
            IsotropicKernel::tabulated(distances, values)
        }
        other => Err(Error::domain(format!(
            "unknown kernel family '{other}' (use squared-exponential, exponential or tabulated)"
        ))),
    }
}

/// Reads a (distance, value) CSV table.
pub fn read_kernel_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::domain(format!("cannot read kernel table {}: {e}", path.display())))?;
    let mut distances = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            if lineno == 0 {
                continue; // header row
            }
            return Err(Error::domain(format!(
                "kernel table line {} must have two columns",
                lineno + 1
            )));
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(d), Ok(v)) => {
                distances.push(d);
                values.push(v);
            }
            _ if lineno == 0 => continue, // header row
            _ => {
                return Err(Error::domain(format!(
                    "kernel table line {} is not numeric",
                    lineno + 1
                )))
            }
        }
    }
    Ok((distances, values))
}

/// Reads a point set CSV: one point per row, d columns.
pub fn read_point_set(path: &Path) -> Result<PointSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::domain(format!("cannot read point set {}: {e}", path.display())))?;
    let mut dim: Option<usize> = None;
    let mut coords = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(row) => {
                match dim {
                    None => dim = Some(row.len()),
                    Some(d) if d != row.len() => {
                        return Err(Error::domain(format!(
                            "point set {}: row {} has {} columns, expected {d}",
                            path.display(),
                            lineno + 1,
                            row.len()
                        )))
                    }
                    _ => {}
                }
                coords.extend(row);
            }
            None if lineno == 0 => continue, // header row
            None => {
                return Err(Error::domain(format!(
                    "point set {}: row {} is not numeric",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::domain(format!("point set {} is empty", path.display())))?;
    PointSet::new(dim, coords)
}
