//! Experiment configuration: a TOML file, optionally overridden key by key from
//! the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nlkg_core::data::InitialData;
use nlkg_core::evolution::EvolveConfig;
use nlkg_core::ground_state::{TmConfig, TmReport};
use nlkg_core::{LabError, NonlinearityModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "NLKG_LAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to `$NLKG_LAB_OUT` (or the working directory).
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub ground_state: GroundStateSpec,
    #[serde(default = "default_data")]
    pub data: InitialData,
    #[serde(default)]
    pub classify: ClassifySpec,
    #[serde(default)]
    pub evolve: EvolveConfig,
    pub sweep: Option<SweepSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("nlkg-out")
}

fn default_data() -> InitialData {
    InitialData::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `|u|^{2*}/2*`; the static problem is massless (`c = 0`).
    Critical { dim: usize },
    /// `λ|u|^p/p` with supplied mass coefficient.
    Subcritical {
        dim: usize,
        p: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        mass_shift: f64,
    },
    /// Two-dimensional exponential model; the mass coefficient is supplied or
    /// computed from the Trudinger–Moser ratio.
    Exp2d {
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "two")]
        beta: f64,
        lambda: f64,
        #[serde(default = "five")]
        audit_p: f64,
        mass_shift: MassShift,
        #[serde(default)]
        tm: TmConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassShift {
    Supplied(f64),
    /// The string `"computed"`.
    Computed(Computed),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Computed {
    Computed,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn five() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub r_max: f64,
    pub staggered: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 2001,
            r_max: 40.0,
            staggered: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateSpec {
    pub n: usize,
    pub r_max: f64,
    pub bracket: (f64, f64),
}

impl Default for GroundStateSpec {
    fn default() -> Self {
        Self {
            n: 8192,
            r_max: 100.0,
            bracket: (0.5, 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySpec {
    /// Threshold `m`; taken from the stored ground state when absent.
    pub threshold: Option<f64>,
    /// Mass coefficient of the classifying functionals.
    pub mass: f64,
    /// Random admissible pairs audited alongside the canonical ones.
    pub extra_pairs: usize,
    pub sign_tol: f64,
    pub energy_tol: f64,
}

impl Default for ClassifySpec {
    fn default() -> Self {
        Self {
            threshold: None,
            mass: 1.0,
            extra_pairs: 5,
            sign_tol: 1e-9,
            energy_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Name of the numeric initial-data field that is varied, e.g. `amplitude`.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Concurrent points; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
}

/// Parses `key.path=value` as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> anyhow::Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .with_context(|| format!("override `{raw}` is not of the form key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{raw}` has an empty key segment");
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .with_context(|| format!("`{key}` is not a table and cannot take nested overrides"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` and applies `overrides` (`key.path=value`, later wins).
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| LabError::Config(format!("{e}")))?;
        for raw in overrides {
            let (path, value) = parse_override(raw).map_err(|e| LabError::Config(e.to_string()))?;
            apply_override(&mut table, &path, value).map_err(|e| LabError::Config(e.to_string()))?;
        }
        let cfg: Self = table.try_into().map_err(|e| LabError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(LabError::Config("sweep needs at least one value".into()));
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Config("sweep values must be finite".into()));
            }
        }
        if self.ground_state.bracket.0 >= self.ground_state.bracket.1 {
            return Err(LabError::Config("ground_state.bracket must be increasing".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            ModelSpec::Critical { dim } | ModelSpec::Subcritical { dim, .. } => *dim,
            ModelSpec::Exp2d { .. } => 2,
        }
    }

    /// Builds the nonlinearity, computing the mass coefficient when requested.
    pub fn build_model(&self) -> Result<(NonlinearityModel, Option<TmReport>), LabError> {
        match &self.model {
            ModelSpec::Critical { dim } => Ok((NonlinearityModel::critical(*dim)?, None)),
            ModelSpec::Subcritical {
                dim,
                p,
                lambda,
                mass_shift,
            } => Ok((NonlinearityModel::subcritical(*dim, *p, *lambda, *mass_shift)?, None)),
            ModelSpec::Exp2d {
                kappa,
                beta,
                lambda,
                audit_p,
                mass_shift,
                tm,
            } => {
                let base = NonlinearityModel::exp2d(*kappa, *beta, *lambda, *audit_p, 0.0)?;
                match mass_shift {
                    MassShift::Supplied(c) => Ok((base.with_mass_shift(*c)?, None)),
                    MassShift::Computed(_) => {
                        let rep = nlkg_core::ground_state::tm_constant(&base, tm)?;
                        if !(rep.value < 1.0) {
                            return Err(LabError::Domain(format!(
                                "computed mass coefficient {} is not below 1; lower lambda",
                                rep.value
                            )));
                        }
                        Ok((base.with_mass_shift(rep.value)?, Some(rep)))
                    }
                }
            }
        }
    }

    /// Output directory resolved against `$NLKG_LAB_OUT`.
    pub fn output_dir(&self) -> PathBuf {
        if self.output.is_absolute() {
            return self.output.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(&self.output),
            None => self.output.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output = PathBuf::new();
        let json = serde_json::to_string(&canon).expect("configuration serialises");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    /// The same configuration with the initial-data field `parameter` set to `value`.
    pub fn with_data_parameter(&self, parameter: &str, value: f64) -> Result<Self, LabError> {
        let mut data = serde_json::to_value(&self.data)?;
        let obj = data
            .as_object_mut()
            .ok_or_else(|| LabError::Config("initial data is not a table".into()))?;
        match obj.get(parameter) {
            Some(v) if v.is_number() || v.is_null() => {}
            _ => {
                return Err(LabError::Config(format!(
                    "initial data of kind {} has no numeric field `{parameter}`",
                    obj.get("kind").and_then(|k| k.as_str()).unwrap_or("?")
                )))
            }
        }
        obj.insert(parameter.to_string(), serde_json::json!(value));
        let mut out = self.clone();
        out.data = serde_json::from_value(data)?;
        out.sweep = None;
        Ok(out)
    }
}
