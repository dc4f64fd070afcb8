//! Experiment configuration: one TOML file, every table strict about keys.

use std::path::{Path, PathBuf};

use fkpursuit::dictionary::{BlockDictionary, WavenumberGrid};
use fkpursuit::eval::EnvSampler;
use fkpursuit::pursuit::SolverOptions;
use fkpursuit::rbm::TrainingConfig;
use fkpursuit::waveguide::{ArrayGeometry, EnvironmentSpec, SourceSpec};
use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSection,
    pub source: SourceSection,
    pub array: ArraySection,
    pub frequencies: FrequencySection,
    pub grid: WavenumberGrid,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub sampler: Option<EnvSampler>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub rbm: RbmSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub render: RenderSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentKindName {
    Ideal,
    Pekeris,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub kind: EnvironmentKindName,
    pub depth: f64,
    pub water_speed: f64,
    pub bottom_speed: Option<f64>,
    #[serde(default = "default_water_density")]
    pub water_density: f64,
    pub bottom_density: Option<f64>,
}

fn default_water_density() -> f64 {
    1000.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub depth: f64,
    /// The factor Q.
    #[serde(default = "one")]
    pub scale: f64,
    /// Real spectrum S(f) per frequency; flat when absent.
    pub spectrum: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub receiver_depth: f64,
    pub ranges: Option<Vec<f64>>,
    pub first_range: Option<f64>,
    pub spacing: Option<f64>,
    pub sensors: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySection {
    pub values: Option<Vec<f64>>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub snr_db: Option<f64>,
    pub noise_variance: Option<f64>,
    /// Snap modal wavenumbers onto the grid before synthesis.
    pub grid_aligned: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            snr_db: None,
            noise_variance: None,
            grid_aligned: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub count: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { count: 1000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbmSection {
    /// P; defaults to the number of frequencies.
    pub hidden: Option<usize>,
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub init_std: f64,
}

impl Default for RbmSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        RbmSection {
            hidden: None,
            cd_steps: t.cd_steps,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            minibatch_size: t.minibatch_size,
            weight_decay: t.weight_decay,
            momentum: t.momentum,
            init_std: t.init_std,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Taken from the measurement file when absent.
    pub sigma_w_sq: Option<f64>,
    pub sigma_x_sq: Option<f64>,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub db: bool,
    pub dynamic_range_db: f64,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            db: false,
            dynamic_range_db: 40.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Output directory for every default file name.
    pub dir: PathBuf,
    pub seed: u64,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            dir: PathBuf::from("."),
            seed: 0,
        }
    }
}

/// Stage offsets added to the master seed.
pub const SEED_SIMULATE: u64 = 0;
pub const SEED_DATASET: u64 = 1;
pub const SEED_TRAIN: u64 = 2;

impl ExperimentConfig {
    /// Parses a config file and applies `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text.parse()?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let config: ExperimentConfig = table.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.environment()?;
        let freqs = self.frequencies()?;
        self.source(freqs.len())?;
        self.array()?;
        self.grid.validate()?;
        if let Some(s) = &self.sampler {
            s.validate()?;
        }
        self.solver.options.validate()?;
        Ok(())
    }

    pub fn environment(&self) -> CliResult<EnvironmentSpec> {
        let e = &self.environment;
        let env = match e.kind {
            EnvironmentKindName::Ideal => {
                if e.bottom_speed.is_some() || e.bottom_density.is_some() {
                    return Err(CliError::Config(
                        "environment: bottom_speed and bottom_density apply only to kind = \"pekeris\"".into(),
                    ));
                }
                let mut env = EnvironmentSpec::ideal(e.depth, e.water_speed);
                env.water_density = e.water_density;
                env
            }
            EnvironmentKindName::Pekeris => {
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| CliError::Config(format!("environment.{name} is required for kind = \"pekeris\"")))
                };
                EnvironmentSpec::pekeris(
                    e.depth,
                    e.water_speed,
                    need(e.bottom_speed, "bottom_speed")?,
                    e.water_density,
                    need(e.bottom_density, "bottom_density")?,
                )
            }
        };
        env.validate()?;
        Ok(env)
    }

    pub fn frequencies(&self) -> CliResult<Vec<f64>> {
        let f = &self.frequencies;
        let freqs = match (&f.values, f.min, f.max, f.count) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(n)) if n >= 1 => {
                if n == 1 {
                    vec![lo]
                } else {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            }
            _ => {
                return Err(CliError::Config(
                    "frequencies: give either `values` or all of `min`, `max`, `count` (count >= 1)".into(),
                ))
            }
        };
        if freqs.is_empty() || freqs.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(CliError::Config("frequencies must be positive and nonempty".into()));
        }
        Ok(freqs)
    }

    pub fn source(&self, n_freq: usize) -> CliResult<SourceSpec> {
        let mut source = SourceSpec::flat(n_freq, self.source.depth);
        source.scale = self.source.scale;
        if let Some(s) = &self.source.spectrum {
            if s.len() != n_freq {
                return Err(CliError::Config(format!(
                    "source.spectrum has {} entries but there are {n_freq} frequencies",
                    s.len()
                )));
            }
            source.spectrum = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        }
        Ok(source)
    }

    pub fn array(&self) -> CliResult<ArrayGeometry> {
        let a = &self.array;
        let geometry = match (&a.ranges, a.first_range, a.spacing, a.sensors) {
            (Some(r), None, None, None) => ArrayGeometry::new(r.clone(), a.receiver_depth)?,
            (None, Some(first), Some(dr), Some(n)) => {
                let g = ArrayGeometry::uniform(first, dr, n, a.receiver_depth);
                g.validate()?;
                g
            }
            _ => {
                return Err(CliError::Config(
                    "array: give either `ranges` or all of `first_range`, `spacing`, `sensors`".into(),
                ))
            }
        };
        Ok(geometry)
    }

    pub fn dictionary(&self) -> CliResult<BlockDictionary> {
        Ok(BlockDictionary::build(self.grid, &self.array()?, &self.frequencies()?)?)
    }

    pub fn training(&self) -> TrainingConfig {
        let r = &self.rbm;
        TrainingConfig {
            cd_steps: r.cd_steps,
            learning_rate: r.learning_rate,
            epochs: r.epochs,
            minibatch_size: r.minibatch_size,
            weight_decay: r.weight_decay,
            momentum: r.momentum,
            seed: self.io.seed.wrapping_add(SEED_TRAIN),
            init_std: r.init_std,
            ..TrainingConfig::default()
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.io.dir.join(name)
    }
}

/// `a.b.c=value`: the value is parsed as a TOML value, falling back to a
/// plain string.
fn apply_override(table: &mut toml::Table, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` must look like key.path=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
[environment]
kind = "pekeris"
depth = 100.0
water_speed = 1500.0
bottom_speed = 1600.0
bottom_density = 1500.0

[source]
depth = 30.0

[array]
receiver_depth = 60.0
first_range = 1000.0
spacing = 30.0
sensors = 16

[frequencies]
min = 40.0
max = 80.0
count = 4

[grid]
k_min = 0.14
k_max = 0.34
points = 32
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.frequencies().unwrap(), vec![40.0, 40.0 + 40.0 / 3.0, 40.0 + 80.0 / 3.0, 80.0]);
        assert_eq!(c.rbm.epochs, 200);
        assert_eq!(c.solver.options.max_sweeps, 200);
        assert!(c.simulation.grid_aligned);
        assert_eq!(c.dictionary().unwrap().n_coeffs(), 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("spacing = 30.0", "spacing = 30.0\nspaceing = 3.0");
        assert!(matches!(ExperimentConfig::parse(&text, &[]), Err(CliError::Config(_))));
        let text = format!("{MINIMAL}\n[solver.options]\nmax_sweep = 3\n");
        assert!(ExperimentConfig::parse(&text, &[]).is_err());
    }

    #[test]
    fn overrides_replace_and_create_keys() {
        let c = ExperimentConfig::parse(
            MINIMAL,
            &[
                "array.sensors=8".into(),
                "solver.options.variant=paper_literal".into(),
                "solver.sigma_x_sq=2.5".into(),
                "io.seed=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.array().unwrap().len(), 8);
        assert_eq!(c.solver.options.variant, fkpursuit::pursuit::QsVariant::PaperLiteral);
        assert_eq!(c.solver.sigma_x_sq, Some(2.5));
        assert_eq!(c.training().seed, 9);
        assert!(ExperimentConfig::parse(MINIMAL, &["nonsense".into()]).is_err());
        assert!(ExperimentConfig::parse(MINIMAL, &["grid.nope=1".into()]).is_err());
    }

    #[test]
    fn inconsistent_sections_are_reported() {
        let text = MINIMAL.replace("kind = \"pekeris\"", "kind = \"ideal\"");
        let err = ExperimentConfig::parse(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("bottom_speed"));
        let text = MINIMAL.replace("count = 4", "count = 4\nvalues = [1.0]");
        assert!(ExperimentConfig::parse(&text, &[]).is_err());
        let text = format!("{MINIMAL}\n[source.x]\n");
        assert!(ExperimentConfig::parse(&text, &[]).is_err());
    }
}
