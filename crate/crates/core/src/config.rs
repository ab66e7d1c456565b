//! Run configuration: a sectioned TOML file with `[market]`, `[contract]`,
//! `[training]` and optional `[sweep]` tables. Every key is optional and
//! falls back to the reference case. The resolved configuration is written
//! back as `manifest.toml`, which is itself a valid run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contracts::{ContractKind, ContractSpec, ContractTerms};
use crate::error::{Error, Result};
use crate::market::{Dynamics, ExternalPaths, MarketParams};
use crate::training::TrainConfig;

/// Restarts per sweep point when neither the file nor the command line
/// chooses.
pub const DEFAULT_RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolumeSpec {
    Constant(f64),
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_exponent: Option<f64>,
    /// `arithmetic-brownian`, `geometric-brownian` or `external-file`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<String>,
    /// Relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shares: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notional: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Inclusive `[first, last]`; `[]` disables early exercise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exercise_set: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Eta,
    Gamma,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::Eta => "eta",
            SweepParameter::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eta" => Ok(Self::Eta),
            "gamma" => Ok(Self::Gamma),
            _ => Err(format!("unknown sweep parameter `{s}` (eta, gamma)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

/// Written into manifests; ignored when a manifest is loaded as a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub command: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arguments: Vec<String>,
}

/// The file as written by the user, before defaults and validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub contract: ContractSection,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tag: String,
    pub output_dir: PathBuf,
    pub market: MarketParams,
    pub contract: ContractSpec,
    pub training: TrainConfig,
    /// Absolute path of the external path file, if any.
    pub path_file: Option<PathBuf>,
    pub sweep: Option<SweepSection>,
}

/// Reference early-exercise window scaled to `days`: `[days/3 + 1, days − 1]`.
pub fn default_window(days: usize) -> (usize, usize) {
    ((days / 3 + 1).min(days - 1), days - 1)
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("line {}", text[..s.start].lines().count().max(1)))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies defaults, loads referenced files and validates every field.
    /// `base` is the directory relative paths resolve against.
    pub fn resolve(&self, base: &Path) -> Result<RunConfig> {
        let tag = self.tag.clone().unwrap_or_else(|| "run".into());
        if tag.is_empty() || tag.contains(['/', '\\']) {
            return Err(Error::config("tag", "must be a non-empty name without path separators"));
        }
        let output_dir = self.output_dir.clone().unwrap_or_else(|| Path::new("runs").join(&tag));
        let (market, path_file) = self.market.resolve(base)?;
        market.validate()?;
        let contract = self.contract.resolve(market.days)?;
        contract.validate(market.days)?;
        self.training.validate()?;
        if let Some(sw) = &self.sweep {
            sw.validate()?;
        }
        Ok(RunConfig {
            tag,
            output_dir,
            market,
            contract,
            training: self.training.clone(),
            path_file,
            sweep: self.sweep.clone(),
        })
    }
}

impl SweepSection {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("sweep.values", "must be finite and non-negative"));
        }
        if self.restarts == 0 {
            return Err(Error::config("sweep.restarts", "must be at least 1"));
        }
        Ok(())
    }
}

impl MarketSection {
    fn resolve(&self, base: &Path) -> Result<(MarketParams, Option<PathBuf>)> {
        let reference = MarketParams::reference();
        let days = self.days.unwrap_or(reference.days);
        let volume = match &self.volume {
            None => vec![reference.volume[0]; days],
            Some(VolumeSpec::Constant(v)) => vec![*v; days],
            Some(VolumeSpec::Schedule(v)) => v.clone(),
        };
        let mut path_file = None;
        let dynamics = match self.dynamics.as_deref().unwrap_or("arithmetic-brownian") {
            "arithmetic-brownian" => Dynamics::ArithmeticBrownian,
            "geometric-brownian" => Dynamics::GeometricBrownian,
            "external-file" => {
                let rel = self
                    .path_file
                    .as_ref()
                    .ok_or_else(|| Error::config("market.path_file", "required by external-file dynamics"))?;
                let full = base.join(rel);
                let paths = ExternalPaths::load(&full).map_err(|e| match e {
                    Error::Config { .. } => e,
                    other => Error::config("market.path_file", format!("{}: {other}", full.display())),
                })?;
                path_file = Some(std::path::absolute(&full)?);
                Dynamics::External(Arc::new(paths))
            }
            other => {
                return Err(Error::config(
                    "market.dynamics",
                    format!("unknown dynamics `{other}` (arithmetic-brownian, geometric-brownian, external-file)"),
                ))
            }
        };
        if self.path_file.is_some() && path_file.is_none() {
            return Err(Error::config("market.path_file", "only used with external-file dynamics"));
        }
        let mp = MarketParams {
            s0: self.s0.unwrap_or(reference.s0),
            sigma: self.sigma.unwrap_or(reference.sigma),
            days,
            dt: self.dt.unwrap_or(reference.dt),
            volume,
            eta: self.eta.unwrap_or(reference.eta),
            cost_exponent: self.cost_exponent.unwrap_or(reference.cost_exponent),
            dynamics,
        };
        Ok((mp, path_file))
    }

    fn from_params(mp: &MarketParams, path_file: Option<&Path>) -> Self {
        let constant = mp.volume.iter().all(|&v| v == mp.volume[0]);
        Self {
            s0: Some(mp.s0),
            sigma: Some(mp.sigma),
            days: Some(mp.days),
            dt: Some(mp.dt),
            volume: Some(if constant {
                VolumeSpec::Constant(mp.volume[0])
            } else {
                VolumeSpec::Schedule(mp.volume.clone())
            }),
            eta: Some(mp.eta),
            cost_exponent: Some(mp.cost_exponent),
            dynamics: Some(mp.dynamics.name().to_string()),
            path_file: path_file.map(Path::to_path_buf),
        }
    }
}

impl ContractSection {
    fn resolve(&self, days: usize) -> Result<ContractSpec> {
        let kind: ContractKind = match &self.kind {
            None => ContractKind::FixedShares,
            Some(k) => k.parse().map_err(|m: String| Error::config("contract.kind", m))?,
        };
        let mut spec = ContractSpec::reference(kind);
        let foreign = |name: &str, set: bool| -> Result<()> {
            if set {
                Err(Error::config(format!("contract.{name}"), format!("not a {kind} term")))
            } else {
                Ok(())
            }
        };
        spec.terms = match spec.terms {
            ContractTerms::FixedShares { shares } => {
                foreign("notional", self.notional.is_some())?;
                foreign("zeta", self.zeta.is_some())?;
                foreign("alpha", self.alpha.is_some())?;
                foreign("kappa", self.kappa.is_some())?;
                foreign("beta", self.beta.is_some())?;
                ContractTerms::FixedShares {
                    shares: self.shares.unwrap_or(shares),
                }
            }
            ContractTerms::FixedNotional { notional, zeta } => {
                foreign("shares", self.shares.is_some())?;
                foreign("alpha", self.alpha.is_some())?;
                foreign("kappa", self.kappa.is_some())?;
                foreign("beta", self.beta.is_some())?;
                ContractTerms::FixedNotional {
                    notional: self.notional.unwrap_or(notional),
                    zeta: self.zeta.unwrap_or(zeta),
                }
            }
            ContractTerms::ProfitSharing {
                notional,
                alpha,
                kappa,
                beta,
            } => {
                foreign("shares", self.shares.is_some())?;
                foreign("zeta", self.zeta.is_some())?;
                ContractTerms::ProfitSharing {
                    notional: self.notional.unwrap_or(notional),
                    alpha: self.alpha.unwrap_or(alpha),
                    kappa: self.kappa.unwrap_or(kappa),
                    beta: self.beta.unwrap_or(beta),
                }
            }
        };
        spec.exercise_window = match self.exercise_set.as_deref() {
            None => Some(default_window(days.max(2))),
            Some([]) => None,
            Some(&[a, b]) => Some((a, b)),
            Some(_) => return Err(Error::config("contract.exercise_set", "expected [first, last] or []")),
        };
        if let Some(v) = self.rho_min {
            spec.rho_min = v;
        }
        if let Some(v) = self.rho_max {
            spec.rho_max = v;
        }
        if let Some(v) = self.penalty_c {
            spec.penalty_c = v;
        }
        Ok(spec)
    }

    fn from_spec(spec: &ContractSpec) -> Self {
        let mut s = Self {
            kind: Some(spec.kind().to_string()),
            exercise_set: Some(spec.exercise_window.map_or(Vec::new(), |(a, b)| vec![a, b])),
            rho_min: Some(spec.rho_min),
            rho_max: Some(spec.rho_max),
            penalty_c: Some(spec.penalty_c),
            ..Self::default()
        };
        match spec.terms {
            ContractTerms::FixedShares { shares } => s.shares = Some(shares),
            ContractTerms::FixedNotional { notional, zeta } => {
                s.notional = Some(notional);
                s.zeta = Some(zeta);
            }
            ContractTerms::ProfitSharing {
                notional,
                alpha,
                kappa,
                beta,
            } => {
                s.notional = Some(notional);
                s.alpha = Some(alpha);
                s.kappa = Some(kappa);
                s.beta = Some(beta);
            }
        }
        s
    }
}

impl RunConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let file = ConfigFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.resolve(base)
    }

    /// Fully explicit form of this configuration.
    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            tag: Some(self.tag.clone()),
            output_dir: Some(self.output_dir.clone()),
            run: None,
            market: MarketSection::from_params(&self.market, self.path_file.as_deref()),
            contract: ContractSection::from_spec(&self.contract),
            training: self.training.clone(),
            sweep: self.sweep.clone(),
        }
    }

    /// Manifest text: the explicit configuration plus the command that
    /// produced the outputs and the code version.
    pub fn manifest(&self, command: &str, arguments: &[String]) -> String {
        let mut file = self.to_file();
        file.run = Some(RunSection {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: arguments.to_vec(),
        });
        toml::to_string(&file).expect("config serializes")
    }

    pub fn write_manifest(&self, dir: &Path, command: &str, arguments: &[String]) -> Result<()> {
        std::fs::write(dir.join("manifest.toml"), self.manifest(command, arguments))?;
        Ok(())
    }
}
