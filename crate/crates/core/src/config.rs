//! Flat TOML run configuration.
//!
//! ```toml
//! dim = 16
//! total_rounds = 1e12      # integral scientific notation is accepted
//! splitting_ratio = 0.01
//! visibility = 0.95
//! margin_factor = 1.0
//! regimes = ["fc", "vc"]
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::channel::{Attack, DeviceParams, RapidFluctChannel, StatFluctChannel};
use crate::entropy::SolverOptions;
use crate::error::{Error, Result};
use crate::keylength::LeakageModel;
use crate::params::{ProtocolParams, Regime};
use crate::pipeline::{Calculator, Security};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    #[default]
    Stat,
    Rapid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dim: usize,
    #[serde(deserialize_with = "integral")]
    pub total_rounds: u128,
    pub splitting_ratio: f64,
    pub visibility: f64,
    pub margin_factor: f64,
    #[serde(deserialize_with = "integral_opt")]
    pub lift_exponent: Option<u128>,

    /// Total security parameter (epsilon, or nu for coherent regimes).
    pub epsilon: f64,
    pub split_r: f64,
    pub split_s: f64,
    /// Error-correction efficiency; absent means ideal leakage.
    pub f_ec: Option<f64>,
    pub regimes: Vec<Regime>,
    /// Observation CSV for `keyrate`; absent means exact isotropic values.
    pub observations: Option<PathBuf>,

    pub iteration_budget: usize,
    pub solver_starts: usize,
    pub solver_seed: u64,

    pub seed: u64,
    pub runs: usize,
    pub attack: Attack,
    pub channel: ChannelKind,
    pub mu_loss: f64,
    pub sigma_loss: f64,
    pub mu_sol: f64,
    pub sigma_sol: f64,
    /// `[[p_loss, n_sol], ...]` for the rapid channel.
    pub scenarios: Option<Vec<(f64, f64)>>,
    pub c_prod: f64,
    pub t_frame: f64,
    pub dark_rate: f64,
    pub eta_d: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let security = Security::default();
        let stat = StatFluctChannel::default();
        let device = DeviceParams::default();
        Self {
            dim: 16,
            total_rounds: 1_000_000_000_000,
            splitting_ratio: 0.01,
            visibility: 0.95,
            margin_factor: 1.0,
            lift_exponent: None,
            epsilon: security.total,
            split_r: security.r,
            split_s: security.s,
            f_ec: None,
            regimes: vec![Regime::FixedCollective, Regime::VarlenCollective],
            observations: None,
            iteration_budget: solver.iteration_budget,
            solver_starts: solver.starts,
            solver_seed: solver.seed,
            seed: 1,
            runs: 100,
            attack: Attack::Collective,
            channel: ChannelKind::Stat,
            mu_loss: stat.mu_loss,
            sigma_loss: stat.sigma_loss,
            mu_sol: stat.mu_sol,
            sigma_sol: stat.sigma_sol,
            scenarios: None,
            c_prod: device.c_prod,
            t_frame: device.t_frame,
            dark_rate: device.dark_rate,
            eta_d: device.eta_d,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Int(u64),
    Float(f64),
    Text(String),
}

fn to_integral(n: Number) -> std::result::Result<u128, String> {
    let f = match n {
        Number::Int(i) => return Ok(i as u128),
        Number::Float(f) => f,
        Number::Text(s) => {
            let s = s.replace('_', "");
            if let Ok(i) = s.parse::<u128>() {
                return Ok(i);
            }
            s.parse::<f64>().map_err(|e| format!("`{s}`: {e}"))?
        }
    };
    // f64 represents 10^k exactly up to 10^22
    if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f < 1.7e38 {
        Ok(f as u128)
    } else {
        Err(format!("{f} is not a nonnegative integer"))
    }
}

fn integral<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<u128, D::Error> {
    to_integral(Number::deserialize(de)?).map_err(serde::de::Error::custom)
}

fn integral_opt<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Option<u128>, D::Error> {
    match Option::<Number>::deserialize(de)? {
        None => Ok(None),
        Some(n) => to_integral(n).map(Some).map_err(serde::de::Error::custom),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses `text` and then applies `key=value` overrides. Values are read
    /// as TOML and fall back to plain strings.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let raw = raw.trim();
            let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            table.insert(key.trim().to_string(), value);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds every derived object once so that errors surface before any work.
    pub fn validate(&self) -> Result<()> {
        self.calculator()?;
        self.device().validate()?;
        self.leakage()?;
        if self.channel == ChannelKind::Rapid {
            self.rapid_channel()?;
        }
        Ok(())
    }

    pub fn protocol(&self) -> Result<ProtocolParams> {
        let mut p = ProtocolParams::new(self.dim, self.total_rounds, self.splitting_ratio)?
            .with_visibility(self.visibility)?
            .with_margin_factor(self.margin_factor)?;
        p.lift_exponent = self.lift_exponent;
        p.validate()?;
        Ok(p)
    }

    pub fn security(&self) -> Security {
        Security {
            total: self.epsilon,
            r: self.split_r,
            s: self.split_s,
        }
    }

    pub fn leakage(&self) -> Result<LeakageModel> {
        match self.f_ec {
            None => Ok(LeakageModel::Ideal),
            Some(f) => LeakageModel::efficiency(f),
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            iteration_budget: self.iteration_budget,
            starts: self.solver_starts,
            seed: self.solver_seed,
            ..SolverOptions::default()
        }
    }

    pub fn calculator(&self) -> Result<Calculator> {
        let calc = Calculator::new(self.protocol()?, self.security(), self.leakage()?, self.solver())?;
        for &r in &self.regimes {
            calc.budget(r)?;
        }
        Ok(calc)
    }

    pub fn device(&self) -> DeviceParams {
        DeviceParams {
            c_prod: self.c_prod,
            t_frame: self.t_frame,
            dark_rate: self.dark_rate,
            eta_d: self.eta_d,
        }
    }

    pub fn stat_channel(&self) -> StatFluctChannel {
        StatFluctChannel {
            mu_loss: self.mu_loss,
            sigma_loss: self.sigma_loss,
            mu_sol: self.mu_sol,
            sigma_sol: self.sigma_sol,
        }
    }

    pub fn rapid_channel(&self) -> Result<RapidFluctChannel> {
        match &self.scenarios {
            None => Ok(RapidFluctChannel::default()),
            Some(s) => RapidFluctChannel::new(s.clone()),
        }
    }
}
