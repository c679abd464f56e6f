//! Flat TOML system configuration.
//!
//! Keys follow the parameter tables: `evolution_time_s`, `time_steps`,
//! `realisations`, `n_max`, `alpha_1`, `alpha_2`, and per transition `j`
//! (1-based) `omega_j_hz`, `drive_j_hz`, `carrier_amplitude_j`, `g_j`.
//! Frequencies in Hz are stored as rad/s. Unknown keys are rejected.
//!
//! `system = "qubit"` maps `omega_1_hz` and `g_1` onto levels
//! `(omega/2, -omega/2)` and couplings `(g, -g)` on one shared process.
//! `system = "qudit"` (the default) takes `dimension`, level `0` at zero
//! energy, optional `g_0`, and one independent process per level unless
//! `shared_noise = true`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use toml::{Table, Value};

use crate::dynamics::SystemConfig;
use crate::error::{Error, Result};
use crate::noisegen::NoiseSpec;
use crate::pulses::CarrierSpec;

/// Bundled presets as `(name, toml)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("qutrit-desk-closed", include_str!("../../../configs/qutrit-desk-closed.toml")),
    ("qutrit-desk-weak", include_str!("../../../configs/qutrit-desk-weak.toml")),
    ("qutrit-desk-strong", include_str!("../../../configs/qutrit-desk-strong.toml")),
    ("qubit-desk-closed", include_str!("../../../configs/qubit-desk-closed.toml")),
    ("qubit-desk-weak", include_str!("../../../configs/qubit-desk-weak.toml")),
    ("qubit-desk-strong", include_str!("../../../configs/qubit-desk-strong.toml")),
    ("qutrit-full-closed", include_str!("../../../configs/qutrit-full-closed.toml")),
    ("qutrit-full-weak", include_str!("../../../configs/qutrit-full-weak.toml")),
    ("qutrit-full-strong", include_str!("../../../configs/qutrit-full-strong.toml")),
    ("qubit-full-closed", include_str!("../../../configs/qubit-full-closed.toml")),
    ("qubit-full-weak", include_str!("../../../configs/qubit-full-weak.toml")),
    ("qubit-full-strong", include_str!("../../../configs/qubit-full-strong.toml")),
];

pub fn preset(name: &str) -> Result<SystemConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::InvalidConfig(format!("unknown preset {name}; available: {}", names.join(", ")))
        })?;
    parse_config(text)
}

/// Coupling strengths of the standard noise ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoiseLevel {
    Closed,
    Weak,
    Strong,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 3] = [NoiseLevel::Closed, NoiseLevel::Weak, NoiseLevel::Strong];

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::Closed => "closed",
            NoiseLevel::Weak => "weak",
            NoiseLevel::Strong => "strong",
        }
    }

    /// `g_j` for transition `j >= 1`: 0, 50 or 110 at `j = 1`, rising by 10
    /// per level.
    fn coupling(self, j: usize) -> f64 {
        let base = match self {
            NoiseLevel::Closed => return 0.0,
            NoiseLevel::Weak => 50.0,
            NoiseLevel::Strong => 110.0,
        };
        base + 10.0 * (j as f64 - 1.0)
    }
}

/// `config` with its couplings replaced by the ladder values at `level`.
/// Qubit-form systems (one shared process, antisymmetric couplings) keep
/// that form.
pub fn with_noise_level(config: &SystemConfig, level: NoiseLevel) -> SystemConfig {
    let d = config.d;
    let qubit_form = d == 2
        && config.noise_channel == [0, 0]
        && config.couplings[0] == -config.couplings[1];
    let couplings = if qubit_form {
        let g = level.coupling(1);
        vec![g, -g]
    } else {
        (0..d)
            .map(|j| if j == 0 { 0.0 } else { level.coupling(j) })
            .collect()
    };
    config.with_couplings(couplings)
}

pub fn load_config(path: &Path) -> Result<SystemConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
        other => other,
    })
}

struct Reader {
    table: Table,
    used: BTreeSet<String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<&Value> {
        let v = self.table.get(key);
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn float_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(other) => Err(Error::InvalidConfig(format!("{key} must be a number, got {other}"))),
        }
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        self.float_opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
    }

    fn count_opt(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(other) => Err(Error::InvalidConfig(format!(
                "{key} must be a nonnegative integer, got {other}"
            ))),
        }
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        self.count_opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
    }

    fn string_opt(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(Error::InvalidConfig(format!("{key} must be a string, got {other}"))),
        }
    }

    fn bool_opt(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(Error::InvalidConfig(format!("{key} must be true or false, got {other}"))),
        }
    }
}

pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
    let mut r = Reader {
        table,
        used: BTreeSet::new(),
    };
    let hz = |v: f64| 2.0 * PI * v;

    let system = r.string_opt("system")?.unwrap_or_else(|| "qudit".into());
    let duration_s = r.float("evolution_time_s")?;
    let steps = r.count("time_steps")?;
    let realizations = r.count("realisations")?;
    let n_max = r.count("n_max")?;
    let alpha1 = r.float("alpha_1")?;
    let alpha2 = r.float("alpha_2")?;
    let f_min_hz = r.float_opt("f_min_hz")?;

    let (d, levels, couplings, noise_channel, channels) = match system.as_str() {
        "qubit" => {
            if let Some(d) = r.count_opt("dimension")? {
                if d != 2 {
                    return Err(Error::InvalidConfig(format!("a qubit has dimension 2, got {d}")));
                }
            }
            let w = hz(r.float("omega_1_hz")?);
            let g = r.float("g_1")?;
            (2, vec![w / 2.0, -w / 2.0], vec![g, -g], vec![0, 0], 1)
        }
        "qudit" => {
            let d = r.count("dimension")?;
            if d < 2 {
                return Err(Error::InvalidDimension(d));
            }
            let mut levels = vec![0.0];
            let mut couplings = vec![r.float_opt("g_0")?.unwrap_or(0.0)];
            for j in 1..d {
                levels.push(hz(r.float(&format!("omega_{j}_hz"))?));
                couplings.push(r.float(&format!("g_{j}"))?);
            }
            if r.bool_opt("shared_noise")?.unwrap_or(false) {
                (d, levels, couplings, vec![0; d], 1)
            } else {
                (d, levels, couplings, (0..d).collect(), d)
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "system must be \"qudit\" or \"qubit\", got \"{other}\""
            )))
        }
    };
    let mut drive = Vec::with_capacity(d - 1);
    let mut scale = Vec::with_capacity(d - 1);
    for j in 1..d {
        drive.push(hz(r.float(&format!("drive_{j}_hz"))?));
        scale.push(r.float(&format!("carrier_amplitude_{j}"))?);
    }

    let unknown: Vec<&String> = r.table.keys().filter(|k| !r.used.contains(*k)).collect();
    if !unknown.is_empty() {
        let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
        return Err(Error::InvalidConfig(format!("unknown keys: {}", names.join(", "))));
    }
    if !(duration_s > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "evolution_time_s must be positive, got {duration_s}"
        )));
    }

    let config = SystemConfig {
        d,
        levels_rad_s: levels,
        carrier: CarrierSpec {
            scale,
            drive_rad_s: drive,
            duration_s,
            steps,
        },
        n_max,
        couplings,
        noise_channel,
        noise: NoiseSpec {
            alpha1,
            alpha2,
            f_min_hz,
            channels,
            realizations,
            steps,
            duration_s,
        },
    };
    config.validate()?;
    Ok(config)
}
