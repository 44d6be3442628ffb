use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::ScenarioId;
use crate::emulator::{EmulatorKind, TrainConfig};
use crate::io::Dtype;
use crate::split::ROTATION_HOLDOUTS;
use crate::synth::GenerationConfig;

/// Families of split plans an experiment can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolSet {
    Baseline,
    TimeShift,
    /// The three SSP holdout plans.
    SspRotation,
}

impl ProtocolSet {
    pub const ALL: [ProtocolSet; 3] = [ProtocolSet::Baseline, ProtocolSet::TimeShift, ProtocolSet::SspRotation];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolSet::Baseline => "baseline",
            ProtocolSet::TimeShift => "time_shift",
            ProtocolSet::SspRotation => "ssp_rotation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Parse a comma-separated list such as `baseline,time_shift`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>, HarnessError> {
        let out: Vec<Self> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                Self::parse(t).ok_or_else(|| {
                    HarnessError::Config(format!(
                        "unknown protocol {t:?}; expected baseline, time_shift or ssp_rotation"
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        if out.is_empty() {
            return Err(HarnessError::Config("empty protocol list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for ProtocolSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_emulators() -> Vec<EmulatorKind> {
    EmulatorKind::ALL.to_vec()
}

fn default_protocols() -> Vec<ProtocolSet> {
    ProtocolSet::ALL.to_vec()
}

fn default_time_shift_test() -> Vec<ScenarioId> {
    vec![ScenarioId::new(ScenarioId::SSP245)]
}

fn default_threshold() -> f64 {
    20.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("climashift-out")
}

/// Everything an experiment run depends on. `(config, seed)` determines
/// every produced byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "GenerationConfig::small")]
    pub generation: GenerationConfig,
    #[serde(default = "default_emulators")]
    pub emulators: Vec<EmulatorKind>,
    /// Per-kind overrides keyed by emulator name (`climatology`,
    /// `pattern_scaling`, `mlp`); kinds without an entry use
    /// `TrainConfig::default()`.
    #[serde(default)]
    pub train: BTreeMap<String, TrainConfig>,
    #[serde(default = "default_protocols")]
    pub protocols: Vec<ProtocolSet>,
    /// Scenarios whose 2015-2023 chunks form the time-shift test set.
    #[serde(default = "default_time_shift_test")]
    pub time_shift_test: Vec<ScenarioId>,
    #[serde(default)]
    pub dtype: Dtype,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub report_threshold: f64,
}

impl Default for ExperimentConfig {
    /// The desk-scale setup: 12 x 8 grid, five oracles, five scenarios,
    /// three emulators and all five plans.
    fn default() -> Self {
        Self {
            seed: 0,
            generation: GenerationConfig::small(),
            emulators: default_emulators(),
            train: BTreeMap::new(),
            protocols: default_protocols(),
            time_shift_test: default_time_shift_test(),
            dtype: Dtype::default(),
            output_dir: default_output_dir(),
            report_threshold: default_threshold(),
        }
    }
}

impl ExperimentConfig {
    /// Parse JSON, reporting the failing field path on error.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn train_config(&self, kind: EmulatorKind) -> TrainConfig {
        self.train.get(kind.name()).cloned().unwrap_or_default()
    }

    /// Scenarios each selected protocol needs, paired with the protocol.
    fn required_scenarios(&self) -> Vec<(ProtocolSet, Vec<String>)> {
        let hist = ScenarioId::HISTORICAL.to_string();
        self.protocols
            .iter()
            .map(|&p| {
                let mut need = vec![hist.clone()];
                match p {
                    ProtocolSet::Baseline => need.extend(
                        [ScenarioId::SSP126, ScenarioId::SSP245, ScenarioId::SSP370, ScenarioId::SSP585]
                            .map(String::from),
                    ),
                    ProtocolSet::TimeShift => {
                        need.extend(self.time_shift_test.iter().map(|s| s.to_string()))
                    }
                    ProtocolSet::SspRotation => {
                        need.push(ScenarioId::SSP245.to_string());
                        need.extend(ROTATION_HOLDOUTS.map(String::from));
                    }
                }
                (p, need)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir: must not be empty".into());
        }
        if self.emulators.is_empty() {
            return bad("emulators: at least one emulator kind is required".into());
        }
        if self.emulators.iter().collect::<BTreeSet<_>>().len() != self.emulators.len() {
            return bad("emulators: duplicate entries".into());
        }
        if self.protocols.is_empty() {
            return bad("protocols: at least one protocol is required".into());
        }
        if self.protocols.iter().collect::<BTreeSet<_>>().len() != self.protocols.len() {
            return bad("protocols: duplicate entries".into());
        }
        if !(self.report_threshold.is_finite()) {
            return bad("report_threshold: must be finite".into());
        }
        self.generation
            .validate()
            .map_err(|e| HarnessError::Config(format!("generation: {e}")))?;
        let present: BTreeSet<&str> = self.generation.scenarios.iter().map(|s| s.id.as_str()).collect();
        for (protocol, need) in self.required_scenarios() {
            for s in need {
                if !present.contains(s.as_str()) {
                    return bad(format!(
                        "generation.scenarios: protocol {protocol} requires scenario {s}"
                    ));
                }
            }
        }
        if self.protocols.contains(&ProtocolSet::TimeShift) && self.time_shift_test.is_empty() {
            return bad("time_shift_test: at least one scenario is required".into());
        }
        for (kind, cfg) in &self.train {
            if kind.parse::<EmulatorKind>().is_err() {
                return bad(format!(
                    "train.{kind}: unknown emulator kind; expected climatology, pattern_scaling or mlp"
                ));
            }
            cfg.validate()
                .map_err(|e| HarnessError::Config(format!("train.{kind}: {e}")))?;
        }
        Ok(())
    }
}
