use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentSpec;
use crate::error::{Error, Result};
use crate::funnel_mdp::{bandit_example, synthetic_funnel, FunnelGenParams, FunnelMdp, ProjectionKind, SyntheticFunnel};
use crate::simulator::{ShiftMode, DEFAULT_MAX_STEPS};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CHECKPOINTS: usize = 50;

/// Where the ground-truth model comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSource {
    /// `bandit`, `funnel-small` or `funnel-large`.
    Preset(String),
    /// A model document written by `funnel generate`.
    File(PathBuf),
    Generator(FunnelGenParams),
}

pub const PRESETS: [&str; 3] = ["bandit", "funnel-small", "funnel-large"];

/// A loaded ground truth. Synthetic funnels keep their state features so
/// that projections can be built.
#[derive(Clone, Debug)]
pub struct LoadedMdp {
    pub mdp: FunnelMdp,
    pub funnel: Option<SyntheticFunnel>,
}

impl LoadedMdp {
    /// `10 T` for horizon-structured funnels, a fixed cap otherwise.
    pub fn default_max_steps(&self) -> usize {
        match &self.funnel {
            Some(f) => 10 * f.params.horizon as usize,
            None => DEFAULT_MAX_STEPS,
        }
    }
}

impl MdpSource {
    /// Loads the model. Relative file paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<LoadedMdp> {
        match self {
            MdpSource::Preset(name) if name == "bandit" => Ok(LoadedMdp { mdp: bandit_example(), funnel: None }),
            MdpSource::Preset(name) => {
                let params = FunnelGenParams::preset(name).ok_or_else(|| {
                    Error::Config(format!("unknown preset `{name}`{}", suggestion(name, &PRESETS)))
                })?;
                Self::Generator(params).load(base)
            }
            MdpSource::File(path) => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
                let mdp = FunnelMdp::from_json(&text)?;
                let report = mdp.validate();
                if !report.is_valid() {
                    return Err(Error::InvalidModel(report.summary()));
                }
                Ok(LoadedMdp { mdp, funnel: None })
            }
            MdpSource::Generator(params) => {
                let f = synthetic_funnel(params)?;
                Ok(LoadedMdp { mdp: f.mdp.clone(), funnel: Some(f) })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    /// Name used in reports and output files.
    pub label: String,
    pub algorithm: AgentSpec,
    /// The learner only sees this view of the state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub mdp: MdpSource,
    pub agents: Vec<AgentEntry>,
    /// Consumers per run (`N`).
    pub consumers: u64,
    /// Runs per agent (`R`); run `r` uses seed `base_seed + r`.
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub schedule: ShiftMode,
    /// Phase-2 action permutation. Drawn per seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    /// Prefix lengths at which PR curves are reported. Defaults to 50
    /// log-spaced points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also write every run's belief table at the end of the run.
    #[serde(default)]
    pub write_beliefs: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(describe_json_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.consumers == 0 {
            return Err(Error::param("consumers", "must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(Error::param("seeds", "must be at least 1"));
        }
        if self.base_seed.checked_add(self.seeds).is_none() {
            return Err(Error::param("base_seed", "base_seed + seeds overflows"));
        }
        if self.agents.is_empty() {
            return Err(Error::param("agents", "at least one agent is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let at = |e: Error| match e {
                Error::InvalidParameter { field, reason } => {
                    Error::InvalidParameter { field: format!("agents[{i}].algorithm.{field}"), reason }
                }
                e => e,
            };
            if a.label.is_empty() || a.label.contains(['/', '\\', ',', '"']) {
                return Err(Error::param(format!("agents[{i}].label"), "must be non-empty without / \\ , or \""));
            }
            if self.agents[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::param(format!("agents[{i}].label"), format!("duplicate label `{}`", a.label)));
            }
            a.algorithm.validate().map_err(at)?;
            let projected = a.projection.is_some_and(|p| p != ProjectionKind::Identity);
            if projected && a.algorithm.is_fixed_policy() {
                return Err(Error::param(format!("agents[{i}].projection"), "fixed-policy agents act on the full state"));
            }
            if projected && !matches!(self.mdp, MdpSource::Generator(_))
                && !matches!(&self.mdp, MdpSource::Preset(p) if p != "bandit")
            {
                return Err(Error::param(format!("agents[{i}].projection"), "projections need a synthetic funnel model"));
            }
        }
        self.schedule.validate(self.consumers)?;
        if let Some(c) = &self.checkpoints {
            if c.is_empty() || c.iter().any(|&n| n == 0 || n > self.consumers) || c.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("checkpoints", format!("must be increasing values in 1..={}", self.consumers)));
            }
        }
        if self.max_steps == Some(0) {
            return Err(Error::param("max_steps", "must be at least 1"));
        }
        if let MdpSource::Generator(p) = &self.mdp {
            p.validate()?;
        }
        Ok(())
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| crate::simulator::log_checkpoints(self.consumers, DEFAULT_CHECKPOINTS))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|r| self.base_seed + r).collect()
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

/// Turns serde's unknown-field and unknown-variant messages into config
/// errors with a nearest-match hint.
fn describe_json_error(e: serde_json::Error) -> Error {
    let msg = e.to_string();
    for marker in ["unknown field `", "unknown variant `"] {
        if let Some(rest) = msg.split_once(marker).map(|(_, r)| r) {
            let bad = rest.split('`').next().unwrap_or_default();
            let expected: Vec<&str> = rest
                .split_once("expected ")
                .map(|(_, e)| e.split('`').skip(1).step_by(2).collect())
                .unwrap_or_default();
            return Error::Config(format!("{msg}{}", suggestion(bad, &expected)));
        }
    }
    Error::Config(msg)
}

fn suggestion(bad: &str, candidates: &[&str]) -> String {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(bad, c), *c))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| format!(" (did you mean `{c}`?)"))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "mdp": {"preset": "bandit"},
        "agents": [{"label": "ts", "algorithm": {"kind": "ts"}}],
        "consumers": 1000,
        "seeds": 5
    }"#;

    #[test]
    fn minimal_config_is_valid() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed_list(), vec![0, 1, 2, 3, 4]);
        assert_eq!(*cfg.checkpoints().last().unwrap(), 1000);
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn range_error_names_field() {
        let text = MINIMAL.replace(r#"{"kind": "ts"}"#, r#"{"kind": "mfabl", "epsilon": 1.5}"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("agents[0].algorithm.epsilon"), "{err}");
        assert!(err.is_config_error());
    }

    #[test]
    fn unknown_key_suggests() {
        let text = MINIMAL.replace(r#"{"kind": "ts"}"#, r#"{"kind": "mfabl", "epsilonn": 0.1}"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("epsilonn") && err.contains("did you mean `epsilon`"), "{err}");
        let text = MINIMAL.replace("\"seeds\"", "\"seeds\": 5, \"consumer\": 3, \"x\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("did you mean `consumers`"), "{err}");
    }

    #[test]
    fn structural_checks() {
        let bad = MINIMAL.replace("\"seeds\": 5", "\"seeds\": 0");
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().to_string().contains("seeds"));
        let bad = MINIMAL.replace("\"schema\": 1", "\"schema\": 2");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace(r#""kind": "ts"}"#, r#""kind": "ts"}, "projection": "temporal""#);
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().to_string().contains("projection"));
        let bad = MINIMAL.replace("\"seeds\": 5", "\"seeds\": 5, \"schedule\": {\"mode\": \"two-phase\", \"switch_at\": 5000}");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("\"bandit\"", "\"funnel-smal\"");
        let cfg = ExperimentConfig::from_json(&bad).unwrap();
        assert!(cfg.mdp.load(None).unwrap_err().to_string().contains("did you mean `funnel-small`"));
    }
}
