//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! id = "unit-transmittance"
//! seed = 7
//! rep_rate_hz = 8.0e7          # optional, converts probabilities to rates
//! reference_scaling = true     # Bob emits mu/T
//!
//! [source]
//! tier = "full"                # "ideal" (single photons) or "full" (Fock space)
//! pair = "spdc"                # "spdc" or "ideal"
//! reference = "coherent"       # "coherent" or "single-photon"
//! gamma = 2.0e-3
//! mu = 0.09
//! visibility = 0.79883
//! alpha_sq = 0.5
//! phase = { deg = 0.0 }
//!
//! [channel]
//! mode = "depolarizing-ensemble"   # "fixed", "depolarizing-ensemble" or "haar-mc"
//! transmittance = 1.0
//! correlation = "collective"       # or "decorrelated"
//! upper = "Z"                      # Pauli label, or explicit angles:
//! lower = { phi1 = { deg = 45.0 }, theta = { rad = 0.0 }, phi2 = { deg = 45.0 } }
//! samples = 256                    # haar-mc only
//!
//! [tomography]
//! exact = true                     # or: shots = 10000
//! bootstrap = 250
//!
//! [truncation]
//! cutoff = 2
//!
//! [sweep]
//! transmittances = [1.0, 0.48, 0.17]
//! alpha_sq = [0.1, 0.3, 0.5, 0.7, 0.9]
//! ```
//!
//! Every section except `[channel]` may be omitted; missing keys take the
//! defaults shown above. Unknown keys are rejected.

use std::path::Path;

use dfs_core::fock::{SourceParams, DEFAULT_MAX_DIM};
use dfs_core::polarization::{pauli_setting, PauliLabel, WaveplateSetting};
use dfs_core::protocol::{ChannelConfig, Correlation, FockModel, PairSource, Reference, DEFAULT_VISIBILITY};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rep_rate_hz: Option<f64>,
    #[serde(default = "yes")]
    pub reference_scaling: bool,
    #[serde(default)]
    pub source: SourceSection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub tomography: TomographySection,
    #[serde(default)]
    pub truncation: TruncationSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    /// Analytic single-photon path.
    Ideal,
    /// Truncated Fock-space model.
    Full,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default = "default_tier")]
    pub tier: Tier,
    #[serde(default = "default_pair")]
    pub pair: PairSource,
    #[serde(default = "default_reference")]
    pub reference: Reference,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_visibility")]
    pub visibility: f64,
    #[serde(default = "default_alpha_sq")]
    pub alpha_sq: f64,
    #[serde(default)]
    pub phase: Angle,
}

fn default_tier() -> Tier {
    Tier::Full
}
fn default_pair() -> PairSource {
    PairSource::Spdc
}
fn default_reference() -> Reference {
    Reference::Coherent
}
fn default_gamma() -> f64 {
    2e-3
}
fn default_mu() -> f64 {
    0.09
}
fn default_visibility() -> f64 {
    DEFAULT_VISIBILITY
}
fn default_alpha_sq() -> f64 {
    0.5
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            tier: default_tier(),
            pair: default_pair(),
            reference: default_reference(),
            gamma: default_gamma(),
            mu: default_mu(),
            visibility: default_visibility(),
            alpha_sq: default_alpha_sq(),
            phase: Angle::default(),
        }
    }
}

/// An angle with an explicit unit: `{ deg = 45.0 }` or `{ rad = 0.785 }`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Angle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rad: Option<f64>,
}

impl Angle {
    pub fn radians(&self, field: &str) -> CliResult<f64> {
        let v = match (self.deg, self.rad) {
            (Some(d), None) => d.to_radians(),
            (None, Some(r)) => r,
            (None, None) => 0.0,
            (Some(_), Some(_)) => {
                return Err(CliError::Config(format!("{field}: give either `deg` or `rad`, not both")))
            }
        };
        if !v.is_finite() {
            return Err(CliError::Config(format!("{field}: angle is not finite")));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleTriple {
    pub phi1: Angle,
    pub theta: Angle,
    pub phi2: Angle,
}

/// Waveplate stack of one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSetting {
    Pauli(PauliLabel),
    Angles(AngleTriple),
}

impl PathSetting {
    fn resolve(&self, field: &str) -> CliResult<WaveplateSetting> {
        match self {
            PathSetting::Pauli(p) => Ok(pauli_setting(*p)),
            PathSetting::Angles(a) => WaveplateSetting::new(
                a.phi1.radians(&format!("{field}.phi1"))?,
                a.theta.radians(&format!("{field}.theta"))?,
                a.phi2.radians(&format!("{field}.phi2"))?,
            )
            .map_err(|e| CliError::Config(format!("{field}: {e}"))),
        }
    }
}

impl Default for PathSetting {
    fn default() -> Self {
        PathSetting::Pauli(PauliLabel::I)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Fixed,
    DepolarizingEnsemble,
    HaarMc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub mode: ChannelMode,
    #[serde(default = "default_transmittance")]
    pub transmittance: f64,
    #[serde(default = "default_correlation")]
    pub correlation: Correlation,
    #[serde(default)]
    pub upper: PathSetting,
    #[serde(default)]
    pub lower: PathSetting,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_transmittance() -> f64 {
    1.0
}
fn default_correlation() -> Correlation {
    Correlation::Collective
}
fn default_samples() -> usize {
    256
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

fn default_cutoff() -> usize {
    2
}
fn default_max_dim() -> usize {
    DEFAULT_MAX_DIM
}

impl Default for TruncationSection {
    fn default() -> Self {
        TruncationSection {
            cutoff: default_cutoff(),
            max_dim: default_max_dim(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_t")]
    pub transmittances: Vec<f64>,
    #[serde(default = "default_sweep_alpha")]
    pub alpha_sq: Vec<f64>,
}

fn default_sweep_t() -> Vec<f64> {
    vec![1.0, 0.48, 0.17]
}
fn default_sweep_alpha() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            transmittances: default_sweep_t(),
            alpha_sq: default_sweep_alpha(),
        }
    }
}

/// How the shared state is reconstructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tomography {
    Exact,
    Shots(u64),
}

/// Command-line values that replace the file's.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cutoff: Option<usize>,
    pub tomography: Option<Tomography>,
}

/// A validated scenario with every quantity in its library type.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub rep_rate_hz: Option<f64>,
    pub tier: Tier,
    pub source: SourceParams,
    pub alpha_sq: f64,
    pub phase: f64,
    pub model: FockModel,
    pub mode: ChannelMode,
    pub channel: ChannelConfig,
    pub correlation: Correlation,
    pub samples: usize,
    pub tomography: Tomography,
    pub bootstrap: usize,
    pub sweep_t: Vec<f64>,
    pub sweep_alpha: Vec<f64>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn resolve(&self, ov: &Overrides) -> CliResult<Scenario> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.id.is_empty()
            || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            || self.id.starts_with('.')
        {
            return bad(format!("id: `{}` must be non-empty and use only [A-Za-z0-9._-]", self.id));
        }
        if let Some(r) = self.rep_rate_hz {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("rep_rate_hz: must be positive, got {r}"));
            }
        }
        let s = &self.source;
        if !(0.0..=1.0).contains(&s.alpha_sq) {
            return bad(format!("source.alpha_sq: must lie in [0, 1], got {}", s.alpha_sq));
        }
        let phase = s.phase.radians("source.phase")?;
        let source = SourceParams::new(s.gamma, s.mu, s.visibility).with_alpha_sq(s.alpha_sq, phase);
        source.validate().map_err(|e| CliError::Config(format!("source: {e}")))?;

        let c = &self.channel;
        if !(c.transmittance > 0.0 && c.transmittance <= 1.0) {
            return bad(format!("channel.transmittance: must lie in (0, 1], got {}", c.transmittance));
        }
        if c.mode == ChannelMode::HaarMc && c.samples == 0 {
            return bad("channel.samples: must be at least 1".into());
        }
        let channel = ChannelConfig::new(
            c.upper.resolve("channel.upper")?,
            c.lower.resolve("channel.lower")?,
            c.transmittance,
        )
        .map_err(|e| CliError::Config(format!("channel: {e}")))?;

        let cutoff = ov.cutoff.unwrap_or(self.truncation.cutoff);
        if cutoff < 2 {
            return bad(format!("truncation.cutoff: must be at least 2, got {cutoff}"));
        }
        let model = FockModel {
            cutoff,
            max_dim: self.truncation.max_dim,
            pair: s.pair,
            reference: s.reference,
            reference_scaling: self.reference_scaling,
        };

        let t = &self.tomography;
        let from_file = match (t.exact, t.shots) {
            (Some(true), Some(_)) => return bad("tomography: `exact = true` conflicts with `shots`".into()),
            (_, Some(0)) => return bad("tomography.shots: must be positive".into()),
            (_, Some(n)) => Tomography::Shots(n),
            (Some(false), None) => return bad("tomography: `exact = false` needs `shots`".into()),
            _ => Tomography::Exact,
        };
        let tomography = ov.tomography.unwrap_or(from_file);
        if tomography == Tomography::Shots(0) {
            return bad("--shots: must be positive".into());
        }
        let bootstrap = t.bootstrap.unwrap_or(250);
        if bootstrap == 1 {
            return bad("tomography.bootstrap: use 0 to disable or at least 2 resamples".into());
        }

        for (k, v) in self.sweep.transmittances.iter().enumerate() {
            if !(*v > 0.0 && *v <= 1.0) {
                return bad(format!("sweep.transmittances[{k}]: must lie in (0, 1], got {v}"));
            }
        }
        for (k, v) in self.sweep.alpha_sq.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return bad(format!("sweep.alpha_sq[{k}]: must lie in [0, 1], got {v}"));
            }
        }

        Ok(Scenario {
            id: self.id.clone(),
            seed: ov.seed.unwrap_or(self.seed),
            rep_rate_hz: self.rep_rate_hz,
            tier: s.tier,
            source,
            alpha_sq: s.alpha_sq,
            phase,
            model,
            mode: c.mode,
            channel,
            correlation: c.correlation,
            samples: c.samples,
            tomography,
            bootstrap,
            sweep_t: self.sweep.transmittances.clone(),
            sweep_alpha: self.sweep.alpha_sq.clone(),
        })
    }
}

impl Scenario {
    /// Parses and validates in one step.
    pub fn from_toml(text: &str, ov: &Overrides) -> CliResult<Self> {
        ScenarioConfig::parse(text)?.resolve(ov)
    }

    pub fn with_transmittance(&self, t: f64) -> CliResult<Self> {
        let mut out = self.clone();
        out.channel.transmittance = t;
        out.channel.validate()?;
        Ok(out)
    }

    pub fn with_alpha_sq(&self, a2: f64) -> Self {
        let mut out = self.clone();
        out.alpha_sq = a2;
        out.source = out.source.with_alpha_sq(a2, self.phase);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "id = \"m\"\n[channel]\nmode = \"fixed\"\n";

    #[test]
    fn minimal_defaults() {
        let s = Scenario::from_toml(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(s.tier, Tier::Full);
        assert_eq!(s.model.cutoff, 2);
        assert!(s.model.reference_scaling);
        assert_eq!(s.tomography, Tomography::Exact);
        assert_eq!(s.source.visibility, DEFAULT_VISIBILITY);
        assert_eq!(s.channel.upper, pauli_setting(PauliLabel::I));
    }

    #[test]
    fn angles_with_units() {
        let text = r#"
id = "a"
[channel]
mode = "fixed"
upper = "Z"
lower = { phi1 = { deg = 45.0 }, theta = { rad = 0.0 }, phi2 = { deg = 45.0 } }
"#;
        let s = Scenario::from_toml(text, &Overrides::default()).unwrap();
        let z = pauli_setting(PauliLabel::Z);
        assert_eq!(s.channel.upper, z);
        assert!((s.channel.lower.phi1 - z.phi1).abs() < 1e-15);
        assert!((s.channel.lower.phi2 - z.phi2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_fields() {
        let cases = [
            ("id = \"m\"\n[channel]\nmode = \"fixed\"\ncolour = 1\n", "colour"),
            ("id = \"m\"\n[channel]\nmode = \"sideways\"\n", "sideways"),
            ("id = \"m\"\n[channel]\nmode = \"fixed\"\ntransmittance = 1.5\n", "channel.transmittance"),
            ("id = \"m\"\n[source]\nvisibility = 2.0\n[channel]\nmode = \"fixed\"\n", "visibility"),
            ("id = \"a/b\"\n[channel]\nmode = \"fixed\"\n", "id"),
            ("id = \"m\"\n[channel]\nmode = \"fixed\"\nupper = { phi1 = { deg = 1.0, rad = 1.0 }, theta = {}, phi2 = {} }\n", "channel.upper.phi1"),
            ("id = \"m\"\n[channel]\nmode = \"fixed\"\n[tomography]\nexact = true\nshots = 5\n", "tomography"),
            ("id = \"m\"\n[channel]\nmode = \"fixed\"\n[truncation]\ncutoff = 1\n", "cutoff"),
            ("id = \"m\"\n", "channel"),
        ];
        for (text, needle) in cases {
            let err = Scenario::from_toml(text, &Overrides::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(needle), "{needle}: {err}");
        }
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            seed: Some(99),
            cutoff: Some(3),
            tomography: Some(Tomography::Shots(100)),
        };
        let s = Scenario::from_toml(MINIMAL, &ov).unwrap();
        assert_eq!((s.seed, s.model.cutoff, s.tomography), (99, 3, Tomography::Shots(100)));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let again = ScenarioConfig::parse(&text).unwrap();
        assert_eq!(toml::to_string(&again).unwrap(), text);
    }
}
