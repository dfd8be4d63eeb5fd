//! TOML run configuration: a global `seed` plus one table per task.
//!
//! Every key is optional; absent keys take the defaults below and unknown
//! keys are rejected with the offending line.
//!
//! ```toml
//! seed = 7
//!
//! [pulses]            # pulse benchmark sizes
//! [booster]           # booster series length, OOD segments, gate threshold
//! [siamese]           # epochs, batch_size, lr, filters, features, length_scale, ridge, ...
//! [siamese.contrastive]
//! alpha = 0.5
//! margin = 1.0
//! [surrogate]         # epochs, batch_size, lr, conv_features, hidden, features, ...
//! [surrogate.lipschitz]
//! l1 = 0.75
//! l2 = 1.25
//! lambda = 0.1
//! [evaluate]
//! trials = 250
//! [probe]
//! channel = 1
//! steps = 20
//! span = 10.0
//! [gradcheck]
//! step = 1e-5
//! tolerance = 1e-4
//! coords = 32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BoosterBenchSpec, PulseBenchSpec, CHANNELS, OUTPUT_CHANNEL};
use crate::error::{Error, Result};
use crate::evalkit::DEFAULT_TRIALS;
use crate::siamese::SiameseConfig;
use crate::surrogate::{SurrogateConfig, RAMP_SPAN, RAMP_STEPS};

pub const DEFAULT_SEED: u64 = 7;
pub const SEED_ENV: &str = "DGPA_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Gaussian resampling trials for the ROC band.
    pub trials: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { trials: DEFAULT_TRIALS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub channel: usize,
    pub steps: usize,
    /// Largest shift, in training standard deviations of the channel.
    pub span: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { channel: OUTPUT_CHANNEL, steps: RAMP_STEPS, span: RAMP_SPAN }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per parameter tensor.
    pub coords: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, coords: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pulses: PulseBenchSpec,
    pub booster: BoosterBenchSpec,
    pub siamese: SiameseConfig,
    pub surrogate: SurrogateConfig,
    pub evaluate: EvaluateConfig,
    pub probe: ProbeConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            pulses: PulseBenchSpec::default(),
            booster: BoosterBenchSpec::default(),
            siamese: SiameseConfig::default(),
            surrogate: SurrogateConfig::default(),
            evaluate: EvaluateConfig::default(),
            probe: ProbeConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

fn invalid(e: Error) -> Error {
    match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    }
}

impl RunConfig {
    /// Parses `text`; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() as u64 + 1);
            Error::Parse { path: path.to_path_buf(), line, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.siamese.validate().map_err(invalid)?;
        self.surrogate.validate().map_err(invalid)?;
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.evaluate.trials == 0 {
            return cfg_err("evaluate.trials must be positive".into());
        }
        if self.probe.channel >= CHANNELS {
            return cfg_err(format!("probe.channel must be below {CHANNELS}, got {}", self.probe.channel));
        }
        if self.probe.steps == 0 || !(self.probe.span >= 0.0) {
            return cfg_err("probe.steps must be positive and probe.span nonnegative".into());
        }
        let g = &self.gradcheck;
        if !(g.step > 0.0 && g.step <= 1e-2) || !(g.tolerance > 0.0) || g.coords == 0 {
            return cfg_err("gradcheck needs 0 < step <= 1e-2, tolerance > 0 and coords > 0".into());
        }
        if self.pulses.train_normal < 2 || self.pulses.test_normal < 2 {
            return cfg_err("pulse benchmark needs at least two normal pulses per split".into());
        }
        if !(self.booster.gate_threshold > 0.0) {
            return cfg_err("booster.gate_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// The resolved configuration in the same format it is read from.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the seed precedence: explicit flag, then the environment
    /// variable, then the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Some(raw) = env {
            self.seed =
                raw.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
        }
        Ok(())
    }
}
