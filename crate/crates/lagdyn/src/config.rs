//! Run configuration: plain `key = value` lines with `#` comments, every key
//! also accepted as a `--key value` flag that overrides the file.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use lagdyn_core::energy::EnergyConfig;
use lagdyn_core::kinematics::BoundaryPadding;
use lagdyn_core::nn::BundleConfig;
use lagdyn_core::objective::ObjectiveConfig;
use lagdyn_core::signals::{BoundaryDetector, Polarity, ProminenceThreshold, SignalKind};

use crate::error::{read_to_string, AppError, AppResult};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub topology: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub huber_knee: f64,
    pub lambda_ec: f64,
    pub warmup_start: usize,
    pub warmup_ramp: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stages: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub torque_start: usize,
    pub holdout_fraction: f64,
    pub pad_replicate: bool,
    pub boundary_window: usize,
    pub boundary_prominence: f64,
    pub boundary_separation: usize,
    pub boundary_polarity: Polarity,
    pub boundary_signal: SignalKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: None,
            data: Vec::new(),
            output_dir: PathBuf::from("out"),
            epsilon: 1e-5,
            delta: 0.1,
            eta: 1e-3,
            huber_knee: 1.0,
            lambda_ec: 0.1,
            warmup_start: 20,
            warmup_ramp: 4,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            stages: 4,
            channels: 128,
            hidden: vec![128, 128],
            kernel: 3,
            torque_start: 2,
            holdout_fraction: 0.2,
            pad_replicate: false,
            boundary_window: 9,
            boundary_prominence: 0.5,
            boundary_separation: 10,
            boundary_polarity: Polarity::Peaks,
            boundary_signal: SignalKind::TorqueChange,
        }
    }
}

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("topology", "skeleton topology JSON"),
    ("data", "comma-separated dataset paths"),
    ("output_dir", "directory for every written file"),
    ("epsilon", "inertia diagonal floor"),
    ("delta", "energy residual denominator stabilizer"),
    ("eta", "energy residual mask threshold"),
    ("huber_knee", "Huber knee of the energy loss"),
    ("lambda_ec", "final energy-consistency weight"),
    ("warmup_start", "first epoch of the weight ramp"),
    ("warmup_ramp", "ramp length in epochs"),
    ("learning_rate", "Adam step size"),
    ("epochs", "training epochs"),
    ("batch_size", "sequences per optimizer step"),
    ("seed", "master random seed"),
    ("stages", "gating stages"),
    ("channels", "gated feature channels"),
    ("hidden", "comma-separated hidden widths of each estimator"),
    ("kernel", "gate convolution length (odd)"),
    ("torque_start", "first frame of the torque regression"),
    ("holdout_fraction", "share of sequences held out from training"),
    ("pad_replicate", "difference from q(-1) = q(0) instead of zero"),
    ("boundary_window", "smoothing window of the boundary detector"),
    ("boundary_prominence", "prominence threshold as a fraction of the IQR"),
    ("boundary_separation", "minimum frames between boundaries"),
    ("boundary_polarity", "troughs or peaks"),
    ("boundary_signal", "power, torque, torque_change or average"),
];

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> AppResult<T> {
    v.trim().parse().map_err(|_| AppError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> AppResult<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

pub fn parse_polarity(v: &str) -> AppResult<Polarity> {
    match v.trim() {
        "troughs" => Ok(Polarity::Troughs),
        "peaks" => Ok(Polarity::Peaks),
        other => Err(AppError::Config(format!("unknown polarity {other:?}"))),
    }
}

pub fn parse_signal(v: &str) -> AppResult<SignalKind> {
    match v.trim() {
        "power" => Ok(SignalKind::Power),
        "torque" => Ok(SignalKind::Torque),
        "torque_change" | "torque-change" => Ok(SignalKind::TorqueChange),
        "average" => Ok(SignalKind::NormalizedAverage),
        other => Err(AppError::Config(format!("unknown signal {other:?}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let key = normalize(key);
        let v = value.trim();
        match key.as_str() {
            "topology" => self.topology = Some(PathBuf::from(v)),
            "data" => {
                self.data = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| PathBuf::from(s.trim()))
                    .collect()
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            "epsilon" => self.epsilon = num(&key, v)?,
            "delta" => self.delta = num(&key, v)?,
            "eta" => self.eta = num(&key, v)?,
            "huber_knee" => self.huber_knee = num(&key, v)?,
            "lambda_ec" => self.lambda_ec = num(&key, v)?,
            "warmup_start" => self.warmup_start = num(&key, v)?,
            "warmup_ramp" => self.warmup_ramp = num(&key, v)?,
            "learning_rate" => self.learning_rate = num(&key, v)?,
            "epochs" => self.epochs = num(&key, v)?,
            "batch_size" => self.batch_size = num(&key, v)?,
            "seed" => self.seed = num(&key, v)?,
            "stages" => self.stages = num(&key, v)?,
            "channels" => self.channels = num(&key, v)?,
            "hidden" => self.hidden = list(&key, v)?,
            "kernel" => self.kernel = num(&key, v)?,
            "torque_start" => self.torque_start = num(&key, v)?,
            "holdout_fraction" => self.holdout_fraction = num(&key, v)?,
            "pad_replicate" => self.pad_replicate = num(&key, v)?,
            "boundary_window" => self.boundary_window = num(&key, v)?,
            "boundary_prominence" => self.boundary_prominence = num(&key, v)?,
            "boundary_separation" => self.boundary_separation = num(&key, v)?,
            "boundary_polarity" => self.boundary_polarity = parse_polarity(v)?,
            "boundary_signal" => self.boundary_signal = parse_signal(v)?,
            _ => return Err(AppError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> AppResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                AppError::Config(m) => AppError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Range checks; with `check_paths`, every input path must exist.
    pub fn validate(&self, check_paths: bool) -> AppResult<()> {
        let bad = |m: &str| Err(AppError::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.delta >= 0.0) || !(self.eta >= 0.0) || !(self.huber_knee > 0.0) {
            return bad("delta and eta must be nonnegative, huber_knee positive");
        }
        if !(self.lambda_ec >= 0.0) || !self.lambda_ec.is_finite() {
            return bad("lambda_ec must be finite and nonnegative");
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning_rate and batch_size must be positive");
        }
        if self.kernel.is_multiple_of(2) || self.channels == 0 {
            return bad("kernel must be odd and channels positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if self.boundary_window == 0 || !(self.boundary_prominence >= 0.0) {
            return bad("boundary_window must be positive and boundary_prominence nonnegative");
        }
        if check_paths {
            for p in self.topology.iter().chain(&self.data) {
                if !p.exists() {
                    return Err(AppError::Config(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn padding(&self) -> BoundaryPadding {
        if self.pad_replicate {
            BoundaryPadding::Replicate
        } else {
            BoundaryPadding::Zero
        }
    }

    pub fn energy(&self) -> EnergyConfig {
        EnergyConfig {
            delta: self.delta,
            eta: self.eta,
            huber_knee: self.huber_knee,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            eps: self.epsilon,
            energy: self.energy(),
            torque_start: self.torque_start,
        }
    }

    pub fn bundle(&self) -> BundleConfig {
        BundleConfig {
            hidden: self.hidden.clone(),
            channels: self.channels,
            stages: self.stages,
            kernel: self.kernel,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            lambda_ec: self.lambda_ec,
            warmup_start: self.warmup_start,
            warmup_ramp: self.warmup_ramp,
            objective: self.objective(),
            bundle: self.bundle(),
            padding: self.padding(),
        }
    }

    pub fn detector(&self) -> BoundaryDetector {
        BoundaryDetector {
            window: self.boundary_window,
            threshold: ProminenceThreshold::IqrFraction(self.boundary_prominence),
            min_separation: self.boundary_separation,
            polarity: self.boundary_polarity,
        }
    }
}

/// `--config FILE` plus one `--key value` override per recognized key.
#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub file: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> AppResult<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.file {
            config.apply_text(&load_text(path)?)?;
        }
        for (k, v) in &self.overrides {
            config.set(k, v)?;
        }
        Ok(config)
    }
}

fn load_text(path: &Path) -> AppResult<String> {
    read_to_string(path).map_err(|e| AppError::Config(e.to_string()))
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigArgs {
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: Vec::new(),
        };
        for (key, _) in KEYS {
            let id = key.replace('_', "-");
            if let Some(v) = m.get_one::<String>(&id) {
                out.overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file"),
        );
        KEYS.iter().fold(cmd, |cmd, (key, help)| {
            let id = key.replace('_', "-");
            cmd.arg(
                Arg::new(id.clone())
                    .long(id)
                    .value_name("VALUE")
                    .help(*help)
                    .help_heading("Configuration"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nepochs = 7\nlambda-ec=0.5  # trailing\nhidden = 16, 8\nboundary_polarity = troughs\n")
            .unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.lambda_ec, 0.5);
        assert_eq!(c.hidden, vec![16, 8]);
        assert_eq!(c.boundary_polarity, Polarity::Troughs);
        let args = ConfigArgs {
            file: None,
            overrides: vec![("epochs".into(), "3".into())],
        };
        assert_eq!(args.resolve().unwrap().epochs, 3);
    }

    #[test]
    fn errors_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nonsense"), Err(AppError::Config(_))));
        assert!(matches!(c.set("unknown", "1"), Err(AppError::Config(_))));
        assert!(matches!(c.set("epochs", "many"), Err(AppError::Config(_))));
        c.delta = -1.0;
        assert!(c.validate(false).is_err());
        let c = RunConfig {
            data: vec![PathBuf::from("/definitely/missing.jsonl")],
            ..RunConfig::default()
        };
        assert!(c.validate(false).is_ok());
        assert!(c.validate(true).is_err());
    }

    #[test]
    fn defaults_agree_with_training_defaults() {
        assert_eq!(RunConfig::default().train(), TrainConfig::default());
        assert_eq!(RunConfig::default().detector().window, BoundaryDetector::default().window);
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("topology", "t.json"),
            ("data", "a.jsonl,b.jsonl"),
            ("output_dir", "o"),
            ("hidden", "4,4"),
            ("pad_replicate", "true"),
            ("boundary_polarity", "peaks"),
            ("boundary_signal", "average"),
            ("seed", "3"),
        ];
        for (key, _) in KEYS {
            let v = samples.iter().find(|(k, _)| k == key).map_or("1", |(_, v)| v);
            RunConfig::default().set(key, v).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
