//! Run configuration: protocol parameters plus data, model and output
//! settings, stored as a line-oriented `key = value` file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::learners::{Allocation, DatasetKind};
use crate::protocol::{LambdaMixing, RoundConfig, Variant};

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Blobs,
    /// Directory with the four MNIST-style IDX files.
    Idx(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("blobs") || s.eq_ignore_ascii_case("synthetic") {
            return Ok(Self::Blobs);
        }
        match s.split_once(':') {
            Some((kind, dir)) if kind.eq_ignore_ascii_case("idx") && !dir.is_empty() => {
                Ok(Self::Idx(dir.into()))
            }
            _ => Err(Error::Config(format!(
                "unknown dataset `{s}` (expected `blobs` or `idx:<dir>`)"
            ))),
        }
    }
}

impl std::fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Blobs => f.write_str("blobs"),
            Self::Idx(dir) => write!(f, "idx:{}", dir.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub round: RoundConfig,
    pub dataset: DatasetSpec,
    pub classes: usize,
    pub features: usize,
    /// Training samples (blobs) or the cap on loaded training images (IDX).
    pub train_samples: usize,
    pub test_samples: usize,
    pub separation: f64,
    pub allocation: Allocation,
    /// Hidden layer widths; `None` picks one layer of 128 units except for the
    /// gradient-compression variants, which train softmax regression.
    pub hidden: Option<Vec<usize>>,
    pub rounds: usize,
    pub eval_every: usize,
    /// Metrics CSV destination; `None` prints to stdout.
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            round: RoundConfig::default(),
            dataset: DatasetSpec::Blobs,
            classes: 10,
            features: 30,
            train_samples: 2000,
            test_samples: 500,
            separation: 0.7,
            allocation: Allocation::Iid,
            hidden: None,
            rounds: 50,
            eval_every: 1,
            out: None,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_auto<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl ExperimentConfig {
    pub fn hidden_layers(&self) -> Vec<usize> {
        match &self.hidden {
            Some(h) => h.clone(),
            None if self.round.variant.is_cfl() => Vec::new(),
            None => vec![128],
        }
    }

    pub fn dataset_kind(&self) -> DatasetKind {
        match &self.dataset {
            DatasetSpec::Blobs => DatasetKind::SyntheticBlobs {
                classes: self.classes,
                features: self.features,
                train_samples: self.train_samples,
                test_samples: self.test_samples,
                separation: self.separation,
            },
            DatasetSpec::Idx(dir) => DatasetKind::IdxFiles {
                dir: dir.clone(),
                max_train: self.train_samples,
                max_test: self.test_samples,
            },
        }
    }

    /// Applies one `key = value` setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let r = &mut self.round;
        match key.trim().replace('-', "_").as_str() {
            "seed" => self.seed = parse(key, value)?,
            "variant" => r.variant = value.parse()?,
            "rounds" => self.rounds = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "out" => {
                self.out = if value.is_empty() {
                    None
                } else {
                    Some(value.into())
                }
            }
            "dataset" => self.dataset = value.parse()?,
            "classes" => self.classes = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "train_samples" => self.train_samples = parse(key, value)?,
            "test_samples" => self.test_samples = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "allocation" => self.allocation = value.parse()?,
            "alpha" => {
                self.allocation = if value.eq_ignore_ascii_case("iid") {
                    Allocation::Iid
                } else {
                    format!("dirichlet({value})").parse()?
                }
            }
            "hidden" => {
                self.hidden = if value.eq_ignore_ascii_case("auto") {
                    None
                } else if value.is_empty() || value.eq_ignore_ascii_case("none") {
                    Some(Vec::new())
                } else {
                    Some(
                        value
                            .split(',')
                            .map(|w| parse(key, w.trim()))
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
            }
            "n_clients" => r.n_clients = parse(key, value)?,
            "tau" => r.tau = parse(key, value)?,
            "candidates" => r.candidates = parse(key, value)?,
            "masks_ul" => r.masks_ul = parse(key, value)?,
            "masks_dl" => r.masks_dl = parse_auto(key, value)?,
            "block_strategy" => r.block_strategy = value.parse()?,
            "block_size" => r.block_size = parse(key, value)?,
            "target_kl" => r.target_kl = parse_auto(key, value)?,
            "max_block" => r.max_block = parse(key, value)?,
            "deviation_factor" => r.deviation_factor = parse(key, value)?,
            "lambda" => r.lambda = value.parse::<LambdaMixing>()?,
            "eta_s" => r.eta_s = parse_auto(key, value)?,
            "qsgd_levels" => r.qsgd_levels = parse_auto(key, value)?,
            "clamp" => r.clamp = parse(key, value)?,
            "batch_size" => r.batch_size = parse(key, value)?,
            "mask_lr" => r.mask_lr = parse(key, value)?,
            "local_lr" => r.local_lr = parse(key, value)?,
            "optimizer" => r.optimizer = value.parse()?,
            "ste" => r.ste = value.parse()?,
            "eval_masks" => r.eval_masks = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a file body onto the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Every key in a fixed order; parsing the output gives back `self`.
    pub fn serialize(&self) -> String {
        let r = &self.round;
        let hidden = match &self.hidden {
            None => "auto".to_string(),
            Some(h) if h.is_empty() => "none".to_string(),
            Some(h) => h.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        };
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("variant", r.variant.to_string()),
            ("rounds", self.rounds.to_string()),
            ("eval_every", self.eval_every.to_string()),
            (
                "out",
                self.out
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("dataset", self.dataset.to_string()),
            ("classes", self.classes.to_string()),
            ("features", self.features.to_string()),
            ("train_samples", self.train_samples.to_string()),
            ("test_samples", self.test_samples.to_string()),
            ("separation", self.separation.to_string()),
            ("allocation", self.allocation.to_string()),
            ("hidden", hidden),
            ("n_clients", r.n_clients.to_string()),
            ("tau", r.tau.to_string()),
            ("candidates", r.candidates.to_string()),
            ("masks_ul", r.masks_ul.to_string()),
            ("masks_dl", show_auto(&r.masks_dl)),
            ("block_strategy", r.block_strategy.to_string()),
            ("block_size", r.block_size.to_string()),
            ("target_kl", show_auto(&r.target_kl)),
            ("max_block", r.max_block.to_string()),
            ("deviation_factor", r.deviation_factor.to_string()),
            ("lambda", r.lambda.to_string()),
            ("eta_s", show_auto(&r.eta_s)),
            ("qsgd_levels", show_auto(&r.qsgd_levels)),
            ("clamp", r.clamp.to_string()),
            ("batch_size", r.batch_size.to_string()),
            ("mask_lr", r.mask_lr.to_string()),
            ("local_lr", r.local_lr.to_string()),
            ("optimizer", r.optimizer.to_string()),
            ("ste", r.ste.to_string()),
            ("eval_masks", r.eval_masks.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.round.validate()?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.classes < 2
            || self.features == 0
            || self.train_samples == 0
            || self.test_samples == 0
        {
            return Err(Error::Config(
                "dataset sizes must be positive (at least two classes)".into(),
            ));
        }
        if self.round.variant == Variant::CflQsgd && self.round.qsgd_levels == Some(0) {
            return Err(Error::Config("qsgd_levels must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse_str(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "# run\nvariant = PR_SplitDL\nseed=7 # trailing\nalpha = 0.3\nhidden = 32,16\nmasks_dl = 4\nlambda = auto\n\n";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.round.variant, Variant::PrSplitDl);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.allocation, Allocation::Dirichlet(0.3));
        assert_eq!(cfg.hidden, Some(vec![32, 16]));
        assert_eq!(cfg.round.masks_dl, Some(4));
        assert_eq!(cfg.round.lambda, LambdaMixing::Auto);
        let once = cfg.serialize();
        assert_eq!(
            ExperimentConfig::parse_str(&once).unwrap().serialize(),
            once
        );
    }

    #[test]
    fn errors_name_the_line() {
        let err = ExperimentConfig::parse_str("rounds = 3\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(ExperimentConfig::parse_str("variant = nope").is_err());
        assert!(ExperimentConfig::parse_str("no equals sign").is_err());
    }

    #[test]
    fn hidden_defaults_follow_variant() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.hidden_layers(), vec![128]);
        cfg.round.variant = Variant::CflSign;
        assert!(cfg.hidden_layers().is_empty());
        cfg.set("hidden", "none").unwrap();
        assert_eq!(
            cfg.serialize().lines().find(|l| l.starts_with("hidden")),
            Some("hidden = none")
        );
    }

    #[test]
    fn dataset_spec_parsing() {
        assert_eq!(
            "idx:/data/mnist".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Idx("/data/mnist".into())
        );
        assert!("csv:foo".parse::<DatasetSpec>().is_err());
    }
}
