//! Experiment configuration: a flat, sectioned key-value file (INI-style).
//!
//! ```text
//! [experiment]
//! seed = 42
//!
//! [dataset]
//! kind = gaussian_mix
//! sources = 4
//! n_classes = 3
//! n_features = 20
//! samples_per_class = 120
//! class_mean_scale = 8.0
//! covariance_scale = 1.0
//!
//! [partition]
//! scheme = mix
//! client_counts = 6,5,5,4
//! samples_per_client = 60
//! n_clients = 20
//! test_fraction = 0.2
//!
//! [train]
//! mode = pacfl
//! rounds = 10
//! ...
//! ```
//!
//! Unknown keys are rejected with their line number so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::federation::{ArchSpec, Mode, TrainConfig};
use crate::partition::{PartitionSpec, Scheme};
use crate::subspace::{MetricKind, Normalize};

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    /// One synthetic Gaussian-blob dataset.
    Gaussian {
        n_classes: usize,
        n_features: usize,
        samples_per_class: usize,
        class_mean_scale: f64,
        covariance_scale: f64,
    },
    /// Several synthetic sources (for the mix partition), one per group.
    GaussianMix {
        sources: usize,
        n_classes: usize,
        n_features: usize,
        samples_per_class: usize,
        class_mean_scale: f64,
        covariance_scale: f64,
    },
    /// CSV files on disk; one path per source.
    Csv {
        paths: Vec<PathBuf>,
        label_column: String,
    },
    /// The built-in two-group flipped-labels benchmark.
    ConflictingGroups {
        clients_per_group: usize,
        samples_per_client: usize,
    },
}

/// Everything a run needs, parsed and validated.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub partition: PartitionSpec,
    pub train: TrainConfig,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub beta_sweep: Option<Vec<f64>>,
    /// Hold out this many trailing clients from training; the `newcomer`
    /// subcommand assigns them afterwards.
    pub holdout: usize,
    pub fine_tune_epochs: usize,
}

/// One parsed `key = value` with its source line for diagnostics.
#[derive(Debug, Clone)]
struct RawValue {
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

/// Sectioned key-value view of the raw file.
struct RawConfig {
    values: BTreeMap<(String, String), RawValue>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find([';', '#']) {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {line_no}: unterminated section"))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {line_no}: expected 'key = value', got '{line}'"
                ))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            let previous = values.insert(
                (section.clone(), key.clone()),
                RawValue {
                    value: value.trim().to_string(),
                    line: line_no,
                    used: std::cell::Cell::new(false),
                },
            );
            if previous.is_some() {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key '{key}' in section [{section}]"
                )));
            }
        }
        Ok(RawConfig { values })
    }

    fn get(&self, section: &str, key: &str) -> Option<&RawValue> {
        let v = self.values.get(&(section.to_string(), key.to_string()));
        if let Some(v) = v {
            v.used.set(true);
        }
        v
    }

    fn require(&self, section: &str, key: &str) -> Result<&RawValue> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing key '{key}' in section [{section}]")))
    }

    fn parse_value<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
        raw: &RawValue,
    ) -> Result<T> {
        raw.value.parse::<T>().map_err(|_| {
            Error::Config(format!(
                "line {}: [{}] {} = '{}' is not a valid {}",
                raw.line,
                section,
                key,
                raw.value,
                std::any::type_name::<T>()
            ))
        })
    }

    fn required<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self.require(section, key)?;
        self.parse_value(section, key, raw)
    }

    fn optional<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            Some(raw) => self.parse_value(section, key, raw),
            None => Ok(default),
        }
    }

    fn optional_str(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key)
            .map(|r| r.value.clone())
            .unwrap_or_else(|| default.to_string())
    }

    fn finish(&self) -> Result<()> {
        for ((section, key), raw) in &self.values {
            if !raw.used.get() {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{key}' in section [{section}]",
                    raw.line
                )));
            }
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry '{}'", t.trim())))
        })
        .collect()
}

fn parse_beta(raw: &str) -> Result<f64> {
    let t = raw.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    t.parse::<f64>()
        .map_err(|_| Error::Config(format!("'{t}' is not a valid beta")))
}

impl ExperimentConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;

        let seed: u64 = raw.optional("experiment", "seed", 0)?;

        let kind = raw.optional_str("dataset", "kind", "gaussian");
        let dataset = match kind.as_str() {
            "gaussian" => DatasetConfig::Gaussian {
                n_classes: raw.required("dataset", "n_classes")?,
                n_features: raw.required("dataset", "n_features")?,
                samples_per_class: raw.required("dataset", "samples_per_class")?,
                class_mean_scale: raw.optional("dataset", "class_mean_scale", 5.0)?,
                covariance_scale: raw.optional("dataset", "covariance_scale", 1.0)?,
            },
            "gaussian_mix" => DatasetConfig::GaussianMix {
                sources: raw.required("dataset", "sources")?,
                n_classes: raw.required("dataset", "n_classes")?,
                n_features: raw.required("dataset", "n_features")?,
                samples_per_class: raw.required("dataset", "samples_per_class")?,
                class_mean_scale: raw.optional("dataset", "class_mean_scale", 5.0)?,
                covariance_scale: raw.optional("dataset", "covariance_scale", 1.0)?,
            },
            "csv" => {
                let paths_raw = raw.require("dataset", "paths")?.value.clone();
                let paths: Vec<PathBuf> = paths_raw
                    .split(',')
                    .map(|p| PathBuf::from(p.trim()))
                    .collect();
                DatasetConfig::Csv {
                    paths,
                    label_column: raw.optional_str("dataset", "label_column", "label"),
                }
            }
            "conflicting_groups" => DatasetConfig::ConflictingGroups {
                clients_per_group: raw.required("dataset", "clients_per_group")?,
                samples_per_client: raw.required("dataset", "samples_per_client")?,
            },
            other => {
                return Err(Error::Config(format!("unknown dataset kind '{other}'")));
            }
        };

        let n_clients: usize = match dataset {
            DatasetConfig::ConflictingGroups {
                clients_per_group, ..
            } => raw.optional("partition", "n_clients", 2 * clients_per_group)?,
            _ => raw.required("partition", "n_clients")?,
        };
        let scheme_name = raw.optional_str("partition", "scheme", "label_skew");
        let scheme = match scheme_name.as_str() {
            "label_skew" => Scheme::LabelSkew {
                rho_percent: raw.optional("partition", "rho", 20.0)?,
            },
            "dirichlet" => Scheme::Dirichlet {
                alpha: raw.optional("partition", "alpha", 0.1)?,
            },
            "mix" => Scheme::Mix {
                dataset_client_counts: parse_list(
                    &raw.require("partition", "client_counts")?.value,
                    "client_counts",
                )?,
                samples_per_client: raw.required("partition", "samples_per_client")?,
            },
            "builtin" => Scheme::LabelSkew { rho_percent: 100.0 }, // unused with conflicting_groups
            other => return Err(Error::Config(format!("unknown partition scheme '{other}'"))),
        };
        let partition = PartitionSpec {
            scheme,
            n_clients,
            test_fraction: raw.optional("partition", "test_fraction", 0.2)?,
            seed: crate::seed::derive(seed, "partition"),
        };

        let arch = match raw.optional_str("train", "arch", "logreg").as_str() {
            "logreg" => ArchSpec::LogReg,
            "mlp" => ArchSpec::Mlp {
                hidden: raw.optional("train", "hidden", 16)?,
            },
            other => return Err(Error::Config(format!("unknown arch '{other}'"))),
        };
        let beta = parse_beta(&raw.optional_str("train", "beta", "30"))?;
        let train = TrainConfig {
            rounds: raw.optional("train", "rounds", 10)?,
            sample_rate: raw.optional("train", "sample_rate", 1.0)?,
            local_epochs: raw.optional("train", "local_epochs", 1)?,
            batch_size: raw.optional("train", "batch_size", 10)?,
            learning_rate: raw.optional("train", "learning_rate", 0.05)?,
            momentum: raw.optional("train", "momentum", 0.5)?,
            seed: crate::seed::derive(seed, "train"),
            beta,
            p: raw.optional("train", "p", 3)?,
            metric: MetricKind::parse(&raw.optional_str("train", "metric", "min_angle"))?,
            linkage: crate::clustering::Linkage::parse(
                &raw.optional_str("train", "linkage", "average"),
            )?,
            arch,
            normalize: Normalize::parse(&raw.optional_str("train", "normalize", "scale01"))?,
            bytes_per_param: raw.optional("train", "bytes_per_param", 8)?,
        };
        let mode = Mode::parse(&raw.optional_str("train", "mode", "pacfl"))?;

        let output_dir = PathBuf::from(raw.optional_str("output", "dir", "out"));

        let beta_sweep = match raw.get("sweep", "betas") {
            Some(v) => {
                let betas: Vec<f64> = v.value.split(',').map(parse_beta).collect::<Result<_>>()?;
                if betas.is_empty() {
                    return Err(Error::Config("sweep betas list is empty".into()));
                }
                if betas.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Config("sweep betas must be sorted ascending".into()));
                }
                Some(betas)
            }
            None => None,
        };

        let holdout: usize = raw.optional("newcomer", "holdout", 0)?;
        let fine_tune_epochs: usize = raw.optional("newcomer", "fine_tune_epochs", 3)?;

        raw.finish()?;

        let config = ExperimentConfig {
            seed,
            dataset,
            partition,
            train,
            mode,
            output_dir,
            beta_sweep,
            holdout,
            fine_tune_epochs,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.train.validate()?;
        if self.holdout >= self.partition.n_clients {
            return Err(Error::Config(format!(
                "holdout {} must leave at least one training client of {}",
                self.holdout, self.partition.n_clients
            )));
        }
        if let DatasetConfig::Csv { paths, .. } = &self.dataset {
            for path in paths {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "dataset file '{}' does not exist",
                        path.display()
                    )));
                }
            }
        }
        if let (
            DatasetConfig::GaussianMix { sources, .. },
            Scheme::Mix {
                dataset_client_counts,
                ..
            },
        ) = (&self.dataset, &self.partition.scheme)
        {
            if *sources != dataset_client_counts.len() {
                return Err(Error::Config(format!(
                    "{sources} gaussian sources but {} client counts",
                    dataset_client_counts.len()
                )));
            }
        }
        Ok(())
    }

    /// Replace the experiment seed, rederiving the partition/train streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.partition.seed = crate::seed::derive(seed, "partition");
        self.train.seed = crate::seed::derive(seed, "train");
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[experiment]
seed = 7

[dataset]
kind = gaussian
n_classes = 3
n_features = 8
samples_per_class = 30

[partition]
scheme = label_skew
rho = 67
n_clients = 4

[train]
rounds = 2
";

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.partition.n_clients, 4);
        assert_eq!(cfg.train.rounds, 2);
        assert_eq!(cfg.mode, Mode::Pacfl);
        assert!(cfg.beta_sweep.is_none());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = format!("{MINIMAL}\nbogus_key = 1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn bad_value_reports_line_and_field() {
        let text = MINIMAL.replace("rounds = 2", "rounds = banana");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rounds") && msg.contains("banana"), "{msg}");
    }

    #[test]
    fn beta_accepts_infinity() {
        let text = format!("{MINIMAL}\n[sweep]\nbetas = 0, 10, inf\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let betas = cfg.beta_sweep.unwrap();
        assert_eq!(betas.len(), 3);
        assert!(betas[2].is_infinite());
    }

    #[test]
    fn seed_override_rederives_streams() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let b = ExperimentConfig::parse(MINIMAL).unwrap().with_seed(99);
        assert_ne!(a.partition.seed, b.partition.seed);
        assert_ne!(a.train.seed, b.train.seed);
    }
}
