//! Experiment configuration: a line-oriented `key = value` text format with
//! dotted sections, parsed and echoed without any external parser.

use std::path::{Path, PathBuf};

use crate::data::DatasetG;
use crate::decouple::Quantile;
use crate::error::{Error, Result};
use crate::federation::Method;
use crate::importance::{NormKind, NormMode, ScoreKind};
use crate::nn::{ModelSpec, Pool};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Synthetic {
        classes: usize,
        per_class: usize,
        channels: usize,
        height: usize,
        width: usize,
        noise_sigma: f64,
    },
    Idx { images: PathBuf, labels: PathBuf },
}

/// Declarative description of a full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub n_clients: usize,
    pub alpha: f64,
    pub test_fraction: f64,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool: Pool,
    pub fc_widths: Vec<usize>,
    pub rounds: usize,
    pub gamma: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub method_name: String,
    pub q: f64,
    pub norm: NormKind,
    pub cls_only: bool,
    pub fixed_layers: Vec<String>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub export_masks: bool,
    pub sweep_q: Vec<f64>,
    pub sweep_scores: Vec<String>,
}

impl Default for ExperimentConfig {
    /// Desk-scale profile: minutes on a laptop CPU, paper-scale settings
    /// remain expressible by overriding the same keys.
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Synthetic {
                classes: 10,
                per_class: 200,
                channels: 1,
                height: 28,
                width: 28,
                noise_sigma: 0.3,
            },
            n_clients: 20,
            alpha: 0.1,
            test_fraction: 0.5,
            conv_channels: vec![8, 16],
            kernel_size: 5,
            pool: Pool::Max2x2,
            fc_widths: vec![64],
            rounds: 50,
            gamma: 0.25,
            eta: 0.05,
            batch_size: 16,
            local_epochs: 2,
            method_name: "fedobp".into(),
            q: 0.99,
            norm: NormKind::NoNorm,
            cls_only: false,
            fixed_layers: vec!["classifier".into()],
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs/default"),
            export_masks: false,
            sweep_q: vec![0.1, 0.7, 0.99, 0.999, 1.0],
            sweep_scores: vec!["fedobp".into(), "gradient".into(), "fisher".into()],
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut dataset_kind = String::from("synthetic");
        let mut idx_images = PathBuf::new();
        let mut idx_labels = PathBuf::new();
        let (mut classes, mut per_class) = (10usize, 200usize);
        let (mut channels, mut height, mut width) = (1usize, 28usize, 28usize);
        let mut noise_sigma = 0.3f64;
        if let DatasetConfig::Synthetic {
            classes: c,
            per_class: p,
            channels: ch,
            height: h,
            width: w,
            noise_sigma: s,
        } = cfg.dataset
        {
            classes = c;
            per_class = p;
            channels = ch;
            height = h;
            width = w;
            noise_sigma = s;
        }

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::InvalidConfig(format!("line {}: bad {what} `{value}`", lineno + 1))
            };
            match key {
                "dataset.kind" => dataset_kind = value.to_string(),
                "dataset.classes" => classes = value.parse().map_err(|_| bad("integer"))?,
                "dataset.per_class" => per_class = value.parse().map_err(|_| bad("integer"))?,
                "dataset.channels" => channels = value.parse().map_err(|_| bad("integer"))?,
                "dataset.height" => height = value.parse().map_err(|_| bad("integer"))?,
                "dataset.width" => width = value.parse().map_err(|_| bad("integer"))?,
                "dataset.noise_sigma" => noise_sigma = value.parse().map_err(|_| bad("float"))?,
                "dataset.images" => idx_images = PathBuf::from(value),
                "dataset.labels" => idx_labels = PathBuf::from(value),
                "partition.clients" => cfg.n_clients = value.parse().map_err(|_| bad("integer"))?,
                "partition.alpha" => cfg.alpha = value.parse().map_err(|_| bad("float"))?,
                "partition.test_fraction" => {
                    cfg.test_fraction = value.parse().map_err(|_| bad("float"))?
                }
                "model.conv_channels" => cfg.conv_channels = parse_list(value).map_err(|_| bad("integer list"))?,
                "model.kernel" => cfg.kernel_size = value.parse().map_err(|_| bad("integer"))?,
                "model.pool" => {
                    cfg.pool = match value {
                        "max2x2" => Pool::Max2x2,
                        "none" => Pool::None,
                        _ => return Err(bad("pool (max2x2|none)")),
                    }
                }
                "model.fc_widths" => cfg.fc_widths = parse_list(value).map_err(|_| bad("integer list"))?,
                "run.rounds" => cfg.rounds = value.parse().map_err(|_| bad("integer"))?,
                "run.gamma" => cfg.gamma = value.parse().map_err(|_| bad("float"))?,
                "run.eta" => cfg.eta = value.parse().map_err(|_| bad("float"))?,
                "run.batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "run.local_epochs" => {
                    cfg.local_epochs = value.parse().map_err(|_| bad("integer"))?
                }
                "run.seeds" => cfg.seeds = parse_list(value).map_err(|_| bad("integer list"))?,
                "method.name" => cfg.method_name = value.to_string(),
                "method.q" => cfg.q = value.parse().map_err(|_| bad("float"))?,
                "method.norm" => {
                    cfg.norm = match value {
                        "none" => NormKind::NoNorm,
                        "layer" => NormKind::LayerNorm,
                        "global" => NormKind::GlobalNorm,
                        _ => return Err(bad("norm (none|layer|global)")),
                    }
                }
                "method.cls_only" => cfg.cls_only = value.parse().map_err(|_| bad("bool"))?,
                "method.layers" => {
                    cfg.fixed_layers = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                "output.masks" => cfg.export_masks = value.parse().map_err(|_| bad("bool"))?,
                "sweep.q" => cfg.sweep_q = parse_list(value).map_err(|_| bad("float list"))?,
                "sweep.scores" => {
                    cfg.sweep_scores = value.split(',').map(|s| s.trim().to_string()).collect()
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{key}`",
                        lineno + 1
                    )))
                }
            }
        }

        cfg.dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetConfig::Synthetic {
                classes,
                per_class,
                channels,
                height,
                width,
                noise_sigma,
            },
            "idx" => {
                if idx_images.as_os_str().is_empty() || idx_labels.as_os_str().is_empty() {
                    return Err(Error::InvalidConfig(
                        "dataset.kind = idx requires dataset.images and dataset.labels".into(),
                    ));
                }
                DatasetConfig::Idx { images: idx_images, labels: idx_labels }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown dataset.kind `{other}` (synthetic|idx)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("run.rounds must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("run.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::InvalidConfig(format!("run.eta must be positive, got {}", self.eta)));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("run.local_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("run.batch_size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("run.seeds must not be empty".into()));
        }
        if self.n_clients == 0 {
            return Err(Error::InvalidConfig("partition.clients must be at least 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "partition.alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "partition.test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.method()?;
        if let DatasetConfig::Synthetic { classes, per_class, .. } = &self.dataset {
            if *classes < 2 || *per_class == 0 {
                return Err(Error::InvalidConfig("synthetic dataset needs >= 2 classes and >= 1 sample per class".into()));
            }
        }
        Ok(())
    }

    /// Build the method described by the `method.*` keys.
    pub fn method(&self) -> Result<Method> {
        method_from_parts(&self.method_name, self.q, self.norm, self.cls_only, &self.fixed_layers)
    }

    /// Model spec for a dataset's input shape.
    pub fn model_spec(&self, input_shape: (usize, usize, usize), num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape,
            conv_channels: self.conv_channels.clone(),
            kernel_size: self.kernel_size,
            pool: self.pool,
            fc_widths: self.fc_widths.clone(),
            num_classes,
        }
    }

    /// Materialize the dataset. Synthetic data derives from the run seed so
    /// that independent seeds are fully independent runs.
    pub fn load_dataset(&self, seed: u64) -> Result<DatasetG<f64>> {
        match &self.dataset {
            DatasetConfig::Synthetic { classes, per_class, channels, height, width, noise_sigma } => {
                crate::data::synth_dataset(
                    *classes,
                    *per_class,
                    (*channels, *height, *width),
                    *noise_sigma,
                    seed,
                )
            }
            DatasetConfig::Idx { images, labels } => crate::data::load_idx(images, labels),
        }
    }

    /// Canonical text form; parsing it reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.dataset {
            DatasetConfig::Synthetic { classes, per_class, channels, height, width, noise_sigma } => {
                out.push_str("dataset.kind = synthetic\n");
                out.push_str(&format!("dataset.classes = {classes}\n"));
                out.push_str(&format!("dataset.per_class = {per_class}\n"));
                out.push_str(&format!("dataset.channels = {channels}\n"));
                out.push_str(&format!("dataset.height = {height}\n"));
                out.push_str(&format!("dataset.width = {width}\n"));
                out.push_str(&format!("dataset.noise_sigma = {noise_sigma}\n"));
            }
            DatasetConfig::Idx { images, labels } => {
                out.push_str("dataset.kind = idx\n");
                out.push_str(&format!("dataset.images = {}\n", images.display()));
                out.push_str(&format!("dataset.labels = {}\n", labels.display()));
            }
        }
        out.push_str(&format!("partition.clients = {}\n", self.n_clients));
        out.push_str(&format!("partition.alpha = {}\n", self.alpha));
        out.push_str(&format!("partition.test_fraction = {}\n", self.test_fraction));
        out.push_str(&format!("model.conv_channels = {}\n", join(&self.conv_channels)));
        out.push_str(&format!("model.kernel = {}\n", self.kernel_size));
        out.push_str(&format!(
            "model.pool = {}\n",
            match self.pool {
                Pool::Max2x2 => "max2x2",
                Pool::None => "none",
            }
        ));
        out.push_str(&format!("model.fc_widths = {}\n", join(&self.fc_widths)));
        out.push_str(&format!("run.rounds = {}\n", self.rounds));
        out.push_str(&format!("run.gamma = {}\n", self.gamma));
        out.push_str(&format!("run.eta = {}\n", self.eta));
        out.push_str(&format!("run.batch_size = {}\n", self.batch_size));
        out.push_str(&format!("run.local_epochs = {}\n", self.local_epochs));
        out.push_str(&format!("run.seeds = {}\n", join(&self.seeds)));
        out.push_str(&format!("method.name = {}\n", self.method_name));
        out.push_str(&format!("method.q = {}\n", self.q));
        out.push_str(&format!(
            "method.norm = {}\n",
            match self.norm {
                NormKind::NoNorm => "none",
                NormKind::LayerNorm => "layer",
                NormKind::GlobalNorm => "global",
            }
        ));
        out.push_str(&format!("method.cls_only = {}\n", self.cls_only));
        out.push_str(&format!("method.layers = {}\n", self.fixed_layers.join(",")));
        out.push_str(&format!("output.dir = {}\n", self.output_dir.display()));
        out.push_str(&format!("output.masks = {}\n", self.export_masks));
        out.push_str(&format!("sweep.q = {}\n", join(&self.sweep_q)));
        out.push_str(&format!("sweep.scores = {}\n", self.sweep_scores.join(",")));
        out
    }

    /// FNV-1a hash of the canonical text.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Build a method from its config fields.
pub fn method_from_parts(
    name: &str,
    q: f64,
    norm: NormKind,
    cls_only: bool,
    fixed_layers: &[String],
) -> Result<Method> {
    let norm_mode = NormMode::new(norm, cls_only)?;
    let quantile = || Quantile::new(q);
    match name {
        "fedobp" => Ok(Method::FedObp { q: quantile()?, norm: norm_mode }),
        "fisher" => {
            Ok(Method::ScoreDecouple { score: ScoreKind::Fisher, q: quantile()?, norm: norm_mode })
        }
        "gradient" => {
            Ok(Method::ScoreDecouple { score: ScoreKind::Gradient, q: quantile()?, norm: norm_mode })
        }
        "fixedlayer" => Ok(Method::FixedLayer { personalized_layers: fixed_layers.to_vec() }),
        "fedavg" => Ok(Method::FedAvg),
        "localonly" => Ok(Method::LocalOnly),
        other => Err(Error::InvalidConfig(format!(
            "unknown method.name `{other}` (fedobp|fisher|gradient|fixedlayer|fedavg|localonly)"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, ()>
where
    <T as std::str::FromStr>::Err: std::fmt::Debug,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| s.trim().parse::<T>().map_err(|_| ())).collect()
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_text();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse(
            "run.rounds = 5\nmethod.name = fedavg\npartition.alpha = 0.5\nrun.seeds = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.rounds, 5);
        assert_eq!(cfg.method_name, "fedavg");
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.seeds, vec![42]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse("nope = 1\n").is_err());
        assert!(ExperimentConfig::parse("run.rounds = zero\n").is_err());
        assert!(ExperimentConfig::parse("run.rounds = 0\n").is_err());
        assert!(ExperimentConfig::parse("partition.alpha = 0\n").is_err());
        assert!(ExperimentConfig::parse("run.gamma = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("method.q = 0\n").is_err());
        assert!(ExperimentConfig::parse("method.name = magic\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse("# comment\n\nrun.rounds = 7\n").unwrap();
        assert_eq!(cfg.rounds, 7);
    }

    #[test]
    fn method_construction_covers_all_names() {
        use crate::federation::Method;
        let m = method_from_parts("fedobp", 0.9, NormKind::NoNorm, false, &[]).unwrap();
        assert!(matches!(m, Method::FedObp { .. }));
        let m = method_from_parts("localonly", 0.9, NormKind::NoNorm, false, &[]).unwrap();
        assert!(matches!(m, Method::LocalOnly));
        assert!(method_from_parts("fisher", 0.0, NormKind::NoNorm, false, &[]).is_err());
    }
}
