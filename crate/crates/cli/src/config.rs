//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use ngc::dataset::SyntheticConfig;
use ngc::graph::GraphParams;
use ngc::losses::LossParams;
use ngc::model::ModelShape;
use ngc::propagation::PropagationParams;
use ngc::trainer::TrainParams;
use ngc::NgcError;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for model initialization and minibatch order.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory. Relative paths resolve against the config file.
    pub output_dir: PathBuf,
    /// Required unless `synthetic` is present.
    #[serde(default)]
    pub num_classes: Option<usize>,
    /// Defaults to `<output_dir>/train.csv`.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    /// Defaults to `<output_dir>/test.csv`.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub graph: GraphParams,
    #[serde(default)]
    pub propagation: PropagationParams,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub loss: LossParams,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub eta: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { eta: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ensemble_momentum: f64,
    pub normalize_soft_labels: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            warmup_epochs: 5,
            epochs: 50,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            ensemble_momentum: p.ensemble_momentum,
            normalize_soft_labels: p.normalize_soft_labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub zeta: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { zeta: 0.5 }
    }
}

/// Config field that owns a core parameter name.
pub fn field_path(name: &str) -> String {
    let section = match name {
        "k" | "gamma" | "symmetrization" => "graph",
        "alpha" | "cg_tolerance" | "cg_max_iters" => "propagation",
        "eta" => "selection",
        "tau1" | "tau2" | "lambda1" | "lambda2" | "jitter_sigma" => "loss",
        "hidden_dim" | "projection_dim" | "model" => "model",
        "batch_size" | "learning_rate" | "ensemble_momentum" | "warmup_epochs" | "epochs" => "training",
        "zeta" => "detection",
        _ => return name.to_string(),
    };
    if section == name {
        section.to_string()
    } else {
        format!("{section}.{name}")
    }
}

fn in_section(section: &str, res: ngc::Result<()>) -> Result<(), CliError> {
    res.map_err(|e| match e {
        NgcError::InvalidParameter { name, reason } => CliError::Config {
            field: format!("{section}.{name}"),
            message: reason,
        },
        other => CliError::Config {
            field: section.to_string(),
            message: other.to_string(),
        },
    })
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses, resolves relative paths against the file's directory, and
    /// validates every section.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CliError::Config {
                field: if field == "." { "(root)".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(p) = self.train_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.test_path.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(s) = &self.synthetic {
            in_section("synthetic", s.validate())?;
            if let Some(k) = self.num_classes {
                if k != s.num_classes {
                    return Err(invalid(
                        "num_classes",
                        format!("{k} disagrees with synthetic.num_classes = {}", s.num_classes),
                    ));
                }
            }
        }
        match self.num_classes {
            Some(k) if k < 2 => return Err(invalid("num_classes", format!("need at least 2 classes, got {k}"))),
            None if self.synthetic.is_none() => {
                return Err(invalid("num_classes", "required when no synthetic section is given"))
            }
            _ => {}
        }
        in_section("graph", self.graph.validate())?;
        in_section("propagation", self.propagation.validate())?;
        in_section("loss", self.loss.validate())?;
        if !(0.0..=1.0).contains(&self.selection.eta) {
            return Err(invalid("selection.eta", format!("must lie in [0, 1], got {}", self.selection.eta)));
        }
        if self.model.hidden_dim == 0 {
            return Err(invalid("model.hidden_dim", "must be at least 1"));
        }
        if self.model.projection_dim == 0 {
            return Err(invalid("model.projection_dim", "must be at least 1"));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be at least 1"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(invalid("training.learning_rate", format!("must be finite and >= 0, got {}", t.learning_rate)));
        }
        if !(0.0..1.0).contains(&t.ensemble_momentum) {
            return Err(invalid(
                "training.ensemble_momentum",
                format!("must lie in [0, 1), got {}", t.ensemble_momentum),
            ));
        }
        if !(-1.0..=1.0).contains(&self.detection.zeta) {
            return Err(invalid("detection.zeta", format!("must lie in [-1, 1], got {}", self.detection.zeta)));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
            .or(self.synthetic.as_ref().map(|s| s.num_classes))
            .expect("validated")
    }

    pub fn train_path(&self) -> PathBuf {
        self.train_path.clone().unwrap_or_else(|| self.output_dir.join("train.csv"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.test_path.clone().unwrap_or_else(|| self.output_dir.join("test.csv"))
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            graph: self.graph,
            propagation: self.propagation,
            normalize_soft_labels: self.training.normalize_soft_labels,
            ensemble_momentum: self.training.ensemble_momentum,
            eta: self.selection.eta,
            loss: self.loss,
            model: self.model,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"output_dir": "out", "num_classes": 3}"#;

    fn err_field(text: &str) -> String {
        let cfg = RunConfig::parse(text);
        let err = match cfg {
            Err(e) => e,
            Ok(c) => c.validate().unwrap_err(),
        };
        match err {
            CliError::Config { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.graph.k, 10);
        assert_eq!(cfg.training.epochs, 50);
        assert_eq!(cfg.train_params(), TrainParams::default());
        assert_eq!(cfg.train_path(), PathBuf::from("out/train.csv"));
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        let again = RunConfig::parse(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        assert_eq!(err_field(r#"{"output_dir": "o", "num_classes": 3, "graph": {"kk": 3}}"#), "graph.kk");
        assert_eq!(err_field(r#"{"output_dir": "o", "num_classes": 3, "typo": 1}"#), "typo");
        assert_eq!(err_field(r#"{"output_dir": "o", "num_classes": 3, "loss": {"tau1": "x"}}"#), "loss.tau1");
    }

    #[test]
    fn missing_field_is_named() {
        let e = RunConfig::parse(r#"{"num_classes": 3}"#).unwrap_err().to_string();
        assert!(e.contains("output_dir"), "{e}");
    }

    #[test]
    fn range_errors_name_their_field() {
        let cases = [
            (r#""graph": {"k": 0}"#, "graph.k"),
            (r#""propagation": {"alpha": 1.0}"#, "propagation.alpha"),
            (r#""selection": {"eta": 1.5}"#, "selection.eta"),
            (r#""training": {"batch_size": 0}"#, "training.batch_size"),
            (r#""training": {"ensemble_momentum": 1.0}"#, "training.ensemble_momentum"),
            (r#""detection": {"zeta": -2}"#, "detection.zeta"),
            (r#""model": {"hidden_dim": 0}"#, "model.hidden_dim"),
        ];
        for (extra, field) in cases {
            let text = format!(r#"{{"output_dir": "o", "num_classes": 3, {extra}}}"#);
            assert_eq!(err_field(&text), field, "{extra}");
        }
        assert_eq!(err_field(r#"{"output_dir": "o"}"#), "num_classes");
        assert_eq!(err_field(r#"{"output_dir": "o", "num_classes": 1}"#), "num_classes");
    }

    #[test]
    fn core_names_map_to_sections() {
        assert_eq!(field_path("k"), "graph.k");
        assert_eq!(field_path("eta"), "selection.eta");
        assert_eq!(field_path("model"), "model");
        assert_eq!(field_path("num_classes"), "num_classes");
    }
}
