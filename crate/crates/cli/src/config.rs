//! Experiment configuration: a TOML file layered over a built-in profile.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ccagnn::augment::AugmentConfig;
use ccagnn::data::SynthConfig;
use ccagnn::graphs::SelfWeightMode;
use ccagnn::loss::LossConfig;
use ccagnn::train::{Backbone, Modality, Neighborhood, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 2 folds of 5 sequences, 200 pretraining epochs.
    Desk,
    /// 15 folds of 50 sequences, 5000 pretraining epochs.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    Synthetic,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Mlp,
    GnnKnn,
    GnnPriorFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityKind {
    Unimodal,
    Multimodal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfWeightKind {
    /// Self-loop weight `k + 1`.
    Sequential,
    /// Self-loop weight 1.
    SequentialStar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Folds trained concurrently.
    pub workers: usize,
    pub dataset: DatasetSection,
    pub folds: FoldSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub augment: AugmentSection,
    pub metrics: MetricsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Dataset file, required when `source = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    pub latent_dim: usize,
    pub temporal_coefficient: f64,
    pub audio_noise: f64,
    pub visual_noise: f64,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSection {
    pub n_folds: usize,
    pub seq_per_fold: usize,
    /// Train, validation and test shares of each fold.
    pub ratios: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: BackboneKind,
    pub modality: ModalityKind,
    /// Neighbourhood size; ignored by the MLP.
    pub k: usize,
    /// Prior-frame self-loop weight; ignored by other backbones.
    pub self_weight: SelfWeightKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub recon_epochs: usize,
    pub recon_lr: f64,
    pub recon_weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub edge_drop_rate: f64,
    pub feature_mask_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Write activation curves and the AUC table.
    pub activation: bool,
    /// Significance level of the Wilcoxon decisions.
    pub wilcoxon_alpha: f64,
    /// Score the enhancement stage on synthetic tone-in-noise clips.
    pub enhancement: bool,
    pub enhancement_clips: usize,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let train = match profile {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        };
        let synth = SynthConfig::default();
        let (n_sequences, n_folds, seq_per_fold) = match profile {
            Profile::Desk => (10, 2, 5),
            Profile::Paper => (750, 15, 50),
        };
        let k = match train.backbone {
            Backbone::Gnn(n) => n.k(),
            Backbone::Mlp => 30,
        };
        ExperimentConfig {
            profile,
            seed: 0,
            output_dir: PathBuf::from("runs").join(profile.to_string()),
            workers: 1,
            dataset: DatasetSection {
                source: DatasetSource::Synthetic,
                path: None,
                n_sequences,
                frames_per_sequence: synth.frames_per_sequence,
                latent_dim: synth.latent_dim,
                temporal_coefficient: synth.temporal_coefficient,
                audio_noise: synth.audio_noise,
                visual_noise: synth.visual_noise,
                snr_db: synth.snr_db,
            },
            folds: FoldSection {
                n_folds,
                seq_per_fold,
                ratios: [0.6, 0.2, 0.2],
            },
            model: ModelSection {
                backbone: BackboneKind::GnnPriorFrame,
                modality: ModalityKind::Multimodal,
                k,
                self_weight: SelfWeightKind::Sequential,
            },
            train: TrainSection {
                hidden: train.hidden,
                pretrain_epochs: train.pretrain_epochs,
                pretrain_lr: train.pretrain_lr,
                recon_epochs: train.recon_epochs,
                recon_lr: train.recon_lr,
                recon_weight_decay: train.recon_weight_decay,
            },
            loss: LossSection {
                lambda: train.loss.lambda,
                alpha: train.loss.alpha,
                beta: train.loss.beta,
                gamma: train.loss.gamma,
            },
            augment: AugmentSection {
                edge_drop_rate: train.augment.edge_drop_rate,
                feature_mask_rate: train.augment.feature_mask_rate,
            },
            metrics: MetricsSection {
                activation: true,
                wilcoxon_alpha: 0.05,
                enhancement: false,
                enhancement_clips: 3,
            },
        }
    }

    /// Parses `text` over the chosen profile. `profile` overrides the
    /// file's own `profile` key; with neither, the desk profile is used.
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let from_file = match overlay.get("profile") {
            Some(v) => {
                Some(Profile::deserialize(v.clone()).map_err(|e| anyhow::anyhow!("invalid value for `profile`: {e}"))?)
            }
            None => None,
        };
        let chosen = profile.or(from_file).unwrap_or(Profile::Desk);
        let mut base = toml::Table::try_from(Self::profile(chosen)).context("serializing profile")?;
        merge(&mut base, overlay, "");
        base.insert("profile".into(), toml::Value::String(chosen.to_string()));
        let cfg: ExperimentConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("{}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text, profile).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers: must be at least 1");
        }
        match self.dataset.source {
            DatasetSource::File => match &self.dataset.path {
                None => bail!("dataset.path: required when dataset.source = \"file\""),
                Some(p) if !p.is_file() => bail!("dataset.path: {} does not exist", p.display()),
                Some(_) => {}
            },
            DatasetSource::Synthetic => {
                self.synth_config().validate().context("dataset")?;
            }
        }
        if self.model.backbone != BackboneKind::Mlp && self.model.k == 0 {
            bail!("model.k: must be at least 1");
        }
        if !(self.metrics.wilcoxon_alpha > 0.0 && self.metrics.wilcoxon_alpha < 1.0) {
            bail!("metrics.wilcoxon_alpha: must lie in (0, 1)");
        }
        if self.folds.n_folds == 0 || self.folds.seq_per_fold == 0 {
            bail!("folds: n_folds and seq_per_fold must be positive");
        }
        self.train_config().validate().context("train/loss/augment")?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.dataset;
        SynthConfig {
            n_sequences: d.n_sequences,
            frames_per_sequence: d.frames_per_sequence,
            latent_dim: d.latent_dim,
            temporal_coefficient: d.temporal_coefficient,
            audio_mixing: None,
            visual_mixing: None,
            audio_noise: d.audio_noise,
            visual_noise: d.visual_noise,
            snr_db: d.snr_db,
            seed: self.seed,
        }
    }

    pub fn backbone(&self) -> Backbone {
        let m = &self.model;
        match m.backbone {
            BackboneKind::Mlp => Backbone::Mlp,
            BackboneKind::GnnKnn => Backbone::Gnn(Neighborhood::Knn { k: m.k }),
            BackboneKind::GnnPriorFrame => Backbone::Gnn(Neighborhood::PriorFrame {
                k: m.k,
                self_weight: match m.self_weight {
                    SelfWeightKind::Sequential => SelfWeightMode::Sequential,
                    SelfWeightKind::SequentialStar => SelfWeightMode::SequentialStar,
                },
            }),
        }
    }

    pub fn modality(&self) -> Modality {
        match self.model.modality {
            ModalityKind::Unimodal => Modality::Unimodal,
            ModalityKind::Multimodal => Modality::Multimodal,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            hidden: t.hidden,
            pretrain_epochs: t.pretrain_epochs,
            pretrain_lr: t.pretrain_lr,
            recon_epochs: t.recon_epochs,
            recon_lr: t.recon_lr,
            recon_weight_decay: t.recon_weight_decay,
            loss: LossConfig {
                lambda: self.loss.lambda,
                alpha: self.loss.alpha,
                beta: self.loss.beta,
                gamma: self.loss.gamma,
            },
            augment: AugmentConfig {
                edge_drop_rate: self.augment.edge_drop_rate,
                feature_mask_rate: self.augment.feature_mask_rate,
                rng_seed: self.seed,
            },
            backbone: self.backbone(),
            seed: self.seed,
        }
    }

    /// Short label such as `gnn-prior-frame-k30-sequential/multimodal`.
    pub fn variant_label(&self) -> String {
        let m = &self.model;
        let backbone = match m.backbone {
            BackboneKind::Mlp => "mlp".to_string(),
            BackboneKind::GnnKnn => format!("gnn-knn-k{}", m.k),
            BackboneKind::GnnPriorFrame => format!(
                "gnn-prior-frame-k{}-{}",
                m.k,
                match m.self_weight {
                    SelfWeightKind::Sequential => "sequential",
                    SelfWeightKind::SequentialStar => "sequential-star",
                }
            ),
        };
        let modality = match m.modality {
            ModalityKind::Unimodal => "unimodal",
            ModalityKind::Multimodal => "multimodal",
        };
        format!("{backbone}/{modality}")
    }

    /// Resolved settings as sorted `key=value` lines. The output location
    /// and worker count are left out because they never change results.
    pub fn echo_lines(&self) -> Result<Vec<String>> {
        let table = toml::Table::try_from(self)?;
        let mut lines = Vec::new();
        flatten("config", &toml::Value::Table(table), &mut lines);
        lines.retain(|l| !l.starts_with("config.output_dir=") && !l.starts_with("config.workers="));
        Ok(lines)
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table, prefix: &str) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &format!("{prefix}{key}.")),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        toml::Value::Array(a) => {
            let items: Vec<String> = a.iter().map(scalar).collect();
            out.push(format!("{prefix}=[{}]", items.join(",")));
        }
        v => out.push(format!("{prefix}={}", scalar(v))),
    }
}

fn scalar(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => format!("{f}"),
        other => other.to_string(),
    }
}
