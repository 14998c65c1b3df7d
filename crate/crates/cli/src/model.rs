//! Saving a trained fold as a checkpoint and running it on new features.

use anyhow::{anyhow, bail, Context, Result};

use ccagnn::graphs::SelfWeightMode;
use ccagnn::model::{recon_forward, Checkpoint, EncoderParams, ReconParams};
use ccagnn::numeric::Matrix;
use ccagnn::train::{Backbone, Modality, Neighborhood, RunReport, TrainedEncoders};

const ENCODER_TENSORS: [&str; 4] = ["w1", "b1", "w2", "b2"];

/// Encoders plus reconstruction head, ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub backbone: Backbone,
    pub modality: Modality,
    pub encoders: TrainedEncoders,
    pub head: ReconParams,
}

impl TrainedModel {
    pub fn from_report(report: &RunReport) -> Self {
        TrainedModel {
            backbone: report.config.backbone,
            modality: report.modality,
            encoders: report.encoders.clone(),
            head: report.head.clone(),
        }
    }

    /// Estimated clean log-filterbank frames for one sequence.
    pub fn estimate_clean(&self, noisy_audio: &Matrix, visual: Option<&Matrix>) -> Result<Matrix> {
        let bounds = [(0, noisy_audio.rows())];
        let visual = match self.modality {
            Modality::Unimodal => None,
            Modality::Multimodal => Some(visual.ok_or_else(|| anyhow!("multimodal model needs visual features"))?),
        };
        let emb = self.encoders.embed(noisy_audio, visual, &bounds, self.backbone)?;
        Ok(recon_forward(&emb, &self.head)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let (backbone, k, self_weight) = match self.backbone {
            Backbone::Mlp => ("mlp", 0, None),
            Backbone::Gnn(Neighborhood::Knn { k }) => ("gnn-knn", k, None),
            Backbone::Gnn(Neighborhood::PriorFrame { k, self_weight }) => ("gnn-prior-frame", k, Some(self_weight)),
        };
        c.push_meta("backbone", backbone);
        c.push_meta("k", k.to_string());
        if let Some(mode) = self_weight {
            c.push_meta(
                "self_weight",
                match mode {
                    SelfWeightMode::Sequential => "sequential",
                    SelfWeightMode::SequentialStar => "sequential-star",
                },
            );
        }
        c.push_meta(
            "modality",
            match self.modality {
                Modality::Unimodal => "unimodal",
                Modality::Multimodal => "multimodal",
            },
        );
        push_encoder(&mut c, "audio", &self.encoders.audio);
        if let Some(v) = &self.encoders.visual {
            push_encoder(&mut c, "visual", v);
        }
        c.push_tensor("head.w", self.head.w.clone());
        c.push_tensor("head.b", self.head.b.clone());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta = |key: &str| c.meta(key).ok_or_else(|| anyhow!("checkpoint lacks `{key}`"));
        let k: usize = meta("k")?.parse().context("checkpoint `k`")?;
        let backbone = match meta("backbone")? {
            "mlp" => Backbone::Mlp,
            "gnn-knn" => Backbone::Gnn(Neighborhood::Knn { k }),
            "gnn-prior-frame" => Backbone::Gnn(Neighborhood::PriorFrame {
                k,
                self_weight: match meta("self_weight")? {
                    "sequential" => SelfWeightMode::Sequential,
                    "sequential-star" => SelfWeightMode::SequentialStar,
                    other => bail!("unknown self_weight {other:?}"),
                },
            }),
            other => bail!("unknown backbone {other:?}"),
        };
        let modality = match meta("modality")? {
            "unimodal" => Modality::Unimodal,
            "multimodal" => Modality::Multimodal,
            other => bail!("unknown modality {other:?}"),
        };
        let audio = read_encoder(c, "audio")?;
        let visual = match modality {
            Modality::Unimodal => None,
            Modality::Multimodal => Some(read_encoder(c, "visual")?),
        };
        let tensor = |name: &str| {
            c.tensor(name)
                .cloned()
                .ok_or_else(|| anyhow!("checkpoint lacks tensor `{name}`"))
        };
        let head = ReconParams {
            w: tensor("head.w")?,
            b: tensor("head.b")?,
        };
        Ok(TrainedModel {
            backbone,
            modality,
            encoders: TrainedEncoders { audio, visual },
            head,
        })
    }
}

fn push_encoder(c: &mut Checkpoint, prefix: &str, p: &EncoderParams) {
    for (name, m) in ENCODER_TENSORS.iter().zip(p.to_vec()) {
        c.push_tensor(format!("{prefix}.{name}"), m);
    }
}

fn read_encoder(c: &Checkpoint, prefix: &str) -> Result<EncoderParams> {
    let tensors = ENCODER_TENSORS
        .iter()
        .map(|n| {
            c.tensor(&format!("{prefix}.{n}"))
                .cloned()
                .ok_or_else(|| anyhow!("checkpoint lacks tensor `{prefix}.{n}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncoderParams::from_vec(tensors)?)
}
