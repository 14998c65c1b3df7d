//! Self-supervised CCA pretraining followed by a frozen-feature
//! reconstruction head.

use rand::Rng;

use crate::augment::{apply_column_mask, augment, column_mask, AugmentConfig};
use crate::data::{AVDataset, Fold};
use crate::error::{Error, Result};
use crate::graphs::{build_knn_graph, normalize_propagation, Graph, PropagationMatrix, SelfWeightMode};
use crate::loss::{cca_loss_on_tape, multimodal_loss_on_tape, LossConfig};
use crate::metrics::mse;
use crate::model::{encode, encode_on_tape, recon_forward, ActivationStats, EncoderParams, EncoderVars, ReconParams};
use crate::numeric::{adam_step, AdamState, GradientTape, Matrix};
use crate::rng::{self, ids};

/// How node neighbourhoods are formed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Neighborhood {
    /// Symmetric k-nearest neighbours in feature space.
    Knn { k: usize },
    /// Each frame receives its `k` predecessors within its sequence.
    PriorFrame { k: usize, self_weight: SelfWeightMode },
}

impl Neighborhood {
    pub fn k(&self) -> usize {
        match *self {
            Neighborhood::Knn { k } | Neighborhood::PriorFrame { k, .. } => k,
        }
    }
}

/// Encoder family: a plain MLP or a graph network over a neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backbone {
    Mlp,
    Gnn(Neighborhood),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    /// Noisy audio only.
    Unimodal,
    /// Noisy audio and visual features with two encoders.
    Multimodal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub recon_epochs: usize,
    pub recon_lr: f64,
    pub recon_weight_decay: f64,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub backbone: Backbone,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 512,
            pretrain_epochs: 5000,
            pretrain_lr: 0.001,
            recon_epochs: 600,
            recon_lr: 0.005,
            recon_weight_decay: 0.0004,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            backbone: Backbone::Gnn(Neighborhood::PriorFrame {
                k: 30,
                self_weight: SelfWeightMode::Sequential,
            }),
            seed: 0,
        }
    }
}

/// Pretraining epochs of the desk-scale profile.
pub const DESK_PRETRAIN_EPOCHS: usize = 200;

impl TrainConfig {
    /// Full-size settings.
    pub fn paper() -> Self {
        Self::default()
    }

    /// Same hyperparameters with a short pretraining schedule.
    pub fn desk() -> Self {
        TrainConfig {
            pretrain_epochs: DESK_PRETRAIN_EPOCHS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Param("hidden width must be positive".into()));
        }
        for (name, v) in [("pretrain_lr", self.pretrain_lr), ("recon_lr", self.recon_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.recon_weight_decay >= 0.0 && self.recon_weight_decay.is_finite()) {
            return Err(Error::Param(format!(
                "recon_weight_decay must be non-negative, got {}",
                self.recon_weight_decay
            )));
        }
        if let Backbone::Gnn(n) = self.backbone {
            if n.k() == 0 {
                return Err(Error::Param("neighbourhood size k must be at least 1".into()));
            }
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

/// Un-augmented graph for `features`, or `None` for the MLP.
pub fn build_graph(features: &Matrix, sequence_bounds: &[(usize, usize)], backbone: Backbone) -> Result<Option<Graph>> {
    match backbone {
        Backbone::Mlp => Ok(None),
        Backbone::Gnn(Neighborhood::Knn { k }) => {
            let mut g = build_knn_graph(features, k)?;
            g.sequence_bounds = sequence_bounds.to_vec();
            Ok(Some(g))
        }
        Backbone::Gnn(Neighborhood::PriorFrame { k, self_weight }) => {
            Graph::prior_frame(features.clone(), sequence_bounds, k, self_weight).map(Some)
        }
    }
}

/// Source of augmented views for one channel.
struct ViewSource<'a> {
    features: &'a Matrix,
    graph: Option<Graph>,
}

impl<'a> ViewSource<'a> {
    fn new(features: &'a Matrix, bounds: &[(usize, usize)], backbone: Backbone) -> Result<Self> {
        Ok(ViewSource {
            features,
            graph: build_graph(features, bounds, backbone)?,
        })
    }

    /// The MLP has no edges to drop, so only its features are masked.
    fn draw<R: Rng + ?Sized>(&self, cfg: &AugmentConfig, rng: &mut R) -> Result<(Option<PropagationMatrix>, Matrix)> {
        match &self.graph {
            Some(g) => {
                let view = augment(g, cfg, rng)?;
                Ok((Some(normalize_propagation(&view)?), view.features))
            }
            None => {
                let mut x = self.features.clone();
                let mask = column_mask(x.cols(), cfg.feature_mask_rate, rng);
                apply_column_mask(&mut x, &mask);
                Ok((None, x))
            }
        }
    }

    fn clean_propagation(&self) -> Result<Option<PropagationMatrix>> {
        self.graph.as_ref().map(normalize_propagation).transpose()
    }
}

fn check_features(features: &Matrix, bounds: &[(usize, usize)], what: &str) -> Result<()> {
    if features.rows() < 2 {
        return Err(Error::Param(format!(
            "{what} needs at least 2 frames, got {}",
            features.rows()
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite(format!("{what} features")));
    }
    let covered: usize = bounds.iter().map(|b| b.1).sum();
    if covered != features.rows() {
        return Err(Error::Contract(format!(
            "sequence bounds cover {covered} of {} {what} frames",
            features.rows()
        )));
    }
    Ok(())
}

fn diverged(epoch: usize, what: &str, value: f64) -> Error {
    Error::Diverged {
        epoch,
        detail: format!("{what} is {value}"),
    }
}

/// Output of [`pretrain_unimodal`].
#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalPretrain {
    pub params: EncoderParams,
    /// First-layer firing over every training forward.
    pub stats: ActivationStats,
    /// Loss before each epoch's update.
    pub loss_curve: Vec<f64>,
}

/// CCA pretraining of one encoder on noisy audio.
pub fn pretrain_unimodal(
    noisy_audio: &Matrix,
    sequence_bounds: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<UnimodalPretrain> {
    config.validate()?;
    check_features(noisy_audio, sequence_bounds, "audio")?;
    let source = ViewSource::new(noisy_audio, sequence_bounds, config.backbone)?;
    let mut params = EncoderParams::init(
        noisy_audio.cols(),
        config.hidden,
        &mut rng::stream(config.seed, ids::AUDIO_INIT),
    )
    .into_vec();
    let mut adam = AdamState::new(&params);
    let mut aug_rng = rng::stream(config.seed, ids::AUDIO_AUGMENT);
    let mut stats = ActivationStats::new(config.hidden);
    let mut loss_curve = Vec::with_capacity(config.pretrain_epochs);

    for epoch in 1..=config.pretrain_epochs {
        let mut tape = GradientTape::new();
        let vars = EncoderVars::register(&mut tape, &EncoderParams::from_vec(params.clone())?);
        let mut outs = [None, None];
        for out in &mut outs {
            let (prop, x) = source.draw(&config.augment, &mut aug_rng)?;
            let (h1, z) = encode_on_tape(&mut tape, &vars, prop.as_ref(), x)?;
            stats.record(tape.value(h1))?;
            *out = Some(tape.standardize(z));
        }
        let [Some(za), Some(zb)] = outs else { unreachable!() };
        let loss = cca_loss_on_tape(&mut tape, za, zb, config.loss.lambda)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(diverged(epoch, "CCA loss", value));
        }
        loss_curve.push(value);
        let grads = tape.gradients(loss).map_err(|e| Error::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        adam_step(&mut params, &grads, &mut adam, config.pretrain_lr, 0.0)?;
    }

    Ok(UnimodalPretrain {
        params: EncoderParams::from_vec(params)?,
        stats,
        loss_curve,
    })
}

/// Output of [`pretrain_multimodal`].
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalPretrain {
    pub audio: EncoderParams,
    pub visual: EncoderParams,
    pub audio_stats: ActivationStats,
    pub visual_stats: ActivationStats,
    /// Total weighted loss before each epoch's update.
    pub loss_curve: Vec<f64>,
    /// Unweighted `L(Z1, Z3)` before each epoch's update.
    pub cross_curve: Vec<f64>,
}

/// Joint CCA pretraining of an audio and a visual encoder over four
/// independently augmented views.
pub fn pretrain_multimodal(
    noisy_audio: &Matrix,
    visual: &Matrix,
    sequence_bounds: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<MultimodalPretrain> {
    config.validate()?;
    check_features(noisy_audio, sequence_bounds, "audio")?;
    check_features(visual, sequence_bounds, "visual")?;
    let audio_src = ViewSource::new(noisy_audio, sequence_bounds, config.backbone)?;
    let visual_src = ViewSource::new(visual, sequence_bounds, config.backbone)?;

    let audio0 = EncoderParams::init(
        noisy_audio.cols(),
        config.hidden,
        &mut rng::stream(config.seed, ids::AUDIO_INIT),
    );
    let visual0 = EncoderParams::init(
        visual.cols(),
        config.hidden,
        &mut rng::stream(config.seed, ids::VISUAL_INIT),
    );
    let mut params = audio0.into_vec();
    params.extend(visual0.into_vec());
    let mut adam = AdamState::new(&params);
    let mut audio_rng = rng::stream(config.seed, ids::AUDIO_AUGMENT);
    let mut visual_rng = rng::stream(config.seed, ids::VISUAL_AUGMENT);
    let mut audio_stats = ActivationStats::new(config.hidden);
    let mut visual_stats = ActivationStats::new(config.hidden);
    let mut loss_curve = Vec::with_capacity(config.pretrain_epochs);
    let mut cross_curve = Vec::with_capacity(config.pretrain_epochs);

    for epoch in 1..=config.pretrain_epochs {
        let mut tape = GradientTape::new();
        let audio_vars = EncoderVars::register(&mut tape, &EncoderParams::from_vec(params[..4].to_vec())?);
        let visual_vars = EncoderVars::register(&mut tape, &EncoderParams::from_vec(params[4..].to_vec())?);
        let mut views = Vec::with_capacity(4);
        for _ in 0..2 {
            let (prop, x) = audio_src.draw(&config.augment, &mut audio_rng)?;
            let (h1, z) = encode_on_tape(&mut tape, &audio_vars, prop.as_ref(), x)?;
            audio_stats.record(tape.value(h1))?;
            views.push(tape.standardize(z));
        }
        for _ in 0..2 {
            let (prop, x) = visual_src.draw(&config.augment, &mut visual_rng)?;
            let (h1, z) = encode_on_tape(&mut tape, &visual_vars, prop.as_ref(), x)?;
            visual_stats.record(tape.value(h1))?;
            views.push(tape.standardize(z));
        }
        let terms = multimodal_loss_on_tape(&mut tape, [views[0], views[1], views[2], views[3]], &config.loss)?;
        let value = tape.scalar(terms.total);
        if !value.is_finite() {
            return Err(diverged(epoch, "multimodal loss", value));
        }
        loss_curve.push(value);
        cross_curve.push(tape.scalar(terms.cross[0]));
        let grads = tape.gradients(terms.total).map_err(|e| Error::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        adam_step(&mut params, &grads, &mut adam, config.pretrain_lr, 0.0)?;
    }

    let visual_params = params.split_off(4);
    Ok(MultimodalPretrain {
        audio: EncoderParams::from_vec(params)?,
        visual: EncoderParams::from_vec(visual_params)?,
        audio_stats,
        visual_stats,
        loss_curve,
        cross_curve,
    })
}

/// Output of [`train_reconstruction`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReconTraining {
    pub params: ReconParams,
    /// Training MSE before each epoch's update.
    pub train_curve: Vec<f64>,
    /// Validation MSE at the same parameter states; empty without a
    /// validation set.
    pub val_curve: Vec<f64>,
    /// Training MSE of the returned parameters.
    pub final_train_mse: f64,
}

/// Fits the dense head `Z W + b` to `clean` by Adam with L2 weight decay.
/// The embeddings are plain inputs: no encoder parameter is reachable here.
pub fn train_reconstruction(
    embeddings: &Matrix,
    clean: &Matrix,
    validation: Option<(&Matrix, &Matrix)>,
    config: &TrainConfig,
) -> Result<ReconTraining> {
    config.validate()?;
    if embeddings.rows() != clean.rows() {
        return Err(Error::shape(
            "train_reconstruction",
            format!("{} embedding rows vs {} target rows", embeddings.rows(), clean.rows()),
        ));
    }
    if embeddings.rows() == 0 {
        return Err(Error::Param("reconstruction needs at least one training row".into()));
    }
    let mut head = ReconParams::init(embeddings.cols(), &mut rng::stream(config.seed, ids::RECON_INIT));
    if clean.cols() != head.w.cols() {
        return Err(Error::shape(
            "train_reconstruction",
            format!("{} target columns, head emits {}", clean.cols(), head.w.cols()),
        ));
    }
    if let Some((vx, vy)) = validation {
        if vx.cols() != embeddings.cols() || vy.cols() != clean.cols() || vx.rows() != vy.rows() {
            return Err(Error::shape(
                "train_reconstruction",
                format!("validation shapes {:?} / {:?}", vx.shape(), vy.shape()),
            ));
        }
    }
    let mut params = vec![head.w, head.b];
    let mut adam = AdamState::new(&params);
    let mut train_curve = Vec::with_capacity(config.recon_epochs);
    let mut val_curve = Vec::new();

    for epoch in 1..=config.recon_epochs {
        let mut tape = GradientTape::new();
        let w = tape.parameter(params[0].clone());
        let b = tape.parameter(params[1].clone());
        let x = tape.constant(embeddings.clone());
        let xw = tape.matmul(x, w)?;
        let pred = tape.add_bias(xw, b)?;
        let loss = tape.mean_sq_error(pred, clean.clone())?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(diverged(epoch, "reconstruction MSE", value));
        }
        train_curve.push(value);
        if let Some((vx, vy)) = validation {
            let current = ReconParams {
                w: params[0].clone(),
                b: params[1].clone(),
            };
            val_curve.push(mse(vy, &recon_forward(vx, &current)?)?);
        }
        let grads = tape.gradients(loss).map_err(|e| Error::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        adam_step(
            &mut params,
            &grads,
            &mut adam,
            config.recon_lr,
            config.recon_weight_decay,
        )?;
    }

    let b = params.pop().expect("two head tensors");
    let w = params.pop().expect("two head tensors");
    head = ReconParams { w, b };
    let final_train_mse = mse(clean, &recon_forward(embeddings, &head)?)?;
    Ok(ReconTraining {
        params: head,
        train_curve,
        val_curve,
        final_train_mse,
    })
}

/// Trained encoders of one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedEncoders {
    pub audio: EncoderParams,
    pub visual: Option<EncoderParams>,
}

impl TrainedEncoders {
    /// Embeddings of the un-augmented graph; multimodal runs concatenate
    /// audio and visual embeddings column-wise.
    pub fn embed(
        &self,
        noisy_audio: &Matrix,
        visual: Option<&Matrix>,
        sequence_bounds: &[(usize, usize)],
        backbone: Backbone,
    ) -> Result<Matrix> {
        let audio_src = ViewSource::new(noisy_audio, sequence_bounds, backbone)?;
        let audio = encode(audio_src.clean_propagation()?.as_ref(), noisy_audio, &self.audio)?;
        match (&self.visual, visual) {
            (None, _) => Ok(audio),
            (Some(params), Some(v)) => {
                let src = ViewSource::new(v, sequence_bounds, backbone)?;
                audio.hstack(&encode(src.clean_propagation()?.as_ref(), v, params)?)
            }
            (Some(_), None) => Err(Error::Param("multimodal encoders need visual features".into())),
        }
    }
}

/// Everything one fold produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: TrainConfig,
    pub modality: Modality,
    pub pretrain_loss: Vec<f64>,
    pub recon_train: Vec<f64>,
    pub recon_val: Vec<f64>,
    pub test_mse: f64,
    /// MSE of passing the noisy features straight through, on the test rows.
    pub noisy_test_mse: f64,
    pub audio_stats: ActivationStats,
    pub visual_stats: Option<ActivationStats>,
    pub encoders: TrainedEncoders,
    pub head: ReconParams,
}

/// Runs the two-stage protocol on one fold.
///
/// Pretraining sees the noisy audio (and visual features) of every
/// sequence in the fold; clean audio is used only to fit the head on the
/// training rows, to trace the validation curve and to score the test rows.
pub fn run_fold(dataset: &AVDataset, fold: &Fold, config: &TrainConfig, modality: Modality) -> Result<RunReport> {
    config.validate()?;
    if fold.train.is_empty() || fold.test.is_empty() {
        return Err(Error::Param("a fold needs training and test sequences".into()));
    }
    let sub = dataset.select_sequences(&fold.all());
    let count = |seqs: &[usize]| seqs.iter().map(|&s| dataset.sequence_bounds[s].1).sum::<usize>();
    let n_train = count(&fold.train);
    let n_val = count(&fold.validation);
    let train_rows: Vec<usize> = (0..n_train).collect();
    let val_rows: Vec<usize> = (n_train..n_train + n_val).collect();
    let test_rows: Vec<usize> = (n_train + n_val..sub.n_frames()).collect();

    let (encoders, pretrain_loss, audio_stats, visual_stats) = match modality {
        Modality::Unimodal => {
            let out = pretrain_unimodal(&sub.noisy_audio, &sub.sequence_bounds, config)?;
            (
                TrainedEncoders {
                    audio: out.params,
                    visual: None,
                },
                out.loss_curve,
                out.stats,
                None,
            )
        }
        Modality::Multimodal => {
            let out = pretrain_multimodal(&sub.noisy_audio, &sub.visual, &sub.sequence_bounds, config)?;
            (
                TrainedEncoders {
                    audio: out.audio,
                    visual: Some(out.visual),
                },
                out.loss_curve,
                out.audio_stats,
                Some(out.visual_stats),
            )
        }
    };
    let visual = (modality == Modality::Multimodal).then_some(&sub.visual);
    let emb = encoders.embed(&sub.noisy_audio, visual, &sub.sequence_bounds, config.backbone)?;

    let val_x = emb.select_rows(&val_rows);
    let val_y = sub.clean_audio.select_rows(&val_rows);
    let validation = (!val_rows.is_empty()).then_some((&val_x, &val_y));
    let recon = train_reconstruction(
        &emb.select_rows(&train_rows),
        &sub.clean_audio.select_rows(&train_rows),
        validation,
        config,
    )?;

    let test_clean = sub.clean_audio.select_rows(&test_rows);
    let test_mse = mse(
        &test_clean,
        &recon_forward(&emb.select_rows(&test_rows), &recon.params)?,
    )?;
    let noisy_test_mse = mse(&test_clean, &sub.noisy_audio.select_rows(&test_rows))?;
    Ok(RunReport {
        config: config.clone(),
        modality,
        pretrain_loss,
        recon_train: recon.train_curve,
        recon_val: recon.val_curve,
        test_mse,
        noisy_test_mse,
        audio_stats,
        visual_stats,
        encoders,
        head: recon.params,
    })
}
