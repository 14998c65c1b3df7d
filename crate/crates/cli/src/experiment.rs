//! End-to-end experiment: data, folds, training, tables and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use ccagnn::data::{extract_logfb, load_dataset, split_folds, synthesize_av_dataset, AVDataset, Fold, LogFBConfig};
use ccagnn::enhance::enhance_waveform;
use ccagnn::metrics::{activation_rate_curve, segmental_snr, wilcoxon_signed_rank};
use ccagnn::model::{save_checkpoint, ActivationStats};
use ccagnn::rng::{self, ids};
use ccagnn::train::{run_fold, RunReport};
use ccagnn::Error;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::model::TrainedModel;

pub const SUMMARY_FILE: &str = "summary.txt";
pub const FAILURE_MARKER: &str = "FAILED";

/// One fold's assignment, training seed and outcome.
#[derive(Debug)]
pub struct FoldRun {
    pub index: usize,
    pub fold: Fold,
    pub seed: u64,
    pub result: ccagnn::Result<RunReport>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub folds: Vec<FoldRun>,
    pub summary: String,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> bool {
        self.folds.iter().any(|f| f.result.is_err())
    }

    pub fn reports(&self) -> impl Iterator<Item = &RunReport> {
        self.folds.iter().filter_map(|f| f.result.as_ref().ok())
    }
}

/// Enhancement scores of one synthetic clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipScore {
    pub input_segsnr_db: f64,
    pub output_segsnr_db: f64,
}

impl ClipScore {
    pub fn improvement_db(&self) -> f64 {
        self.output_segsnr_db - self.input_segsnr_db
    }
}

pub fn load_experiment_dataset(cfg: &ExperimentConfig) -> Result<AVDataset> {
    match cfg.dataset.source {
        DatasetSource::Synthetic => Ok(synthesize_av_dataset(
            &cfg.synth_config(),
            &mut rng::stream(cfg.seed, ids::SYNTH),
        )?),
        DatasetSource::File => {
            let path = cfg.dataset.path.as_ref().context("dataset.path is not set")?;
            load_dataset(path).with_context(|| format!("loading {}", path.display()))
        }
    }
}

/// Trains every fold without touching the filesystem.
pub fn train_folds(cfg: &ExperimentConfig, dataset: &AVDataset) -> Result<Vec<FoldRun>> {
    let [tr, va, te] = cfg.folds.ratios;
    let folds = split_folds(
        dataset.n_sequences(),
        cfg.folds.n_folds,
        cfg.folds.seq_per_fold,
        (tr, va, te),
        &mut rng::stream(cfg.seed, ids::FOLDS),
    )?;
    let mut seed_rng = rng::stream(cfg.seed, ids::FOLD_SEEDS);
    let seeds: Vec<u64> = folds.iter().map(|_| seed_rng.random()).collect();
    let modality = cfg.modality();
    let base = cfg.train_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| {
        folds
            .into_par_iter()
            .zip(seeds)
            .enumerate()
            .map(|(index, (fold, seed))| {
                let mut tc = base.clone();
                tc.seed = seed;
                tc.augment.rng_seed = seed;
                let result = run_fold(dataset, &fold, &tc, modality);
                FoldRun {
                    index,
                    fold,
                    seed,
                    result,
                }
            })
            .collect()
    }))
}

/// Runs the configured experiment and writes every artifact under
/// `cfg.output_dir`. A diverged fold leaves the other folds' artifacts in
/// place and adds a failure marker; the caller decides the exit status.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dataset = load_experiment_dataset(cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let marker = out.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let folds = train_folds(cfg, &dataset)?;
    for run in &folds {
        write_fold_artifacts(cfg, run, out)?;
    }
    let clips = if cfg.metrics.enhancement {
        enhancement_scores(cfg.seed, cfg.metrics.enhancement_clips)?
    } else {
        Vec::new()
    };
    let tables = Tables::build(cfg, &folds, &clips)?;
    fs::write(out.join(SUMMARY_FILE), &tables.summary)?;
    fs::write(out.join("mse_table.tsv"), &tables.mse)?;
    fs::write(out.join("wilcoxon.tsv"), &tables.wilcoxon)?;
    if cfg.metrics.activation {
        fs::write(out.join("auc_table.tsv"), &tables.auc)?;
    }
    if cfg.metrics.enhancement {
        fs::write(out.join("enhancement.tsv"), &tables.enhancement)?;
    }
    let failures: Vec<String> = folds
        .iter()
        .filter_map(|f| f.result.as_ref().err().map(|e| format!("fold {}: {e}\n", f.index)))
        .collect();
    if !failures.is_empty() {
        fs::write(&marker, failures.concat())?;
    }
    Ok(ExperimentOutcome {
        folds,
        summary: tables.summary,
    })
}

fn write_fold_artifacts(cfg: &ExperimentConfig, run: &FoldRun, out: &Path) -> Result<()> {
    let dir = out.join(format!("fold_{:02}", run.index));
    fs::create_dir_all(&dir)?;
    let ids = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut text = String::new();
    writeln!(text, "fold={}", run.index)?;
    writeln!(text, "seed={}", run.seed)?;
    writeln!(text, "train_sequences={}", ids(&run.fold.train))?;
    writeln!(text, "validation_sequences={}", ids(&run.fold.validation))?;
    writeln!(text, "test_sequences={}", ids(&run.fold.test))?;
    match &run.result {
        Err(e) => {
            writeln!(text, "status=failed")?;
            writeln!(text, "error={e}")?;
        }
        Ok(r) => {
            writeln!(text, "status=ok")?;
            writeln!(text, "test_mse={}", r.test_mse)?;
            writeln!(text, "noisy_test_mse={}", r.noisy_test_mse)?;
            writeln!(
                text,
                "final_pretrain_loss={}",
                r.pretrain_loss.last().copied().unwrap_or(f64::NAN)
            )?;
            writeln!(
                text,
                "final_train_mse={}",
                r.recon_train.last().copied().unwrap_or(f64::NAN)
            )?;
            write_stats(&mut text, "audio", &r.audio_stats)?;
            if let Some(v) = &r.visual_stats {
                write_stats(&mut text, "visual", v)?;
            }

            let mut curves = String::from("epoch\tpretrain_loss\trecon_train\trecon_val\n");
            let n = r.pretrain_loss.len().max(r.recon_train.len());
            let cell = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
            for i in 0..n {
                writeln!(
                    curves,
                    "{i}\t{}\t{}\t{}",
                    cell(&r.pretrain_loss, i),
                    cell(&r.recon_train, i),
                    cell(&r.recon_val, i)
                )?;
            }
            fs::write(dir.join("curves.tsv"), curves)?;
            if cfg.metrics.activation {
                write_activation_curve(&dir.join("activation_audio.tsv"), &r.audio_stats)?;
                if let Some(v) = &r.visual_stats {
                    write_activation_curve(&dir.join("activation_visual.tsv"), v)?;
                }
            }
            save_checkpoint(&TrainedModel::from_report(r).to_checkpoint(), dir.join("model.ckpt"))?;
        }
    }
    fs::write(dir.join("report.txt"), text)?;
    Ok(())
}

fn write_stats(text: &mut String, name: &str, s: &ActivationStats) -> std::fmt::Result {
    writeln!(text, "{name}_forwards={}", s.total())?;
    let counts: Vec<String> = s.fire_counts().iter().map(u64::to_string).collect();
    writeln!(text, "{name}_fire_counts={}", counts.join(","))
}

fn write_activation_curve(path: &Path, stats: &ActivationStats) -> Result<()> {
    let mut text = String::from("rank\trate\n");
    if stats.total() > 0 {
        for (i, r) in activation_rate_curve(stats)?.rates.iter().enumerate() {
            writeln!(text, "{i}\t{r}")?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Oracle-feature enhancement on one-second 1 kHz tones in white noise at
/// 0 dB. Each clip draws fresh noise.
pub fn enhancement_scores(seed: u64, clips: usize) -> Result<Vec<ClipScore>> {
    let cfg = LogFBConfig::default();
    let n = cfg.sample_rate as usize;
    let mut r = rng::stream(seed, ids::CLIPS);
    (0..clips)
        .map(|_| {
            let clean: Vec<f64> = (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / cfg.sample_rate).sin())
                .collect();
            // Unit-amplitude sine has power 1/2.
            let sigma = 0.5f64.sqrt();
            let noisy: Vec<f64> = clean
                .iter()
                .map(|c| c + sigma * r.sample::<f64, _>(StandardNormal))
                .collect();
            let enhanced = enhance_waveform(&noisy, &extract_logfb(&clean, &cfg)?, &cfg)?;
            Ok(ClipScore {
                input_segsnr_db: segmental_snr(&clean, &noisy, cfg.frame_length)?,
                output_segsnr_db: segmental_snr(&clean, &enhanced, cfg.frame_length)?,
            })
        })
        .collect()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Text of one Wilcoxon decision between two paired samples, where lower
/// values are better.
pub fn wilcoxon_decision(a: &[f64], b: &[f64], alpha: f64, name_a: &str, name_b: &str) -> String {
    match wilcoxon_signed_rank(a, b, alpha) {
        Ok(w) => {
            let verdict = if !w.reject {
                "no significant difference".to_string()
            } else if w.w_minus > w.w_plus {
                format!("{name_a} wins")
            } else {
                format!("{name_b} wins")
            };
            format!(
                "n={} w_plus={} w_minus={} p={} exact={} decision={verdict}",
                w.n, w.w_plus, w.w_minus, w.p_value, w.exact
            )
        }
        Err(Error::Degenerate(_)) => "decision=no difference".to_string(),
        Err(e) => format!("decision=skipped ({e})"),
    }
}

struct Tables {
    summary: String,
    mse: String,
    auc: String,
    wilcoxon: String,
    enhancement: String,
}

impl Tables {
    fn build(cfg: &ExperimentConfig, folds: &[FoldRun], clips: &[ClipScore]) -> Result<Self> {
        let ok: Vec<(usize, &RunReport)> = folds
            .iter()
            .filter_map(|f| f.result.as_ref().ok().map(|r| (f.index, r)))
            .collect();
        let label = cfg.variant_label();
        let mut s = String::from("# ccagnn experiment summary\n");
        writeln!(s, "variant={label}")?;
        for line in cfg.echo_lines()? {
            writeln!(s, "{line}")?;
        }
        let failed = ok.len() < folds.len();
        writeln!(s, "status={}", if failed { "failed" } else { "ok" })?;
        writeln!(s, "folds.total={}", folds.len())?;
        writeln!(s, "folds.completed={}", ok.len())?;
        for f in folds {
            if let Err(e) = &f.result {
                writeln!(s, "fold.{}.status=failed: {e}", f.index)?;
            }
        }

        let model_mse: Vec<f64> = ok.iter().map(|(_, r)| r.test_mse).collect();
        let noisy_mse: Vec<f64> = ok.iter().map(|(_, r)| r.noisy_test_mse).collect();
        let mut audio_auc = Vec::new();
        let mut visual_auc = Vec::new();
        for (i, r) in &ok {
            writeln!(s, "fold.{i}.test_mse={}", r.test_mse)?;
            writeln!(s, "fold.{i}.noisy_test_mse={}", r.noisy_test_mse)?;
            if cfg.metrics.activation {
                let a = activation_rate_curve(&r.audio_stats)
                    .map(|c| c.auc())
                    .unwrap_or(f64::NAN);
                writeln!(s, "fold.{i}.audio_auc={a}")?;
                audio_auc.push(a);
                if let Some(v) = &r.visual_stats {
                    let a = activation_rate_curve(v).map(|c| c.auc()).unwrap_or(f64::NAN);
                    writeln!(s, "fold.{i}.visual_auc={a}")?;
                    visual_auc.push(a);
                }
            }
        }

        let header: String = ok.iter().map(|(i, _)| format!("\tfold_{i}")).collect();
        let row = |name: &str, v: &[f64]| {
            let (m, sd) = mean_std(v);
            let cells: String = v.iter().map(|x| format!("\t{x}")).collect();
            format!("{name}{cells}\t{m}\t{sd}\t{m:.4} ± {sd:.4}\n")
        };
        let mut mse = format!("variant{header}\tmean\tstd\tmean±std\n");
        mse.push_str(&row(&label, &model_mse));
        mse.push_str(&row("noisy-input", &noisy_mse));
        let (m, sd) = mean_std(&model_mse);
        writeln!(s, "mse.mean={m}")?;
        writeln!(s, "mse.std={sd}")?;
        let (m, sd) = mean_std(&noisy_mse);
        writeln!(s, "noisy_mse.mean={m}")?;
        writeln!(s, "noisy_mse.std={sd}")?;

        let mut auc = format!("encoder{header}\tmean\tstd\tmean±std\n");
        if cfg.metrics.activation {
            auc.push_str(&row(&format!("{label}:audio"), &audio_auc));
            let (m, sd) = mean_std(&audio_auc);
            writeln!(s, "auc.audio.mean={m}")?;
            writeln!(s, "auc.audio.std={sd}")?;
            if !visual_auc.is_empty() {
                auc.push_str(&row(&format!("{label}:visual"), &visual_auc));
                let (m, sd) = mean_std(&visual_auc);
                writeln!(s, "auc.visual.mean={m}")?;
                writeln!(s, "auc.visual.std={sd}")?;
            }
        }

        let decision = wilcoxon_decision(
            &model_mse,
            &noisy_mse,
            cfg.metrics.wilcoxon_alpha,
            &label,
            "noisy-input",
        );
        writeln!(s, "wilcoxon.vs_noisy_input={decision}")?;
        let wilcoxon = format!("run_a\trun_b\tresult\n{label}\tnoisy-input\t{decision}\n");

        let mut enhancement = String::from("clip\tinput_segsnr_db\toutput_segsnr_db\timprovement_db\n");
        for (i, c) in clips.iter().enumerate() {
            writeln!(
                enhancement,
                "{i}\t{}\t{}\t{}",
                c.input_segsnr_db,
                c.output_segsnr_db,
                c.improvement_db()
            )?;
            writeln!(s, "enhancement.clip.{i}.input_segsnr_db={}", c.input_segsnr_db)?;
            writeln!(s, "enhancement.clip.{i}.output_segsnr_db={}", c.output_segsnr_db)?;
        }
        if !clips.is_empty() {
            let imp: Vec<f64> = clips.iter().map(ClipScore::improvement_db).collect();
            writeln!(s, "enhancement.improvement_db.mean={}", mean_std(&imp).0)?;
        }
        Ok(Tables {
            summary: s,
            mse,
            auc,
            wilcoxon,
            enhancement,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn wilcoxon_decisions() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b: Vec<f64> = a.iter().map(|x| x + 1.0 + x * 0.01).collect();
        assert!(wilcoxon_decision(&a, &b, 0.05, "A", "B").ends_with("decision=A wins"));
        assert!(wilcoxon_decision(&b, &a, 0.05, "A", "B").ends_with("decision=B wins"));
        assert_eq!(wilcoxon_decision(&a, &a, 0.05, "A", "B"), "decision=no difference");
        assert!(wilcoxon_decision(&a[..2], &b[..2], 0.05, "A", "B").starts_with("decision=skipped"));
    }

    #[test]
    fn oracle_enhancement_improves_every_clip() {
        for c in enhancement_scores(0, 2).unwrap() {
            assert!(c.improvement_db() > 0.0, "{c:?}");
        }
    }
}
