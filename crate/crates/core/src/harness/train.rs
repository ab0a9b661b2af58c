use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use super::manifest::Manifest;
use crate::autodiff::{AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::imgproc::{augment, preprocess, AugmentPolicy, PrepConfig, RoiPatch, TemplateMatch};
use crate::metrics::{self, Interval};
use crate::nets::checkpoint::{self, Provenance};
use crate::nets::{
    batch_inputs, mean_probability, AuxFeatures, AuxUse, BackboneSpec, EnsembleModel, Network,
    Threshold,
};
use crate::rng::{self, tag};
use crate::types::{Label, Side};

/// A preprocessed joint ready for training or evaluation.
#[derive(Clone, Debug)]
pub struct Case {
    pub case_id: String,
    pub patient_id: String,
    pub side: Side,
    pub label: Label,
    pub aux: AuxFeatures,
    pub patch: RoiPatch,
    /// Where the template matched in the half image.
    pub located: TemplateMatch,
}

/// Loads and preprocesses every manifest row, in row order.
pub fn prepare_cases(manifest: &Manifest, template: &Image, prep: &PrepConfig) -> Result<Vec<Case>> {
    manifest
        .rows
        .par_iter()
        .map(|row| {
            let image = Image::load_pgm(&manifest.resolve(row))?;
            let (patch, located) = preprocess(&image, row.side, &row.patient_id, template, prep)
                .map_err(|e| match e {
                    Error::NoMatch => Error::InvalidInput(format!(
                        "{}: no template match in a flat image",
                        row.case_id()
                    )),
                    other => other,
                })?;
            Ok(Case {
                case_id: row.case_id(),
                patient_id: row.patient_id.clone(),
                side: row.side,
                label: row.label,
                aux: AuxFeatures::new(row.age_years, row.sex)?,
                patch,
                located,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub threshold: Threshold,
    /// Training-only augmentation; `None` trains on the originals alone.
    pub augment: Option<AugmentPolicy>,
    pub aux_use: AuxUse,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            threshold: Threshold::default(),
            augment: None,
            aux_use: AuxUse::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.threshold.probability()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Computed on the fold's held-out split.
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberCurves {
    pub member: String,
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub patient_id: String,
    pub label: Label,
    /// Ensemble probability of active inflammation.
    pub probability: f64,
    /// Per-member probabilities, in member order.
    pub member_probabilities: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub members: Vec<String>,
    pub train_cases: usize,
    pub cases: Vec<CaseResult>,
    pub curves: Vec<MemberCurves>,
    pub checkpoint: Option<PathBuf>,
}

impl FoldResult {
    pub fn probabilities(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.probability).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.cases.iter().map(|c| c.label).collect()
    }

    pub fn member_probabilities(&self, member: usize) -> Vec<f64> {
        self.cases
            .iter()
            .map(|c| c.member_probabilities[member])
            .collect()
    }

    /// Ensemble AUC on the test split; `None` when it holds one class only.
    pub fn auc(&self) -> Option<f64> {
        metrics::roc_auc(&self.probabilities(), &self.labels())
            .ok()
            .map(|(a, _)| a)
    }

    pub fn member_auc(&self, member: usize) -> Option<f64> {
        metrics::roc_auc(&self.member_probabilities(member), &self.labels())
            .ok()
            .map(|(a, _)| a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold result serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn check_members(members: &[BackboneSpec], cases: &[Case]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one ensemble member is required".into()))?;
    for m in members {
        m.validate()?;
        if m.input_side != first.input_side {
            return Err(Error::InvalidInput(format!(
                "ensemble members disagree on input side: {} vs {}",
                first.input_side, m.input_side
            )));
        }
    }
    if let Some(c) = cases.iter().find(|c| c.patch.side_len() != first.input_side) {
        return Err(Error::InvalidInput(format!(
            "{} has a {} pixel patch but the networks expect {}",
            c.case_id,
            c.patch.side_len(),
            first.input_side
        )));
    }
    Ok(())
}

const EVAL_BATCH: usize = 64;

fn predict(net: &Network<f32>, cases: &[(&RoiPatch, AuxFeatures)]) -> Result<Vec<f64>> {
    let side = net.spec().input_side;
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(EVAL_BATCH) {
        let patches: Vec<&RoiPatch> = chunk.iter().map(|c| c.0).collect();
        let aux: Vec<AuxFeatures> = chunk.iter().map(|c| c.1).collect();
        let (images, aux) = batch_inputs::<f32>(&patches, &aux, net.aux_use(), side)?;
        out.extend(net.predict(images, aux)?);
    }
    Ok(out)
}

fn loss_and_accuracy(probs: &[f64], labels: &[Label], threshold: f64) -> (f64, f64) {
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (&p, l) in probs.iter().zip(labels) {
        let p_true = if l.is_positive() { p } else { 1.0 - p };
        loss -= p_true.max(1e-12).ln();
        if (p >= threshold) == l.is_positive() {
            correct += 1;
        }
    }
    (loss / n, correct as f64 / n)
}

struct TrainedMember {
    net: Network<f32>,
    curves: MemberCurves,
    test_probs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    spec: &BackboneSpec,
    member: usize,
    fold: usize,
    train: &[(&RoiPatch, AuxFeatures, Label)],
    test: &[(&RoiPatch, AuxFeatures)],
    test_labels: &[Label],
    config: &TrainConfig,
) -> Result<TrainedMember> {
    let threshold = config.threshold.probability()?;
    let mut net: Network<f32> = Network::build(
        spec,
        config.aux_use,
        &mut rng::stream(config.seed, &[tag::INIT, fold as u64, member as u64]),
    )?;
    let mut opt = AdamW::new(config.optimizer, net.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(
            config.seed,
            &[tag::SHUFFLE, fold as u64, epoch as u64],
        ));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let patches: Vec<&RoiPatch> = batch.iter().map(|&i| train[i].0).collect();
            let aux: Vec<AuxFeatures> = batch.iter().map(|&i| train[i].1).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].2.index() as usize).collect();
            let (images, aux) = batch_inputs::<f32>(&patches, &aux, config.aux_use, spec.input_side)?;
            let (loss, probs) = net
                .train_step(&mut opt, images, aux, &labels)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!(
                        "{msg} (fold {fold}, member {member} {}, epoch {}, batch {b})",
                        spec.descriptor(),
                        epoch + 1
                    )),
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;
            correct += probs
                .iter()
                .zip(&labels)
                .filter(|(p, l)| (**p >= threshold) == (**l == 1))
                .count();
        }
        let val_probs = predict(&net, test)?;
        let (val_loss, val_accuracy) = loss_and_accuracy(&val_probs, test_labels, threshold);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    let test_probs = predict(&net, test)?;
    Ok(TrainedMember {
        net,
        curves: MemberCurves {
            member: spec.descriptor(),
            epochs,
        },
        test_probs,
    })
}

/// Trains every member on the training partition of `fold` and evaluates
/// the ensemble on its test partition. With `checkpoint_dir`, the trained
/// ensemble is written there as `fold{fold}.jnt`.
pub fn train_fold(
    cases: &[Case],
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
    members: &[BackboneSpec],
    checkpoint_dir: Option<&Path>,
) -> Result<FoldResult> {
    config.validate()?;
    check_members(members, cases)?;
    let ids: Vec<&str> = cases.iter().map(|c| c.patient_id.as_str()).collect();
    let (train_idx, test_idx) = plan.split(&ids, fold)?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidInput(format!(
            "fold {fold} has {} training and {} test cases",
            train_idx.len(),
            test_idx.len()
        )));
    }

    let mut copies: Vec<(RoiPatch, usize)> = Vec::new();
    if let Some(policy) = &config.augment {
        for &i in &train_idx {
            let mut r = rng::stream(config.seed, &[tag::AUGMENT, fold as u64, i as u64]);
            for patch in augment(&cases[i].patch, policy, &mut r)? {
                copies.push((patch, i));
            }
        }
    }
    let mut train: Vec<(&RoiPatch, AuxFeatures, Label)> = train_idx
        .iter()
        .map(|&i| (&cases[i].patch, cases[i].aux, cases[i].label))
        .collect();
    train.extend(
        copies
            .iter()
            .map(|(p, i)| (p, cases[*i].aux, cases[*i].label)),
    );
    let test: Vec<(&RoiPatch, AuxFeatures)> = test_idx
        .iter()
        .map(|&i| (&cases[i].patch, cases[i].aux))
        .collect();
    let test_labels: Vec<Label> = test_idx.iter().map(|&i| cases[i].label).collect();

    let trained: Vec<TrainedMember> = members
        .par_iter()
        .enumerate()
        .map(|(m, spec)| train_member(spec, m, fold, &train, &test, &test_labels, config))
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(test_idx.len());
    for (j, &i) in test_idx.iter().enumerate() {
        let member_probabilities: Vec<f64> = trained.iter().map(|t| t.test_probs[j]).collect();
        results.push(CaseResult {
            case_id: cases[i].case_id.clone(),
            patient_id: cases[i].patient_id.clone(),
            label: cases[i].label,
            probability: mean_probability(&member_probabilities)?,
            member_probabilities,
        });
    }
    let curves = trained.iter().map(|t| t.curves.clone()).collect();
    let checkpoint = match checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("fold{fold}.jnt"));
            let model = EnsembleModel::new(trained.into_iter().map(|t| t.net).collect())?;
            let provenance = Provenance {
                seed: config.seed,
                fold: Some(fold),
                epochs: config.epochs,
                batch_size: config.batch_size,
                optimizer: Some(config.optimizer),
            };
            checkpoint::save(&path, &model, &provenance)?;
            Some(path)
        }
        None => None,
    };
    Ok(FoldResult {
        fold,
        members: members.iter().map(BackboneSpec::descriptor).collect(),
        train_cases: train.len(),
        cases: results,
        curves,
        checkpoint,
    })
}

/// Aggregate of a cross-validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    /// Mean of per-fold ensemble AUCs with a bootstrap interval over folds.
    pub auc: Interval,
    /// Same for each member on its own.
    pub member_auc: Vec<(String, Interval)>,
    /// Folds whose test split held a single class and so have no AUC.
    pub folds_without_auc: Vec<usize>,
    pub pooled_confusion: metrics::ConfusionTable,
    pub pooled_metrics: metrics::BasicMetrics,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub summary: CvSummary,
}

fn summarize_aucs(values: &[f64], seed: u64) -> Result<Interval> {
    match values.len() {
        0 => Err(Error::Degenerate(
            "no fold has both classes in its test split".into(),
        )),
        1 => Ok(Interval {
            mean: values[0],
            lo95: values[0],
            hi95: values[0],
        }),
        _ => metrics::bootstrap_ci(values, metrics::DEFAULT_RESAMPLES, seed),
    }
}

/// Aggregates finished folds; fails if any case is tested twice or never.
pub fn summarize(folds: &[FoldResult], cases: &[Case], config: &TrainConfig) -> Result<CvSummary> {
    let mut seen = std::collections::HashMap::new();
    for f in folds {
        for c in &f.cases {
            if let Some(prev) = seen.insert(c.case_id.as_str(), f.fold) {
                return Err(Error::Internal(format!(
                    "{} tested in folds {prev} and {}",
                    c.case_id, f.fold
                )));
            }
        }
    }
    if let Some(c) = cases.iter().find(|c| !seen.contains_key(c.case_id.as_str())) {
        return Err(Error::Internal(format!("{} was never tested", c.case_id)));
    }
    aggregate(folds, config)
}

/// Aggregates fold results without checking them against a case list.
pub fn aggregate(folds: &[FoldResult], config: &TrainConfig) -> Result<CvSummary> {
    let mut aucs = Vec::new();
    let mut missing = Vec::new();
    for f in folds {
        match f.auc() {
            Some(a) => aucs.push(a),
            None => missing.push(f.fold),
        }
    }
    let auc = summarize_aucs(&aucs, config.seed)?;
    let members = folds.first().map(|f| f.members.clone()).unwrap_or_default();
    let member_auc = members
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let v: Vec<f64> = folds.iter().filter_map(|f| f.member_auc(m)).collect();
            Ok((name.clone(), summarize_aucs(&v, config.seed)?))
        })
        .collect::<Result<_>>()?;
    let probs: Vec<f64> = folds.iter().flat_map(|f| f.probabilities()).collect();
    let labels: Vec<Label> = folds.iter().flat_map(|f| f.labels()).collect();
    let threshold = config.threshold.probability()?;
    let pooled_confusion = metrics::confusion(&probs, &labels, threshold)?;
    Ok(CvSummary {
        auc,
        member_auc,
        folds_without_auc: missing,
        pooled_metrics: metrics::basic_metrics(&pooled_confusion),
        pooled_confusion,
        threshold,
    })
}

/// Trains and evaluates every fold of `plan`. Folds run in parallel.
pub fn run_cv(
    cases: &[Case],
    plan: &FoldPlan,
    config: &TrainConfig,
    members: &[BackboneSpec],
    checkpoint_dir: Option<&Path>,
) -> Result<CvReport> {
    config.validate()?;
    check_members(members, cases)?;
    let folds: Vec<FoldResult> = (0..plan.k)
        .into_par_iter()
        .map(|f| train_fold(cases, plan, f, config, members, checkpoint_dir))
        .collect::<Result<_>>()?;
    let summary = summarize(&folds, cases, config)?;
    Ok(CvReport { folds, summary })
}
