use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, Checkpoint, TrainingMeta};
use super::model::reduce_mean;
use super::{Adam, Mode, Model, ModelConfig, ModelError, Parameters, TrainConfig};
use crate::hisco::{HiscoCode, LabelSpace, OccupationRecord};
use crate::ingest::CleanDataset;
use crate::rng::{self, derive_seed};
use crate::textenc::{apply_language_dropout, augment, encode, EncodedInput, LanguageTag};

const INIT_STREAM: u64 = 0x494E_4954;
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const FINETUNE_SPLIT_STREAM: u64 = 0x4654_5350;
const INFERENCE_CHUNK: usize = 256;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
    pub saved: bool,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6} val_acc={:.6} saved={}", self.epoch, self.loss, self.val_accuracy, self.saved)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn targets_of(ds: &CleanDataset, space: &LabelSpace) -> Result<Vec<Vec<usize>>, ModelError> {
    ds.records
        .iter()
        .map(|r| space.indices(r.targets()).map_err(|e| ModelError::LabelSpaceMismatch(e.to_string())))
        .collect()
}

/// Probability matrix for `(lang, text)` inputs in eval mode.
pub(crate) fn probabilities(model: &Model<f32>, inputs: &[(LanguageTag, String)]) -> Result<Array2<f64>, ModelError> {
    let (probs, _) = run_eval(model, inputs)?;
    Ok(probs)
}

fn run_eval(model: &Model<f32>, inputs: &[(LanguageTag, String)]) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let mut probs = Array2::zeros((inputs.len(), model.config.label_count));
    let mut pooled = Array2::zeros((inputs.len(), model.config.hidden_dim));
    for (ci, chunk) in inputs.chunks(INFERENCE_CHUNK).enumerate() {
        let enc: Vec<EncodedInput> =
            chunk.iter().map(|(l, t)| encode(*l, t, model.config.max_len)).collect::<Result<_, _>>()?;
        let out = model.forward(&enc, Mode::Eval)?;
        let start = ci * INFERENCE_CHUNK;
        for i in 0..chunk.len() {
            probs.row_mut(start + i).assign(&out.probs.row(i));
            pooled.row_mut(start + i).assign(&out.pooled.row(i));
        }
    }
    Ok((probs, pooled))
}

/// Share of rows whose thresholded index set equals the target set.
pub fn exact_match_accuracy(probs: &Array2<f64>, targets: &[Vec<usize>], threshold: f64) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = targets
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            let pred: Vec<usize> =
                probs.row(*i).iter().enumerate().filter(|(_, &p)| p >= threshold).map(|(j, _)| j).collect();
            &pred == *t
        })
        .count();
    hits as f64 / targets.len() as f64
}

fn record_inputs(ds: &CleanDataset) -> Vec<(LanguageTag, String)> {
    ds.records.iter().map(|r| (r.lang, r.text.clone())).collect()
}

fn validation_accuracy(
    model: &Model<f32>,
    ds: &CleanDataset,
    targets: &[Vec<usize>],
    thr: f64,
) -> Result<f64, ModelError> {
    let probs = probabilities(model, &record_inputs(ds))?;
    Ok(exact_match_accuracy(&probs, targets, thr))
}

struct Session<'a> {
    train: &'a CleanDataset,
    val: &'a CleanDataset,
    space: &'a LabelSpace,
    tcfg: &'a TrainConfig,
}

impl Session<'_> {
    fn run(
        &self,
        mut model: Model<f32>,
        start_best: f64,
        start_meta: TrainingMeta,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainOutcome, ModelError> {
        let tcfg = self.tcfg;
        tcfg.validate()?;
        if self.train.is_empty() {
            return Err(ModelError::EmptyDataset("training set"));
        }
        if self.val.is_empty() {
            return Err(ModelError::EmptyDataset("validation set"));
        }
        let train_targets = targets_of(self.train, self.space)?;
        let val_targets = targets_of(self.val, self.space)?;
        let cfg = model.config.clone();
        let labels = cfg.label_count;
        let record_seed = derive_seed(tcfg.rng_seed, &[tcfg.augment.rng_seed]);
        let mut opt = Adam::<f32>::new(&cfg, tcfg.learning_rate, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_epsilon);

        let mut best = Checkpoint::new(model.clone(), self.space.clone(), start_best, start_meta.clone());
        let mut log = Vec::new();
        let mut order: Vec<usize> = (0..self.train.len()).collect();

        for epoch in 1..=tcfg.max_epochs {
            let mut shuffle_rng = rng::seeded(derive_seed(tcfg.rng_seed, &[SHUFFLE_STREAM, epoch as u64]));
            order.shuffle(&mut shuffle_rng);
            let mut loss_sum = 0.0f64;
            for (bi, batch) in order.chunks(tcfg.batch_size).enumerate() {
                let per: Vec<(f32, Parameters<f32>)> = batch
                    .par_iter()
                    .map(|&idx| {
                        let rec = &self.train.records[idx];
                        let mut r = rng::keyed(record_seed, epoch as u64, idx as u64);
                        let text = augment(&rec.text, &tcfg.augment, &mut r);
                        let lang = apply_language_dropout(rec.lang, tcfg.p_lang_unknown, &mut r);
                        let enc = encode(lang, &text, cfg.max_len)?;
                        let trace = model.forward_record(&enc, Some(&mut r))?;
                        let mut y = vec![0.0f32; labels];
                        for &j in &train_targets[idx] {
                            y[j] = 1.0;
                        }
                        model.backward_record(&trace, &y)
                    })
                    .collect::<Result<_, _>>()?;
                let (loss, grads) = reduce_mean(per, &cfg);
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch: bi, loss: loss as f64 });
                }
                loss_sum += loss as f64 * batch.len() as f64;
                opt.update(&mut model.params, &grads);
            }
            let loss = loss_sum / self.train.len() as f64;
            let val_accuracy = validation_accuracy(&model, self.val, &val_targets, tcfg.eval_threshold)?;
            let saved = val_accuracy > best.best_val_accuracy;
            if saved {
                let meta = TrainingMeta { epochs_seen: start_meta.epochs_seen + epoch, seed: tcfg.rng_seed };
                best = Checkpoint::new(model.clone(), self.space.clone(), val_accuracy, meta);
                if let Some(path) = &tcfg.checkpoint_path {
                    save_checkpoint(&best, path)?;
                }
            }
            let entry = EpochLog { epoch, loss, val_accuracy, saved };
            on_epoch(&entry);
            log.push(entry);
        }
        Ok(TrainOutcome { checkpoint: best, log })
    }
}

/// `ln(p / (1 - p))` of each label's frequency, with `p` kept inside
/// `[1/(2n), 1 - 1/(2n)]` so absent or universal labels stay finite.
pub(crate) fn label_log_prior(targets: &[Vec<usize>], labels: usize) -> Vec<f32> {
    let n = targets.len().max(1) as f64;
    let mut counts = vec![0usize; labels];
    for t in targets {
        for &j in t {
            counts[j] += 1;
        }
    }
    let lo = 0.5 / n;
    counts
        .iter()
        .map(|&c| {
            let p = (c as f64 / n).clamp(lo, 1.0 - lo);
            (p / (1.0 - p)).ln() as f32
        })
        .collect()
}

/// Trains from random initialization; see [`train_with_log`].
pub fn train(
    train_set: &CleanDataset,
    val_set: &CleanDataset,
    space: &LabelSpace,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<Checkpoint, ModelError> {
    train_with_log(train_set, val_set, space, mcfg, tcfg, |_| {}).map(|o| o.checkpoint)
}

/// Epoch loop with seeded shuffling, per-record augmentation and language
/// dropout, Adam updates, and save-on-strict-improvement of validation
/// exact-match accuracy. Returns the best checkpoint and the per-epoch log.
pub fn train_with_log(
    train_set: &CleanDataset,
    val_set: &CleanDataset,
    space: &LabelSpace,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    if mcfg.label_count != space.len() {
        return Err(ModelError::InvalidConfig(format!(
            "label_count {} but label space has {} codes",
            mcfg.label_count,
            space.len()
        )));
    }
    let mut model = Model::init(mcfg.clone(), derive_seed(tcfg.rng_seed, &[INIT_STREAM]))?;
    // Start the head at the label log-prior. From a zero bias, the first
    // updates otherwise push every logit down together by saturating the
    // pooler, and the input signal never recovers.
    let targets = targets_of(train_set, space)?;
    for (b, prior) in model.params.head_bias.iter_mut().zip(label_log_prior(&targets, mcfg.label_count)) {
        *b = prior;
    }
    let meta = TrainingMeta { epochs_seen: 0, seed: tcfg.rng_seed };
    Session { train: train_set, val: val_set, space, tcfg }.run(model, f64::NEG_INFINITY, meta, on_epoch)
}

/// Continues training a checkpoint on new data. A seeded 10% of `new_data`
/// (at least one record) is held out for validation, and the starting
/// validation accuracy of the input checkpoint is the bar to beat.
pub fn finetune(
    ckpt: &Checkpoint,
    new_data: &CleanDataset,
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    let space = &ckpt.labels;
    if let Some(bad) = new_data.records.iter().flat_map(|r| r.targets().iter()).find(|c| !space.contains(c)) {
        return Err(ModelError::LabelSpaceMismatch(format!("code {bad} is not in the checkpoint's label space")));
    }
    if new_data.is_empty() {
        return Err(ModelError::EmptyDataset("finetuning data"));
    }
    let mut split_rng = rng::seeded(derive_seed(tcfg.rng_seed, &[FINETUNE_SPLIT_STREAM]));
    let mut train_recs: Vec<OccupationRecord> = Vec::new();
    let mut val_recs: Vec<OccupationRecord> = Vec::new();
    for r in &new_data.records {
        if split_rng.random::<f64>() < 0.1 {
            val_recs.push(r.clone());
        } else {
            train_recs.push(r.clone());
        }
    }
    if val_recs.is_empty() {
        val_recs.push(train_recs.pop().expect("non-empty data"));
    }
    if train_recs.is_empty() {
        train_recs = val_recs.clone();
    }
    let train_ds = CleanDataset::from_records(train_recs);
    let val_ds = CleanDataset::from_records(val_recs);
    let val_targets = targets_of(&val_ds, space)?;
    let baseline = validation_accuracy(&ckpt.model, &val_ds, &val_targets, tcfg.eval_threshold)?;
    let session = Session { train: &train_ds, val: &val_ds, space, tcfg };
    session.run(ckpt.model.clone(), baseline, ckpt.meta.clone(), on_epoch)
}

/// One thresholded prediction: codes with their probabilities, most probable first.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub codes: Vec<HiscoCode>,
    pub probs: Vec<f64>,
}

pub(crate) fn threshold_row(
    row: ndarray::ArrayView1<f64>,
    space: &LabelSpace,
    threshold: f64,
    fallback_top1: bool,
) -> Prediction {
    let mut picked: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, p)| *p >= threshold).collect();
    if picked.is_empty() && fallback_top1 {
        let best =
            row.iter()
                .copied()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (j, p)| if p > acc.1 { (j, p) } else { acc });
        picked.push(best);
    }
    picked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Prediction {
        codes: picked.iter().map(|(j, _)| space.code(*j).expect("index within space")).collect(),
        probs: picked.iter().map(|(_, p)| *p).collect(),
    }
}

/// Thresholded code sets for `(lang, text)` inputs. Texts should already be
/// normalized.
pub fn predict(
    ckpt: &Checkpoint,
    inputs: &[(LanguageTag, String)],
    threshold: f64,
    fallback_top1: bool,
) -> Result<Vec<Prediction>, ModelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ModelError::ThresholdOutOfRange(threshold));
    }
    let probs = probabilities(&ckpt.model, inputs)?;
    Ok(probs.rows().into_iter().map(|row| threshold_row(row, &ckpt.labels, threshold, fallback_top1)).collect())
}

/// Probability rows in label-space order, one per input.
pub fn predict_proba(ckpt: &Checkpoint, inputs: &[(LanguageTag, String)]) -> Result<Array2<f64>, ModelError> {
    probabilities(&ckpt.model, inputs)
}

/// Pooled (pre-head) representations, one row per input.
pub fn embed(ckpt: &Checkpoint, inputs: &[(LanguageTag, String)]) -> Result<Array2<f64>, ModelError> {
    run_eval(&ckpt.model, inputs).map(|(_, pooled)| pooled)
}
