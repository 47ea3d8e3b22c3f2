//! Splits, class balancing, the training loop and the three training stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use nets_core::error::{Error, Result};
use nets_core::labels::PlayClass;
use nets_core::metrics::{f1_scores, ConfusionMatrix, EmbeddingRow};
use nets_core::segment::{DatasetSplit, PlaySegment};

use crate::model::{HeadKind, Nets};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Matrix;

/// Class weights for weak-label training at real-game class ratios.
pub const WEAK_RATIO_ALPHA: [f64; 3] = [0.77, 2.34, 0.77];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    FinetuneWeak,
    FinetuneManual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    /// All windows of one possession go to the same part.
    #[default]
    Possession,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub stage: Stage,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Class weights; computed from the training labels when absent.
    pub alpha: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrainRunConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            adam: AdamConfig::default(),
            batch_size: 512,
            patience: 50,
            max_epochs: 10_000,
            alpha: None,
            seed: 0,
        }
    }

    /// Settings for the small CPU configuration.
    pub fn desk(stage: Stage) -> Self {
        Self {
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            batch_size: 64,
            patience: 10,
            max_epochs: 200,
            ..Self::new(stage)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::Config("patience, batch size and max epochs must be at least 1".into()));
        }
        if let Some(a) = &self.alpha {
            if a.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Config("class weights must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Macro F1 on the validation set, classification only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_macro_f1: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub wall_time_s: f64,
}

impl RunLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// The log with all timings zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunLog {
        let mut log = self.clone();
        log.wall_time_s = 0.0;
        for e in &mut log.epochs {
            e.elapsed_s = 0.0;
        }
        log
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.epochs {
            let line = serde_json::to_string(e).expect("epoch records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Whether the training loop should go on after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Sizes by the largest-remainder rule for 80/10/10.
fn split_sizes(n: usize) -> [usize; 3] {
    let shares = [8usize, 1, 1];
    let mut sizes = shares.map(|s| n * s / 10);
    let mut order: Vec<usize> = (0..3).collect();
    // larger remainder first, earlier part on ties
    order.sort_by_key(|&i| (std::cmp::Reverse(n * shares[i] % 10), i));
    let mut left = n - sizes.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Seeded 80/10/10 split. Grouping by possession keeps near-duplicate windows
/// together, so part sizes can then miss the target by up to one group.
pub fn make_splits(segments: &[PlaySegment], seed: u64, by: SplitBy) -> Result<DatasetSplit> {
    if segments.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "{} segments are too few to split, at least 10 are needed",
            segments.len()
        )));
    }
    let mut groups: BTreeMap<(String, String, usize), Vec<String>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        let key = match by {
            SplitBy::Possession => {
                let (g, e, p) = s.provenance.possession_key();
                (g.to_string(), e.to_string(), p)
            }
            SplitBy::Segment => (String::new(), String::new(), i),
        };
        groups.entry(key).or_default().push(s.segment_id.clone());
    }
    let mut groups: Vec<Vec<String>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [_, n_val, n_test] = split_sizes(segments.len());
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for g in groups {
        if split.validation.len() < n_val && split.validation.len() + g.len() <= n_val + g.len() / 2 {
            split.validation.extend(g);
        } else if split.test.len() < n_test && split.test.len() + g.len() <= n_test + g.len() / 2 {
            split.test.extend(g);
        } else {
            split.train.extend(g);
        }
    }
    Ok(split)
}

/// Downsamples `other` to the pick-and-roll count without replacement,
/// keeping the input order of what survives. Handoffs are left alone.
pub fn balance_classes(items: &[(String, PlayClass)], seed: u64) -> Vec<(String, PlayClass)> {
    let count = |c: PlayClass| items.iter().filter(|(_, l)| *l == c).count();
    let (pnr, other) = (count(PlayClass::PickAndRoll), count(PlayClass::Other));
    if other <= pnr {
        return items.to_vec();
    }
    let mut others: Vec<usize> = (0..items.len()).filter(|&i| items[i].1 == PlayClass::Other).collect();
    others.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dropped: BTreeSet<usize> = others[pnr..].iter().copied().collect();
    items
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, x)| x.clone())
        .collect()
}

/// `α_k = n / (K·n_k)`, zero for absent classes.
pub fn class_weights(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (k as f64 * c as f64) })
        .collect()
}

/// Resolves labels for `ids`, listing every id without one.
pub fn attach_labels(ids: &[String], labels: &BTreeMap<String, PlayClass>) -> Result<Vec<PlayClass>> {
    let missing: Vec<&str> = ids.iter().filter(|id| !labels.contains_key(*id)).map(String::as_str).collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(20).copied().collect();
        return Err(Error::Mismatch(format!(
            "label file is missing {} segment ids: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    Ok(ids.iter().map(|id| labels[id]).collect())
}

/// Round robin over the pick-and-roll, handoff and other pools (each shuffled
/// with `seed`), at most `quota` per class. Returns the queue and warnings
/// for pools that ran short.
pub fn sample_for_annotation(
    weak: &BTreeMap<String, PlayClass>,
    quota: usize,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<Vec<&String>> = PlayClass::ALL
        .iter()
        .map(|&c| {
            let mut p: Vec<&String> = weak.iter().filter(|(_, l)| **l == c).map(|(id, _)| id).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut warnings = Vec::new();
    for (c, p) in PlayClass::ALL.iter().zip(&pools) {
        if p.len() < quota {
            warnings.push(format!("only {} {c} segments available for a quota of {quota}", p.len()));
        }
    }
    let mut queue = Vec::new();
    for r in 0..quota {
        for p in &pools {
            if let Some(id) = p.get(r) {
                queue.push((*id).clone());
            }
        }
    }
    (queue, warnings)
}

fn check_grads(model: &Nets, grads: &[Matrix]) -> Result<()> {
    for (n, g) in model.params.names.iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(n.clone()));
        }
    }
    Ok(())
}

/// Labeled examples for the classification stages.
pub struct Labeled<'a> {
    pub segments: Vec<&'a PlaySegment>,
    pub labels: Vec<usize>,
}

impl<'a> Labeled<'a> {
    pub fn new(segments: Vec<&'a PlaySegment>, labels: Vec<usize>) -> Result<Self> {
        if segments.len() != labels.len() {
            return Err(Error::Mismatch("segments and labels differ in length".into()));
        }
        Ok(Self { segments, labels })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(size.max(1)).map(move |s| s..(s + size).min(n))
}

/// Generic loop: shuffled mini-batches, Adam, early stopping on validation
/// loss. The model ends up with its best-validation parameters.
fn fit(
    model: &mut Nets,
    run: &TrainRunConfig,
    n_train: usize,
    step: &mut dyn FnMut(&Nets, &[usize]) -> Result<(f64, Vec<Matrix>)>,
    validate: &mut dyn FnMut(&Nets) -> Result<(f64, Option<f64>)>,
    observer: &mut dyn FnMut(&EpochRecord, &Nets) -> Control,
) -> Result<RunLog> {
    run.validate()?;
    let start = Instant::now();
    let mut adam = Adam::new(run.adam, &model.params.shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.values.clone());
    for epoch in 1..=run.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for r in batches(n_train, run.batch_size) {
            let idx = &order[r];
            let (loss, grads) = step(model, idx)?;
            check_grads(model, &grads)?;
            adam.step(&mut model.params.values, &grads);
            total += loss * idx.len() as f64;
        }
        let (validation_loss, validation_macro_f1) = validate(model)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / n_train as f64,
            validation_loss,
            validation_macro_f1,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} validation {:.5}{}",
            rec.train_loss,
            rec.validation_loss,
            rec.validation_macro_f1.map(|f| format!(" macro-F1 {f:.4}")).unwrap_or_default()
        );
        if validation_loss < best.0 {
            best = (validation_loss, epoch, model.params.values.clone());
        }
        let control = observer(&rec, model);
        epochs.push(rec);
        if control == Control::Stop || epoch - best.1 >= run.patience {
            break;
        }
    }
    let stop_epoch = epochs.len();
    if best.1 == 0 {
        return Err(Error::Mismatch("validation loss was never finite".into()));
    }
    model.params.values = best.2;
    Ok(RunLog {
        stage: run.stage,
        epochs,
        best_epoch: best.1,
        stop_epoch,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Self-supervised velocity prediction. Segments without a future are skipped.
pub fn pretrain<'a>(
    model: &mut Nets,
    train: &[&'a PlaySegment],
    validation: &[&'a PlaySegment],
    run: &TrainRunConfig,
    observer: &mut dyn FnMut(&EpochRecord, &Nets) -> Control,
) -> Result<RunLog> {
    if model.head != HeadKind::Trajectory {
        *model = model.with_head(HeadKind::Trajectory, run.seed);
    }
    let h = model.config.horizon;
    let keep = |s: &[&'a PlaySegment]| -> Vec<&'a PlaySegment> {
        s.iter().copied().filter(|s| s.has_future() && s.horizon == h).collect()
    };
    let (train, validation) = (keep(train), keep(validation));
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no segment with a {}-step future in the training or validation set",
            model.config.horizon
        )));
    }
    let batch = run.batch_size;
    let mut step = |m: &Nets, idx: &[usize]| {
        let segs: Vec<&PlaySegment> = idx.iter().map(|&i| train[i]).collect();
        m.trajectory_loss(&segs)
    };
    let mut validate = |m: &Nets| {
        let mut total = 0.0;
        for r in batches(validation.len(), batch) {
            total += m.loss(&validation[r.clone()], None)? * r.len() as f64;
        }
        Ok((total / validation.len() as f64, None))
    };
    fit(model, run, train.len(), &mut step, &mut validate, observer)
}

/// Play-type training. A trajectory-head model has its head replaced first,
/// which keeps the pretrained base.
pub fn finetune(
    model: &mut Nets,
    train: &Labeled<'_>,
    validation: &Labeled<'_>,
    run: &TrainRunConfig,
    observer: &mut dyn FnMut(&EpochRecord, &Nets) -> Control,
) -> Result<RunLog> {
    if model.head != HeadKind::Classification {
        *model = model.with_head(HeadKind::Classification, run.seed);
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("empty training or validation set".into()));
    }
    let k = model.config.classes;
    let alpha = match &run.alpha {
        Some(a) if a.len() != k => {
            return Err(Error::Config(format!("{} class weights for {k} classes", a.len())));
        }
        Some(a) => a.clone(),
        None => class_weights(&train.labels, k),
    };
    let batch = run.batch_size;
    let mut step = |m: &Nets, idx: &[usize]| {
        let segs: Vec<&PlaySegment> = idx.iter().map(|&i| train.segments[i]).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        m.classification_loss(&segs, &ys, &alpha)
    };
    let mut validate = |m: &Nets| {
        let mut total = 0.0;
        let mut pairs = Vec::with_capacity(validation.len());
        for r in batches(validation.len(), batch) {
            let f = m.forward(&validation.segments[r.clone()])?;
            let mut f = f;
            let loss = f.tape.nll(f.output, &validation.labels[r.clone()], &alpha);
            total += f.tape.value(loss).data[0] * r.len() as f64;
            let probs = f.tape.value(f.output);
            for (row, &y) in r.clone().enumerate().map(|(j, i)| (j, &validation.labels[i])) {
                pairs.push((y, argmax(probs.row(row))));
            }
        }
        let f1 = f1_scores(&ConfusionMatrix::from_pairs(k, &pairs)?).macro_f1;
        Ok((total / validation.len() as f64, f1))
    };
    fit(model, run, train.len(), &mut step, &mut validate, observer)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class index per segment.
pub fn predict_classes(model: &Nets, segments: &[&PlaySegment], batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(segments.len());
    for r in batches(segments.len(), batch) {
        out.extend(model.predict_proba(&segments[r])?.iter().map(|p| argmax(p)));
    }
    Ok(out)
}

/// Predicted velocities per segment, in `nu` layout.
pub fn predict_velocities(model: &Nets, segments: &[&PlaySegment], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(segments.len());
    for r in batches(segments.len(), batch) {
        out.extend(model.predict_velocities(&segments[r])?);
    }
    Ok(out)
}

/// Pooled play embeddings with their labels, one row per segment.
pub fn export_embeddings(
    model: &Nets,
    segments: &[&PlaySegment],
    labels: &BTreeMap<String, PlayClass>,
    batch: usize,
) -> Result<Vec<EmbeddingRow>> {
    if model.head != HeadKind::Classification {
        return Err(Error::InvalidArgument(
            "embeddings need a classification-head checkpoint".into(),
        ));
    }
    let mut out = Vec::with_capacity(segments.len());
    for r in batches(segments.len(), batch) {
        let emb = model.pooled_embeddings(&segments[r.clone()])?;
        for (s, values) in segments[r].iter().zip(emb) {
            out.push(EmbeddingRow {
                segment_id: s.segment_id.clone(),
                label: labels.get(&s.segment_id).copied(),
                values,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nets_core::segment::Provenance;

    fn seg(id: usize, possession: usize) -> PlaySegment {
        PlaySegment {
            segment_id: format!("s{id}"),
            provenance: Provenance {
                game_id: "g".into(),
                event_id: format!("e{possession}"),
                possession_start: 0,
                start_step: 0,
                start_frame: 0,
            },
            dt: 0.12,
            steps: 1,
            horizon: 0,
            object_ids: Vec::new(),
            tau: Vec::new(),
            ball_z: Vec::new(),
            nu: None,
        }
    }

    fn sizes(s: &DatasetSplit) -> (usize, usize, usize) {
        (s.train.len(), s.validation.len(), s.test.len())
    }

    #[test]
    fn split_sizes_by_largest_remainder() {
        let hundred: Vec<_> = (0..100).map(|i| seg(i, i)).collect();
        assert_eq!(sizes(&make_splits(&hundred, 1, SplitBy::Segment).unwrap()), (80, 10, 10));
        assert_eq!(sizes(&make_splits(&hundred, 1, SplitBy::Possession).unwrap()), (80, 10, 10));
        let more: Vec<_> = (0..101).map(|i| seg(i, i)).collect();
        assert_eq!(sizes(&make_splits(&more, 1, SplitBy::Segment).unwrap()), (81, 10, 10));
        assert!(make_splits(&hundred[..9], 1, SplitBy::Segment).is_err());
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let segs: Vec<_> = (0..57).map(|i| seg(i, i / 3)).collect();
        let a = make_splits(&segs, 4, SplitBy::Possession).unwrap();
        assert_eq!(a, make_splits(&segs, 4, SplitBy::Possession).unwrap());
        assert_ne!(a, make_splits(&segs, 5, SplitBy::Possession).unwrap());
        let mut all: Vec<String> = a.train.iter().chain(&a.validation).chain(&a.test).cloned().collect();
        all.sort();
        let mut ids: Vec<String> = segs.iter().map(|s| s.segment_id.clone()).collect();
        ids.sort();
        assert_eq!(all, ids);
        // possessions are not split across parts
        let part = |id: &String| {
            if a.train.contains(id) {
                0
            } else if a.validation.contains(id) {
                1
            } else {
                2
            }
        };
        for s in &segs {
            let first = &segs[(s.segment_id[1..].parse::<usize>().unwrap() / 3) * 3];
            assert_eq!(part(&s.segment_id), part(&first.segment_id));
        }
        let (tr, va, te) = sizes(&a);
        assert!(va.abs_diff(6) <= 3 && te.abs_diff(6) <= 3 && tr + va + te == 57);
    }

    fn items(p: usize, h: usize, o: usize) -> Vec<(String, PlayClass)> {
        let mut v = Vec::new();
        for (n, c) in [(p, PlayClass::PickAndRoll), (h, PlayClass::Handoff), (o, PlayClass::Other)] {
            for i in 0..n {
                v.push((format!("{c}{i}"), c));
            }
        }
        v
    }

    #[test]
    fn balancing_matches_pick_and_roll_count() {
        let b = balance_classes(&items(10, 5, 100), 3);
        let count = |c| b.iter().filter(|(_, l)| *l == c).count();
        assert_eq!(
            (count(PlayClass::Other), count(PlayClass::PickAndRoll), count(PlayClass::Handoff)),
            (10, 10, 5)
        );
        let unique: BTreeSet<&String> = b.iter().map(|(id, _)| id).collect();
        assert_eq!(unique.len(), b.len());
        let few = items(10, 5, 7);
        assert_eq!(balance_classes(&few, 3), few);
    }

    #[test]
    fn weights_are_inverse_frequency() {
        let labels: Vec<usize> = [vec![0; 45], vec![1; 15], vec![2; 45]].concat();
        let w = class_weights(&labels, 3);
        let n = 105.0;
        assert_eq!(w, vec![n / 135.0, n / 45.0, n / 135.0]);
        // the per-sample mean weight is one
        let mean = labels.iter().map(|&y| w[y]).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annotation_queue_rotates() {
        let weak: BTreeMap<String, PlayClass> = items(4, 4, 4).into_iter().collect();
        let (q, warn) = sample_for_annotation(&weak, 2, 9);
        assert!(warn.is_empty());
        let classes: Vec<PlayClass> = q.iter().map(|id| weak[id]).collect();
        use PlayClass::*;
        assert_eq!(classes, vec![PickAndRoll, Handoff, Other, PickAndRoll, Handoff, Other]);
        assert_eq!(sample_for_annotation(&weak, 2, 9).0, q);
        let (short, warn) = sample_for_annotation(&items(4, 1, 4).into_iter().collect(), 3, 9);
        assert_eq!(short.len(), 7);
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn missing_labels_are_listed() {
        let labels: BTreeMap<String, PlayClass> = [("a".to_string(), PlayClass::Other)].into();
        let err = attach_labels(&["a".into(), "b".into(), "c".into()], &labels).unwrap_err().to_string();
        assert!(err.contains("b, c"), "{err}");
    }

    #[test]
    fn run_config_is_validated() {
        let mut c = TrainRunConfig::desk(Stage::Pretrain);
        c.validate().unwrap();
        c.patience = 0;
        assert!(c.validate().is_err());
        c.patience = 1;
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
