use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nets_core::error::{Error, Result};
use nets_core::ingest::{ingest, write_frames_file, InputFormat};
use nets_core::labels::{label_map, read_labels, write_labels, LabelRecord, LabelSource, PlayClass};
use nets_core::metrics::{ade_fde, confusion, write_embeddings_csv, MetricsReport};
use nets_core::possession::PossessionConfig;
use nets_core::segment::{preprocess, read_store, write_store, DatasetSplit, PipelineConfig, PlaySegment, WindowConfig};
use nets_core::synth::{make_corpus, SynthCounts};
use nets_core::weak::{label_store, Thresholds};
use nets_model::checkpoint;
use nets_model::train::{
    attach_labels, balance_classes, export_embeddings, finetune, make_splits, predict_classes, predict_velocities,
    pretrain, Control, Labeled, SplitBy, Stage, TrainRunConfig,
};
use nets_model::{HeadKind, Nets, NetsConfig};

use crate::{
    Command, EvaluateArgs, ExportArgs, FinetuneArgs, FormatArg, IngestArgs, PretrainArgs, SegmentArgs, SplitByArg,
    StageArg, SynthArgs, TrainArgs, WeaklabelArgs,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => run_ingest(&a),
        Command::Segment(a) => run_segment(&a),
        Command::Weaklabel(a) => run_weaklabel(&a),
        Command::Synth(a) => run_synth(&a),
        Command::Pretrain(a) => run_pretrain(&a),
        Command::Finetune(a) => run_finetune(&a),
        Command::Evaluate(a) => run_evaluate(&a),
        Command::ExportEmbeddings(a) => run_export(&a),
        Command::AnnotateServe(a) => crate::server::serve_blocking(&a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_ingest(a: &IngestArgs) -> Result<()> {
    let format = match a.format {
        Some(FormatArg::Csv) => InputFormat::Csv,
        Some(FormatArg::Jsonl) => InputFormat::Jsonl,
        None => InputFormat::from_path(&a.input),
    };
    let report = ingest(&a.input, format)?;
    write_frames_file(&a.output, &report.frames, InputFormat::Jsonl)?;
    if let Some(p) = &a.rejects {
        let mut w = create(p)?;
        writeln!(w, "line,reason").map_err(|e| Error::io(p, e))?;
        for r in &report.rejected {
            writeln!(w, "{},\"{}\"", r.line, r.reason.replace('"', "\"\"")).map_err(|e| Error::io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    log::info!("{} frames kept, {} rows rejected", report.frames.len(), report.rejected.len());
    Ok(())
}

fn run_segment(a: &SegmentArgs) -> Result<()> {
    if a.downsample == 0 || a.steps == 0 || !(a.min_possession_s >= 0.0) {
        return Err(Error::InvalidArgument("downsample and steps must be positive".into()));
    }
    let report = ingest(&a.frames, InputFormat::from_path(&a.frames))?;
    let possession = PossessionConfig {
        min_duration_s: a.min_possession_s,
        ..PossessionConfig::default()
    };
    let cfg = PipelineConfig {
        possession,
        downsample: a.downsample,
        window: WindowConfig {
            steps: a.steps,
            horizon: a.horizon,
            dt: possession.raw_dt * a.downsample as f64,
        },
    };
    let segments = preprocess(&report.frames, &cfg)?;
    write_store(&a.output, &segments)?;
    let with_future = segments.iter().filter(|s| s.has_future()).count();
    log::info!("{} segments written, {with_future} with a future", segments.len());
    Ok(())
}

fn run_weaklabel(a: &WeaklabelArgs) -> Result<()> {
    let th = match &a.thresholds {
        Some(p) => Thresholds::from_file(p)?,
        None => Thresholds::default(),
    };
    let segments = read_store(&a.segments)?;
    let out = label_store(&segments, &th);
    write_labels(&a.output, &out.labels)?;
    let audit = a.audit.clone().unwrap_or_else(|| a.output.with_extension("audit.csv"));
    out.write_audit_csv(create(&audit)?)?;
    for (k, v) in out.counts() {
        log::info!("{k}: {v}");
    }
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let counts = SynthCounts::new(a.pick_and_roll, a.handoff, a.spread, a.random_walk);
    let corpus = make_corpus(&counts, a.sigma, a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_frames_file(&a.out_dir.join("frames.jsonl"), &corpus.frames, InputFormat::Jsonl)?;
    write_store(&a.out_dir.join("segments.jsonl"), &corpus.segments)?;
    write_labels(&a.out_dir.join("truth.jsonl"), &corpus.truth)?;
    log::info!("{} plays, {} frames", corpus.segments.len(), corpus.frames.len());
    Ok(())
}

fn network_config(t: &TrainArgs) -> Result<NetsConfig> {
    let mut cfg = match &t.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => NetsConfig::preset(&t.preset)?,
    };
    cfg.seed = t.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(t: &TrainArgs, stage: Stage, cfg: &NetsConfig) -> Result<TrainRunConfig> {
    let mut run = if cfg.d_h <= NetsConfig::desk().d_h {
        TrainRunConfig::desk(stage)
    } else {
        TrainRunConfig::new(stage)
    };
    run.seed = t.seed;
    if let Some(p) = t.patience {
        run.patience = p;
    }
    if let Some(m) = t.max_epochs {
        run.max_epochs = m;
    }
    if let Some(lr) = t.lr {
        run.adam.learning_rate = lr;
    }
    if let Some(b) = t.batch {
        run.batch_size = b;
    }
    run.validate()?;
    Ok(run)
}

struct Prepared {
    segments: Vec<PlaySegment>,
    split: DatasetSplit,
    cfg: NetsConfig,
    run: TrainRunConfig,
    model: Option<Nets>,
}

fn prepare(t: &TrainArgs, stage: Stage) -> Result<Prepared> {
    let cfg = network_config(t)?;
    let run = run_config(t, stage, &cfg)?;
    let segments = read_store(&t.segments)?;
    let by = match t.split_by {
        SplitByArg::Possession => SplitBy::Possession,
        SplitByArg::Segment => SplitBy::Segment,
    };
    let split = make_splits(&segments, t.split_seed, by)?;
    if let Some(p) = &t.split_out {
        write_json(p, &split)?;
    }
    let model = match &t.from_checkpoint {
        Some(p) => Some(checkpoint::load_compatible(p, &cfg)?),
        None => None,
    };
    Ok(Prepared {
        segments,
        split,
        cfg,
        run,
        model,
    })
}

fn pick<'a>(by_id: &BTreeMap<&str, &'a PlaySegment>, ids: &[String]) -> Vec<&'a PlaySegment> {
    ids.iter().map(|id| by_id[id.as_str()]).collect()
}

fn index(segments: &[PlaySegment]) -> BTreeMap<&str, &PlaySegment> {
    segments.iter().map(|s| (s.segment_id.as_str(), s)).collect()
}

fn progress(e: &nets_model::train::EpochRecord, _: &Nets) -> Control {
    log::debug!("epoch {} done after {:.1} s", e.epoch, e.elapsed_s);
    Control::Continue
}

fn finish(t: &TrainArgs, model: &Nets, log: &nets_model::train::RunLog) -> Result<()> {
    checkpoint::save(&t.out, model)?;
    let log_path = t.log.clone().unwrap_or_else(|| with_suffix(&t.out, ".log.jsonl"));
    log.write_jsonl(&log_path)?;
    let best = log.best();
    log::info!(
        "stopped after epoch {}, best epoch {} with validation loss {:.6}",
        log.stop_epoch,
        log.best_epoch,
        best.validation_loss
    );
    Ok(())
}

fn run_pretrain(a: &PretrainArgs) -> Result<()> {
    let t = &a.train;
    let p = prepare(t, Stage::Pretrain)?;
    let by_id = index(&p.segments);
    let (train, val) = (pick(&by_id, &p.split.train), pick(&by_id, &p.split.validation));
    let mut model = match p.model {
        Some(m) => m,
        None => Nets::new(p.cfg, HeadKind::Trajectory)?,
    };
    let log = pretrain(&mut model, &train, &val, &p.run, &mut progress)?;
    finish(t, &model, &log)
}

/// Labels for `ids`: every id must have one unless `labeled_only`, which
/// drops the unlabeled ones.
fn labeled_ids(
    ids: &[String],
    labels: &BTreeMap<String, PlayClass>,
    labeled_only: bool,
) -> Result<Vec<(String, PlayClass)>> {
    let ids: Vec<String> = if labeled_only {
        ids.iter().filter(|id| labels.contains_key(*id)).cloned().collect()
    } else {
        ids.to_vec()
    };
    let classes = attach_labels(&ids, labels)?;
    Ok(ids.into_iter().zip(classes).collect())
}

fn read_label_map(path: &Path) -> Result<BTreeMap<String, PlayClass>> {
    label_map(&read_labels(path)?)
}

fn run_finetune(a: &FinetuneArgs) -> Result<()> {
    let t = &a.train;
    let stage = match a.stage {
        StageArg::FinetuneWeak => Stage::FinetuneWeak,
        StageArg::FinetuneManual => Stage::FinetuneManual,
    };
    let mut p = prepare(t, stage)?;
    p.run.alpha = a.alpha.clone();
    p.run.validate()?;
    let labels = read_label_map(&a.labels)?;
    let val_labels = match &a.val_labels {
        Some(v) => read_label_map(v)?,
        None => labels.clone(),
    };
    let mut train = labeled_ids(&p.split.train, &labels, a.labeled_only)?;
    if !a.no_balance {
        train = balance_classes(&train, t.seed);
    }
    let val = labeled_ids(&p.split.validation, &val_labels, a.labeled_only)?;
    let by_id = index(&p.segments);
    let as_set = |items: &[(String, PlayClass)]| -> Result<Labeled<'_>> {
        let ids: Vec<String> = items.iter().map(|(id, _)| id.clone()).collect();
        let segs = pick(&by_id, &ids);
        Labeled::new(segs, items.iter().map(|(_, c)| c.index()).collect())
    };
    let (train_set, val_set) = (as_set(&train)?, as_set(&val)?);
    log::info!("{} training and {} validation segments", train_set.len(), val_set.len());
    let mut model = match p.model {
        Some(m) => m,
        None => Nets::new(p.cfg, HeadKind::Classification)?,
    };
    let log = finetune(&mut model, &train_set, &val_set, &p.run, &mut progress)?;
    finish(t, &model, &log)
}

fn emit(report: &MetricsReport, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("metrics serialize");
    println!("{text}");
    if let Some(p) = output {
        fs::write(p, text + "\n").map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<()> {
    if let Some(pred) = &a.pred {
        let labels = a
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--pred needs --labels".into()))?;
        let m = confusion(&read_label_map(labels)?, &read_label_map(pred)?)?;
        return emit(&MetricsReport::classification(&m), a.output.as_deref());
    }
    let (Some(ckpt), Some(store)) = (&a.checkpoint, &a.segments) else {
        return Err(Error::InvalidArgument(
            "give either --labels with --pred, or --checkpoint with --segments".into(),
        ));
    };
    let model = checkpoint::load(ckpt)?;
    let mut segments = read_store(store)?;
    if let Some(split) = &a.split {
        let text = fs::read_to_string(split).map_err(|e| Error::io(split, e))?;
        let split: DatasetSplit =
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", split.display())))?;
        let keep: BTreeSet<&String> = split.test.iter().collect();
        segments.retain(|s| keep.contains(&s.segment_id));
    }
    match model.head {
        HeadKind::Trajectory => {
            segments.retain(|s| s.has_future() && s.horizon == model.config.horizon);
            if segments.is_empty() {
                return Err(Error::InvalidArgument("no segment has a matching future to evaluate".into()));
            }
            let refs: Vec<&PlaySegment> = segments.iter().collect();
            let pred = predict_velocities(&model, &refs, 256)?;
            let score = ade_fde(&segments, &pred, a.roles.into())?;
            emit(&MetricsReport::trajectory(&score), a.output.as_deref())
        }
        HeadKind::Classification => {
            let refs: Vec<&PlaySegment> = segments.iter().collect();
            let pred = predict_classes(&model, &refs, 256)?;
            let predicted: Vec<LabelRecord> = segments
                .iter()
                .zip(&pred)
                .map(|(s, &c)| LabelRecord {
                    segment_id: s.segment_id.clone(),
                    label: PlayClass::ALL[c],
                    source: LabelSource::Model,
                    key_frame: None,
                    rule_version: None,
                    annotator: None,
                    timestamp: None,
                })
                .collect();
            if let Some(p) = &a.pred_out {
                write_labels(p, &predicted)?;
            }
            match &a.labels {
                Some(l) => {
                    let truth = read_label_map(l)?;
                    let ids: Vec<String> = segments.iter().map(|s| s.segment_id.clone()).collect();
                    let truth: BTreeMap<String, PlayClass> = ids.iter().cloned().zip(attach_labels(&ids, &truth)?).collect();
                    let m = confusion(&truth, &label_map(&predicted)?)?;
                    emit(&MetricsReport::classification(&m), a.output.as_deref())
                }
                None if a.pred_out.is_some() => Ok(()),
                None => Err(Error::InvalidArgument(
                    "a classification checkpoint needs --labels or --pred-out".into(),
                )),
            }
        }
    }
}

fn run_export(a: &ExportArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let segments = read_store(&a.segments)?;
    let labels = match &a.labels {
        Some(p) => read_label_map(p)?,
        None => BTreeMap::new(),
    };
    let refs: Vec<&PlaySegment> = segments.iter().collect();
    let rows = export_embeddings(&model, &refs, &labels, 256)?;
    let mut w = create(&a.output)?;
    write_embeddings_csv(&mut w, &rows)?;
    w.flush().map_err(|e| Error::io(&a.output, e))
}
