use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use occode::analysis::{
    draw_review_sample, export_embeddings, kernel_trend, per_code_performance, score_review, ses_regression,
    write_per_code_csv, ReviewCandidate, ReviewSample,
};
use occode::calibrate::{
    calibrate_per_language, compute_metrics, language_info_table, set_predictions, Metric, PredictionMatrix,
    ThresholdTable, POOLED,
};
use occode::hisco::{HiscamTable, HiscoCode, LabelSpace};
use occode::ingest::{
    clean_dataset, normalize_text, read_raw_rows, split_dataset, synthesize_combinations, CleanDataset, Transliteration,
};
use occode::nn::{finetune, load_checkpoint, predict, save_checkpoint, train_with_log, Checkpoint, EpochLog};
use occode::textenc::LanguageTag;
use serde_json::json;

use crate::config::{existing, RunConfig};
use crate::error::{CliError, Result};
use crate::output::Outputs;
use crate::{Cli, Command, ThresholdArgs};

const FALLBACK_THRESHOLD: f64 = 0.5;

pub fn run(cli: Cli, out: &mut Outputs) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(d) = cli.out_dir {
        cfg.paths.output_dir = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cfg = cfg.resolve()?;
    match cli.command {
        Command::Prepare(a) => prepare(&cfg, a, out),
        Command::Train(a) => train(cfg, a, out),
        Command::Calibrate(a) => calibrate(&cfg, a, out),
        Command::Predict(a) => predict_cmd(&cfg, a, out),
        Command::Evaluate(a) => evaluate(&cfg, a, out),
        Command::Embed(a) => embed(&cfg, a, out),
        Command::Finetune(a) => finetune_cmd(cfg, a, out),
        Command::VerifyDraw(a) => verify_draw(&cfg, a, out),
        Command::VerifyScore(a) => verify_score(&cfg, a, out),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn transliteration(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<Transliteration> {
    match flag.or_else(|| cfg.paths.transliteration.clone()) {
        None => Ok(Transliteration::default()),
        Some(p) => {
            let p = existing(Some(p), "transliteration table")?;
            Transliteration::from_reader(open(&p)?).map_err(|e| CliError::from(e).context(p.display()))
        }
    }
}

fn label_space(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<LabelSpace> {
    let p = existing(flag.or_else(|| cfg.paths.label_space.clone()), "label space")?;
    Ok(LabelSpace::from_file(&p)?)
}

fn checkpoint(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<Checkpoint> {
    let p = existing(Some(flag.unwrap_or_else(|| cfg.checkpoint_path())), "checkpoint")?;
    load_checkpoint(&p).map_err(|e| CliError::from(e).context(p.display()))
}

fn dataset(path: &Path, space: &LabelSpace) -> Result<CleanDataset> {
    CleanDataset::read_csv(open(path)?, space).map_err(|e| CliError::from(e).context(path.display()))
}

fn dataset_arg(cfg: &RunConfig, flag: Option<PathBuf>, default: &str, space: &LabelSpace) -> Result<CleanDataset> {
    let p = existing(Some(flag.unwrap_or_else(|| cfg.out(default))), "dataset")?;
    dataset(&p, space)
}

fn write_dataset(out: &mut Outputs, path: &Path, ds: &CleanDataset) -> Result<()> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    out.write(path, buf)
}

// ------------------------------------------------------------------ prepare

fn prepare(cfg: &RunConfig, a: crate::PrepareArgs, out: &mut Outputs) -> Result<()> {
    let space = label_space(cfg, a.label_space)?;
    let table = transliteration(cfg, a.transliteration)?;
    let data = existing(a.data.or_else(|| cfg.paths.data.clone()), "raw data")?;
    let rows = read_raw_rows(open(&data)?).map_err(|e| CliError::from(e).context(data.display()))?;
    let clean = clean_dataset(&rows, &space, &table);
    let (mut train, val, test) = split_dataset(&clean, &cfg.split)?;

    // Combinations are built from training records only, so no synthetic
    // record mixes descriptions that ended up in different parts.
    let eligible = CleanDataset::from_records(
        train
            .records
            .iter()
            .filter(|r| cfg.combine_sources.is_empty() || cfg.combine_sources.contains(&r.source))
            .cloned()
            .collect(),
    );
    let combined = synthesize_combinations(&eligible, &cfg.combination)?;
    let synthetic = combined.records.len() - eligible.len();
    train.records.extend(combined.records.into_iter().skip(eligible.len()));

    write_dataset(out, &cfg.out("train.csv"), &train)?;
    write_dataset(out, &cfg.out("val.csv"), &val)?;
    write_dataset(out, &cfg.out("test.csv"), &test)?;
    let dropped: BTreeMap<String, usize> = clean
        .provenance
        .iter()
        .map(|(k, v)| (serde_json::to_value(k).unwrap().as_str().unwrap().to_string(), *v))
        .collect();
    let report = json!({
        "input_rows": rows.len(),
        "kept": clean.len(),
        "dropped": dropped,
        "synthetic": synthetic,
        "train": train.len(),
        "val": val.len(),
        "test": test.len(),
    });
    out.write_json(&cfg.out("provenance.json"), &report)?;
    println!(
        "kept={} dropped={} synthetic={} train={} val={} test={}",
        clean.len(),
        clean.dropped(),
        synthetic,
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

// ------------------------------------------------------------------ train / finetune

fn log_lines(log: &[EpochLog]) -> String {
    log.iter().map(|e| format!("{e}\n")).collect()
}

fn train(mut cfg: RunConfig, a: crate::TrainArgs, out: &mut Outputs) -> Result<()> {
    let space = label_space(&cfg, a.label_space)?;
    let train_ds = dataset_arg(&cfg, a.train_data, "train.csv", &space)?;
    let val_ds = dataset_arg(&cfg, a.val_data, "val.csv", &space)?;
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.train.validate()?;
    let ckpt_path = a.checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
    out.claim(&ckpt_path)?;
    cfg.train.checkpoint_path = Some(ckpt_path.clone());
    cfg.model.label_count = space.len();

    let outcome = train_with_log(&train_ds, &val_ds, &space, &cfg.model, &cfg.train, |e| println!("{e}"))?;
    save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
    out.write(&cfg.out("train_log.txt"), log_lines(&outcome.log))
}

fn finetune_cmd(mut cfg: RunConfig, a: crate::FinetuneArgs, out: &mut Outputs) -> Result<()> {
    let base = checkpoint(&cfg, a.checkpoint)?;
    let data = existing(Some(a.data), "finetuning data")?;
    let new = dataset(&data, &base.labels)?;
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.train.validate()?;
    let dest = a.output.unwrap_or_else(|| cfg.out("finetuned.occn"));
    out.claim(&dest)?;
    cfg.train.checkpoint_path = Some(dest.clone());
    let outcome = finetune(&base, &new, &cfg.train, |e| println!("{e}"))?;
    save_checkpoint(&outcome.checkpoint, &dest)?;
    out.write(&cfg.out("finetune_log.txt"), log_lines(&outcome.log))
}

// ------------------------------------------------------------------ calibrate

fn calibrate(cfg: &RunConfig, a: crate::CalibrateArgs, out: &mut Outputs) -> Result<()> {
    let table = if let Some(p) = a.predictions {
        let p = existing(Some(p), "prediction matrix")?;
        let (pm, _) = PredictionMatrix::read_csv(open(&p)?).map_err(|e| CliError::from(e).context(p.display()))?;
        calibrate_per_language(&pm, &cfg.grid)
    } else {
        let ckpt = checkpoint(cfg, a.checkpoint)?;
        let ds = dataset_arg(cfg, a.data, "val.csv", &ckpt.labels)?;
        let with_lang = PredictionMatrix::from_checkpoint(&ckpt, &ds, None)?;
        let without = PredictionMatrix::from_checkpoint(&ckpt, &ds, Some(LanguageTag::Unk))?;
        let mut buf = Vec::new();
        with_lang.write_csv(&mut buf, &ckpt.labels)?;
        out.write(&cfg.out("prediction_matrix.csv"), buf)?;
        let info = language_info_table(&with_lang, &without, &cfg.grid);
        out.write_json(&cfg.out("language_info.json"), &info.to_json())?;
        out.write(&cfg.out("language_info.txt"), info.render())?;
        calibrate_per_language(&with_lang, &cfg.grid)
    };
    out.write_json(&cfg.out("thresholds.json"), &table.to_json())?;
    let text = table.render();
    out.write(&cfg.out("thresholds.txt"), &text)?;
    print!("{text}");
    Ok(())
}

// ------------------------------------------------------------------ thresholds and prediction inputs

fn resolve_threshold(cfg: &RunConfig, a: &ThresholdArgs) -> Result<f64> {
    let t = if let Some(t) = a.threshold {
        t
    } else {
        let path = match &a.calibration {
            Some(p) => Some(existing(Some(p.clone()), "calibration file")?),
            None => Some(cfg.out("thresholds.json")).filter(|p| p.exists()),
        };
        match path {
            None => FALLBACK_THRESHOLD,
            Some(p) => {
                let v: serde_json::Value =
                    serde_json::from_reader(open(&p)?).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                let table = ThresholdTable::from_json(&v).map_err(|e| CliError::from(e).context(p.display()))?;
                table
                    .get(Metric::F1, POOLED)
                    .and_then(|r| r.threshold)
                    .ok_or_else(|| CliError::data(format!("{} has no pooled F1 threshold", p.display())))?
            }
        }
    };
    if !(t > 0.0 && t < 1.0) {
        return Err(CliError::config(format!("threshold {t} outside (0,1)")));
    }
    Ok(t)
}

struct InputRow {
    id: String,
    text: String,
    lang: LanguageTag,
}

/// Reads `occ_text` (or `text`), `lang` and an optional `id`; texts are normalized.
fn read_inputs(path: &Path, table: &Transliteration) -> Result<Vec<InputRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let text_col = col("occ_text")
        .or_else(|| col("text"))
        .ok_or_else(|| CliError::data(format!("{}: no occ_text or text column", path.display())))?;
    let lang_col = col("lang").ok_or_else(|| CliError::data(format!("{}: no lang column", path.display())))?;
    let id_col = col("id");
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let lang: LanguageTag =
            rec[lang_col].parse().map_err(|e| CliError::data(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(InputRow {
            id: id_col.map_or_else(|| i.to_string(), |c| rec[c].to_string()),
            text: normalize_text(&rec[text_col], table),
            lang,
        })
    }
    Ok(rows)
}

fn candidates(ckpt: &Checkpoint, rows: &[InputRow], threshold: f64, fallback: bool) -> Result<Vec<ReviewCandidate>> {
    let inputs: Vec<_> = rows.iter().map(|r| (r.lang, r.text.clone())).collect();
    let preds = predict(ckpt, &inputs, threshold, fallback)?;
    Ok(rows
        .iter()
        .zip(preds)
        .map(|(r, p)| ReviewCandidate {
            id: r.id.clone(),
            text: r.text.clone(),
            lang: r.lang,
            codes: p.codes,
            probs: p.probs,
        })
        .collect())
}

fn join<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
    v.iter().map(f).collect::<Vec<_>>().join(";")
}

fn predict_cmd(cfg: &RunConfig, a: crate::PredictArgs, out: &mut Outputs) -> Result<()> {
    let ckpt = checkpoint(cfg, a.checkpoint)?;
    let threshold = resolve_threshold(cfg, &a.threshold)?;
    let table = transliteration(cfg, a.transliteration)?;
    let input = existing(Some(a.input), "input")?;
    let rows = read_inputs(&input, &table)?;
    let cands = candidates(&ckpt, &rows, threshold, a.fallback_top1)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "text", "lang", "hisco_codes", "probs"])?;
    for c in &cands {
        w.write_record([
            c.id.clone(),
            c.text.clone(),
            c.lang.to_string(),
            join(&c.codes, HiscoCode::to_string),
            join(&c.probs, |p| format!("{p:.6}")),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    out.write(&a.output.unwrap_or_else(|| cfg.out("predictions.csv")), bytes)?;
    println!("threshold={threshold} rows={}", cands.len());
    Ok(())
}

// ------------------------------------------------------------------ evaluate

fn evaluate(cfg: &RunConfig, a: crate::EvaluateArgs, out: &mut Outputs) -> Result<()> {
    let ckpt = checkpoint(cfg, a.checkpoint)?;
    let threshold = resolve_threshold(cfg, &a.threshold)?;
    let test = dataset_arg(cfg, a.data, "test.csv", &ckpt.labels)?;
    let train = dataset_arg(cfg, a.train_data, "train.csv", &ckpt.labels)?;
    let hiscam = match a.hiscam.or_else(|| cfg.paths.hiscam.clone()) {
        Some(p) => Some(HiscamTable::from_file(existing(Some(p), "HISCAM table")?)?),
        None => None,
    };

    let pm = PredictionMatrix::from_checkpoint(&ckpt, &test, None)?;
    let report = compute_metrics(&set_predictions(pm.probs(), threshold), pm.targets())?;
    out.write_json(&cfg.out("metrics.json"), &json!({ "threshold": threshold, "metrics": report }))?;

    let mut counts: BTreeMap<HiscoCode, usize> = BTreeMap::new();
    for r in &train.records {
        for c in r.targets() {
            *counts.entry(*c).or_insert(0) += 1;
        }
    }
    let stats = per_code_performance(&pm, &ckpt.labels, threshold, &counts)?;
    let mut buf = Vec::new();
    write_per_code_csv(&stats, &mut buf)?;
    out.write(&cfg.out("per_code.csv"), buf)?;

    // One smoothed curve per metric over log training frequency.
    let mut trends = serde_json::Map::new();
    for m in Metric::ALL {
        let (x, y): (Vec<f64>, Vec<f64>) = stats
            .iter()
            .filter(|s| s.n_train > 0)
            .filter_map(|s| {
                let v = match m {
                    Metric::Accuracy => s.accuracy,
                    Metric::Precision => s.precision,
                    Metric::Recall => s.recall,
                    Metric::F1 => s.f1,
                };
                v.map(|v| ((s.n_train as f64).ln(), v))
            })
            .unzip();
        let value = match kernel_trend(&x, &y) {
            Ok(curve) => serde_json::to_value(curve).expect("serializable"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        trends.insert(m.key().to_string(), value);
    }
    out.write_json(&cfg.out("trend.json"), &trends)?;

    if let Some(h) = hiscam {
        let ses = ses_regression(&stats, &h);
        out.write(&cfg.out("ses_report.txt"), ses.render())?;
        out.write_json(&cfg.out("ses_report.json"), &ses)?;
    }
    println!(
        "threshold={threshold} n={} accuracy={:.6} precision={:.6} recall={:.6} f1={:.6}",
        report.n, report.accuracy, report.precision, report.recall, report.f1
    );
    Ok(())
}

// ------------------------------------------------------------------ embed

fn embed(cfg: &RunConfig, a: crate::EmbedArgs, out: &mut Outputs) -> Result<()> {
    let ckpt = checkpoint(cfg, a.checkpoint)?;
    let ds = dataset_arg(cfg, a.data, "test.csv", &ckpt.labels)?;
    let mut buf = Vec::new();
    let emb = export_embeddings(&ckpt, &ds.records, a.pca, &mut buf)?;
    out.write(&a.output.unwrap_or_else(|| cfg.out("embeddings.csv")), buf)?;
    println!("rows={} dim={}", emb.nrows(), emb.ncols());
    Ok(())
}

// ------------------------------------------------------------------ review

fn verify_draw(cfg: &RunConfig, a: crate::VerifyDrawArgs, out: &mut Outputs) -> Result<()> {
    let ckpt = checkpoint(cfg, a.checkpoint)?;
    let threshold = resolve_threshold(cfg, &a.threshold)?;
    let table = transliteration(cfg, a.transliteration)?;
    let input = existing(Some(a.input), "input")?;
    let rows = read_inputs(&input, &table)?;
    let cands = candidates(&ckpt, &rows, threshold, a.fallback_top1)?;
    let sample = draw_review_sample(&cands, a.n, cfg.seed)?;
    let mut buf = Vec::new();
    sample.write_csv(&mut buf)?;
    out.write(&a.output.unwrap_or_else(|| cfg.out("review.csv")), buf)?;
    println!("sampled={} population={}", sample.rows.len(), cands.len());
    Ok(())
}

fn verify_score(cfg: &RunConfig, a: crate::VerifyScoreArgs, out: &mut Outputs) -> Result<()> {
    let p = existing(Some(a.review), "review file")?;
    let sample = ReviewSample::read_csv(open(&p)?)?;
    let score = score_review(&sample)?;
    out.write_json(&a.output.unwrap_or_else(|| cfg.out("review_score.json")), &score)?;
    print!("{score}");
    Ok(())
}
