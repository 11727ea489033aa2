#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use ndarray::Array2;
use occode::analysis::RegressionResult;
use occode::hisco::{HiscoCode, LabelSpace, OccupationRecord};
use occode::ingest::CleanDataset;
use occode::nn::{Mode, Model, ModelConfig, Parameters, TrainConfig};
use occode::rng;
use occode::textenc::{encode, AugmentConfig, EncodedInput, LanguageTag};
use rand::Rng;

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradCheck {
    pub config: ModelConfig,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Random tiny config: d = 8, one layer, three labels, max_len 16.
pub fn random_tiny_config(seed: u64) -> ModelConfig {
    let mut r = rng::seeded(seed);
    let pick = |r: &mut rng::Rng, xs: &[usize]| xs[r.random_range(0..xs.len())];
    ModelConfig {
        hidden_dim: 8,
        num_hashes: pick(&mut r, &[1, 2, 4]),
        hash_buckets: pick(&mut r, &[5, 8, 13]),
        downsample_rate: pick(&mut r, &[1, 2, 3, 4]),
        num_layers: 1,
        num_heads: pick(&mut r, &[1, 2, 4]),
        ffn_dim: pick(&mut r, &[4, 8, 16]),
        max_len: 16,
        dropout_p: if r.random_bool(0.5) { 0.0 } else { 0.2 },
        label_count: 3,
    }
}

/// Parameters drawn at a scale where every gradient is well away from zero.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> Parameters<f64> {
    let mut p = Parameters::<f64>::zeros(cfg);
    let mut r = rng::seeded(seed);
    let names = p.names();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        let scale_like = name.ends_with(".scale");
        for v in t.iter_mut() {
            let u: f64 = r.random_range(-0.5..0.5);
            *v = if scale_like { 1.0 + u } else { u };
        }
    }
    p
}

fn gradcheck_batch(cfg: &ModelConfig, seed: u64) -> (Vec<EncodedInput>, Array2<f64>) {
    let mut r = rng::seeded(seed ^ 0xBA7C);
    let texts = ["smith", "ag lab", "wever, öl", "mason and carter x"];
    let langs = [LanguageTag::En, LanguageTag::Unk, LanguageTag::Se, LanguageTag::Nl];
    let n = 3;
    let batch = (0..n)
        .map(|i| encode(langs[(i + seed as usize) % 4], texts[(i + 2 * seed as usize) % 4], cfg.max_len).unwrap())
        .collect();
    let y = Array2::from_shape_fn(
        (n, cfg.label_count),
        |(i, j)| if (i + j) % 2 == 0 || r.random_bool(0.3) { 1.0 } else { 0.0 },
    );
    (batch, y)
}

/// Central differences against the analytic gradient for every parameter.
pub fn gradient_check(seed: u64) -> GradCheck {
    let cfg = random_tiny_config(seed);
    let params = random_params(&cfg, seed.wrapping_add(1));
    let mut model = Model::new(cfg.clone(), params).unwrap();
    let (batch, y) = gradcheck_batch(&cfg, seed);
    let mode = Mode::Train { seed: seed.wrapping_mul(31) };
    let (_, grads) = model.backward(&batch, &y, mode).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, s)| (n, s.to_vec())).collect();

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (ti, (name, ga)) in analytic.iter().enumerate() {
        for (k, &a) in ga.iter().enumerate() {
            let orig = model.params.tensors_mut()[ti][k];
            model.params.tensors_mut()[ti][k] = orig + FD_STEP;
            let up = model.backward(&batch, &y, mode).unwrap().0;
            model.params.tensors_mut()[ti][k] = orig - FD_STEP;
            let down = model.backward(&batch, &y, mode).unwrap().0;
            model.params.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{k}] analytic {a:e} numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    GradCheck { config: cfg, checked, max_rel_err: worst.0, worst: worst.1 }
}

// ---------------------------------------------------------------- overfit fixture

pub const FIXTURE_WORDS: [&str; 20] = [
    "farmer", "smith", "weaver", "tailor", "miller", "baker", "mason", "carter", "sailor", "fisher", "butcher",
    "cooper", "joiner", "potter", "tanner", "glazier", "saddler", "brewer", "thatcher", "shepherd",
];

pub fn fixture_space() -> LabelSpace {
    let codes: Vec<HiscoCode> =
        (0..20).map(|i| HiscoCode::parse(&format!("{}{:04}", 1 + i % 9, 1000 + 37 * i)).unwrap()).collect();
    LabelSpace::new(codes).unwrap()
}

/// 180 single-label records (nine phrasings per label) and 20 two-label
/// records joining two occupations with "and". The text alone determines the
/// label set.
pub fn overfit_fixture() -> (LabelSpace, CleanDataset) {
    let space = fixture_space();
    let frames = ["{}", "the {}", "{} x", "a {}", "{} s", "old {}", "{} jr", "m {}", "{}s"];
    let langs = [LanguageTag::En, LanguageTag::Da, LanguageTag::Nl, LanguageTag::Se];
    let mut records = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        for (i, w) in FIXTURE_WORDS.iter().enumerate() {
            let text = frame.replace("{}", w);
            let code = space.code(i).unwrap();
            records.push(OccupationRecord::new(&text, langs[(i + f) % 4], vec![code], "fixture").unwrap());
        }
    }
    for i in 0..20 {
        let a = i;
        let b = (i * 7 + 3) % 20;
        let b = if b == a { (b + 1) % 20 } else { b };
        let text = format!("{} and {}", FIXTURE_WORDS[a], FIXTURE_WORDS[b]);
        let codes = vec![space.code(a).unwrap(), space.code(b).unwrap()];
        records.push(OccupationRecord::new(&text, LanguageTag::En, codes, "fixture").unwrap());
    }
    (space, CleanDataset::from_records(records))
}

pub const OVERFIT_EPOCHS: usize = 150;

/// Exact-match accuracy of the checkpoint on `ds` at 0.5.
pub fn fixture_accuracy(ckpt: &occode::Checkpoint, ds: &CleanDataset) -> f64 {
    let enc: Vec<_> = ds.records.iter().map(|r| encode(r.lang, &r.text, ckpt.config().max_len).unwrap()).collect();
    let probs = ckpt.model.forward(&enc, Mode::Eval).unwrap().probs;
    let targets: Vec<Vec<usize>> = ds.records.iter().map(|r| ckpt.labels.indices(r.targets()).unwrap()).collect();
    occode::nn::exact_match_accuracy(&probs, &targets, 0.5)
}

pub fn overfit_model_config() -> ModelConfig {
    ModelConfig { max_len: 32, dropout_p: 0.0, ..ModelConfig::desk(20) }
}

pub fn overfit_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: epochs,
        learning_rate: 2e-3,
        rng_seed: 11,
        augment: AugmentConfig::disabled(),
        p_lang_unknown: 0.0,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------- metric oracles

/// Random prediction matrix with N <= 50, L <= 10.
pub fn random_matrix(seed: u64) -> (Array2<f64>, Vec<Vec<usize>>) {
    let mut r = rng::seeded(seed);
    let n = r.random_range(1..=50);
    let l = r.random_range(1..=10);
    let probs = Array2::from_shape_fn((n, l), |_| {
        // Mix of generic values and values sitting exactly on grid points.
        if r.random_bool(0.2) {
            r.random_range(1..=99) as f64 / 100.0
        } else {
            r.random_range(1e-6..1.0 - 1e-6)
        }
    });
    let targets = (0..n)
        .map(|_| {
            let k = r.random_range(1..=l.min(3));
            let mut set = BTreeSet::new();
            while set.len() < k {
                set.insert(r.random_range(0..l));
            }
            set.into_iter().collect()
        })
        .collect();
    (probs, targets)
}

/// Per-element confusion counting: walks every (record, label) cell.
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub exact: usize,
    pub n: usize,
}

pub fn confusion(pred: &[Vec<usize>], targets: &[Vec<usize>], labels: usize) -> Confusion {
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0, exact: 0, n: pred.len() };
    for (p, t) in pred.iter().zip(targets) {
        let mut all_agree = true;
        for j in 0..labels {
            match (p.contains(&j), t.contains(&j)) {
                (true, true) => c.tp += 1,
                (true, false) => {
                    c.fp += 1;
                    all_agree = false;
                }
                (false, true) => {
                    c.fn_ += 1;
                    all_agree = false;
                }
                (false, false) => {}
            }
        }
        if all_agree {
            c.exact += 1;
        }
    }
    c
}

/// `(accuracy, precision, recall, f1)`, `None` when nothing was predicted.
pub fn oracle_metrics(c: &Confusion) -> Option<(f64, f64, f64, f64)> {
    if c.tp + c.fp == 0 {
        return None;
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Some((c.exact as f64 / c.n as f64, p, r, f))
}

pub fn threshold_sets(probs: &Array2<f64>, t: f64) -> Vec<Vec<usize>> {
    (0..probs.nrows()).map(|i| (0..probs.ncols()).filter(|&j| probs[[i, j]] >= t).collect()).collect()
}

/// Brute force over k/100, k = 1..=99; first maximum wins.
pub fn brute_force_search(probs: &Array2<f64>, targets: &[Vec<usize>], metric: usize) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for k in 1..=99u32 {
        let t = k as f64 / 100.0;
        let c = confusion(&threshold_sets(probs, t), targets, probs.ncols());
        let Some(m) = oracle_metrics(&c) else { continue };
        let v = [m.0, m.1, m.2, m.3][metric];
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((t, v)),
        }
    }
    best
}

// ---------------------------------------------------------------- regression oracle

/// Fixed 10-row fixture: (y, hiscam, log n).
pub fn regression_fixture() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hiscam = vec![48.2, 52.9, 55.1, 61.7, 44.0, 70.3, 58.8, 49.5, 66.0, 53.3];
    let logn = vec![2.3, 5.1, 3.7, 8.9, 1.1, 6.4, 4.0, 2.9, 7.7, 3.2];
    let y = vec![0.71, 0.88, 0.79, 0.97, 0.52, 0.93, 0.84, 0.69, 0.95, 0.80];
    (y, hiscam, logn)
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = cof[j][i] / det;
        }
    }
    out
}

/// Normal equations and the HC1 sandwich by explicit sums; regressors in the
/// given order with the intercept last. Returns (coefficients, standard errors).
pub fn ols_oracle(y: &[f64], cols: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let k = cols.len() + 1;
    let x = |i: usize, j: usize| if j < k - 1 { cols[j][i] } else { 1.0 };
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for i in 0..n {
        for a in 0..k {
            xty[a] += x(i, a) * y[i];
            for b in 0..k {
                xtx[a][b] += x(i, a) * x(i, b);
            }
        }
    }
    let inv: Vec<Vec<f64>> = match k {
        2 => inv2([[xtx[0][0], xtx[0][1]], [xtx[1][0], xtx[1][1]]]).iter().map(|r| r.to_vec()).collect(),
        3 => inv3([
            [xtx[0][0], xtx[0][1], xtx[0][2]],
            [xtx[1][0], xtx[1][1], xtx[1][2]],
            [xtx[2][0], xtx[2][1], xtx[2][2]],
        ])
        .iter()
        .map(|r| r.to_vec())
        .collect(),
        _ => unimplemented!(),
    };
    let beta: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a][b] * xty[b]).sum()).collect();
    let mut meat = vec![vec![0.0; k]; k];
    for i in 0..n {
        let e = y[i] - (0..k).map(|j| x(i, j) * beta[j]).sum::<f64>();
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += e * e * x(i, a) * x(i, b);
            }
        }
    }
    let mut se = Vec::new();
    for a in 0..k {
        let mut v = 0.0;
        for b in 0..k {
            for c in 0..k {
                v += inv[a][b] * meat[b][c] * inv[c][a];
            }
        }
        se.push((v * n as f64 / (n - k) as f64).sqrt());
    }
    (beta, se)
}

pub fn max_regression_gap(fit: &RegressionResult, beta: &[f64], se: &[f64]) -> f64 {
    let mut gap = 0.0f64;
    for j in 0..beta.len() {
        gap = gap.max((fit.coefficients[j] - beta[j]).abs());
        gap = gap.max((fit.std_errors[j] - se[j]).abs());
        gap = gap.max((fit.ci_low[j] - (beta[j] - 1.96 * se[j])).abs());
        gap = gap.max((fit.ci_high[j] - (beta[j] + 1.96 * se[j])).abs());
    }
    gap
}

// ---------------------------------------------------------------- binomial

/// Two-sided 99% normal-approximation interval for a binomial proportion.
pub fn binomial_ci99(p: f64, n: usize) -> (f64, f64) {
    let half = 2.5758 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

// ---------------------------------------------------------------- suites shared with the acceptance run

use occode::calibrate::{compute_metrics, grid_search_threshold, set_predictions, Grid, Metric, PredictionMatrix};

pub const METRIC_ORDER: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1];

pub fn matrix(seed: u64) -> PredictionMatrix {
    let (p, t) = random_matrix(seed);
    let n = p.nrows();
    PredictionMatrix::new(p, t, vec![LanguageTag::En; n]).unwrap()
}

/// Matrices (out of `count`) where grid search and brute force disagree on
/// any metric. Comparison is exact.
pub fn calibration_mismatches(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let pm = matrix(1000 + seed);
        for (mi, m) in METRIC_ORDER.iter().enumerate() {
            let got = grid_search_threshold(&pm, *m, &Grid::default()).ok();
            let want = brute_force_search(pm.probs(), pm.targets(), mi);
            if got != want {
                bad.push(format!("seed {seed} {m}: {got:?} vs {want:?}"));
            }
        }
    }
    bad
}

/// The hand-counted two-record example, compared exactly.
pub fn worked_metric_example() -> bool {
    let t = vec![vec![0], vec![0, 1]];
    let p = vec![vec![0], vec![0]];
    match compute_metrics(&p, &t) {
        Ok(r) => {
            r.accuracy == 0.5
                && r.precision == 1.0
                && r.recall == 2.0 / 3.0
                && r.f1 == 2.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0)
                && (r.f1 - 0.8).abs() < 1e-15
        }
        Err(_) => false,
    }
}

/// Random fixtures where `compute_metrics` differs from the per-element oracle.
pub fn metric_mismatches(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let (probs, targets) = random_matrix(50_000 + seed);
        let mut r = rng::seeded(seed);
        let t: f64 = r.random_range(0.05..0.95);
        let pred = threshold_sets(&probs, t);
        let c = confusion(&pred, &targets, probs.ncols());
        let want = oracle_metrics(&c);
        let got = compute_metrics(&pred, &targets).ok().map(|m| (m.accuracy, m.precision, m.recall, m.f1));
        if got != want {
            bad.push(format!("seed {seed}: {got:?} vs {want:?}"));
        }
    }
    bad
}

/// Matrices where recall rises with the threshold or the recall optimum is not 0.01.
pub fn recall_structure_violations(count: u64) -> Vec<String> {
    let mut bad = Vec::new();
    for seed in 0..count {
        let pm = matrix(7_000 + seed);
        let mut prev = f64::INFINITY;
        for k in 1..=99 {
            let sets = set_predictions(pm.probs(), k as f64 / 100.0);
            if let Ok(r) = compute_metrics(&sets, pm.targets()) {
                if r.recall > prev {
                    bad.push(format!("seed {seed}: recall rises at {k}/100"));
                }
                prev = r.recall;
            }
        }
        match grid_search_threshold(&pm, Metric::Recall, &Grid::default()) {
            Ok((0.01, _)) => {}
            other => bad.push(format!("seed {seed}: recall optimum {other:?}")),
        }
    }
    bad
}

#[derive(Debug)]
pub struct RateCheck {
    pub name: &'static str,
    pub expected: f64,
    pub observed: f64,
    pub trials: usize,
}

impl RateCheck {
    pub fn inside(&self) -> bool {
        let (lo, hi) = binomial_ci99(self.expected, self.trials);
        self.observed >= lo && self.observed <= hi
    }
}

/// Observed rates of word insertion, character pass, per-character
/// replacement and language dropout under default settings.
pub fn augmentation_rates(trials: usize) -> Vec<RateCheck> {
    use occode::textenc::{apply_language_dropout, augment_traced};
    let cfg = AugmentConfig::default();
    let text = "farm labourer and smith";
    let mut r = rng::seeded(20_240_601);
    let (mut ins, mut pass, mut seen, mut repl, mut unk) = (0, 0, 0, 0, 0);
    for _ in 0..trials {
        let (_, t) = augment_traced(text, &cfg, &mut r);
        ins += t.word_inserted as usize;
        pass += t.char_pass as usize;
        seen += t.chars_seen;
        repl += t.chars_replaced;
        unk += (apply_language_dropout(LanguageTag::Da, 0.25, &mut r) == LanguageTag::Unk) as usize;
    }
    vec![
        RateCheck { name: "word insertion", expected: cfg.p_word_insert, observed: ins as f64 / trials as f64, trials },
        RateCheck { name: "character pass", expected: cfg.p_char_pass, observed: pass as f64 / trials as f64, trials },
        RateCheck {
            name: "character replacement",
            expected: cfg.p_char_replace,
            observed: repl as f64 / seen as f64,
            trials: seen,
        },
        RateCheck { name: "unk substitution", expected: 0.25, observed: unk as f64 / trials as f64, trials },
    ]
}

/// Largest absolute gap between `ols_hc1` and the hand-coded oracle over both
/// panels of the fixed fixture.
pub fn regression_gap() -> f64 {
    use occode::analysis::ols_hc1;
    let (y, h, l) = regression_fixture();
    let a = ols_hc1(&y, &[("HISCAM", h.clone())]).unwrap();
    let (ba, sa) = ols_oracle(&y, &[&h]);
    let b = ols_hc1(&y, &[("HISCAM", h.clone()), ("log(N. train obs.)", l.clone())]).unwrap();
    let (bb, sb) = ols_oracle(&y, &[&h, &l]);
    max_regression_gap(&a, &ba, &sa).max(max_regression_gap(&b, &bb, &sb))
}

// ---------------------------------------------------------------- command-line pipeline fixture

pub struct PipelineFixture {
    pub config: std::path::PathBuf,
    pub raw: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub hiscam: std::path::PathBuf,
    /// `id,occ_text,lang` rows to code.
    pub inputs: std::path::PathBuf,
    pub out_dir: std::path::PathBuf,
    pub input_rows: usize,
}

pub const PIPELINE_EPOCHS: usize = 25;

/// Raw rows from the overfit fixture plus three rows that cleaning must drop,
/// and a config that trains a small model quickly.
pub fn write_pipeline_fixture(dir: &std::path::Path) -> PipelineFixture {
    use std::fmt::Write as _;
    let (space, ds) = overfit_fixture();
    let labels = dir.join("labels.txt");
    std::fs::write(&labels, space.codes().iter().map(|c| format!("{c}\n")).collect::<String>()).unwrap();

    let mut raw = String::from("occ_text,hisco_1,hisco_2,hisco_3,hisco_4,hisco_5,lang,source\n");
    for r in &ds.records {
        let c = |i: usize| r.targets().get(i).map(|c| c.to_string()).unwrap_or_default();
        // Upper case the first letter so normalization has work to do.
        let mut text = r.text.clone();
        text[..1].make_ascii_uppercase();
        writeln!(raw, "{text},{},{},,,,{},{}", c(0), c(1), r.lang, r.source).unwrap();
    }
    raw.push_str("clerk,1234x,,,,,en,fixture\n");
    raw.push_str("clerk,99999,,,,,en,fixture\n");
    writeln!(raw, "   ,{},,,,,en,fixture", space.codes()[0]).unwrap();
    let raw_path = dir.join("raw.csv");
    std::fs::write(&raw_path, raw).unwrap();

    let hiscam = dir.join("hiscam.csv");
    let mut h = String::from("hisco,hiscam\n");
    for (i, c) in space.codes().iter().enumerate() {
        writeln!(h, "{c},{}", 40.0 + 3.0 * i as f64 + (i % 3) as f64).unwrap();
    }
    std::fs::write(&hiscam, h).unwrap();

    let inputs = dir.join("inputs.csv");
    let mut inp = String::from("id,occ_text,lang\n");
    let mut n = 0;
    for rep in 0..2 {
        for r in &ds.records {
            let text = if rep == 0 { r.text.clone() } else { r.text.to_uppercase() };
            writeln!(inp, "r{n},{text},{}", r.lang).unwrap();
            n += 1;
        }
    }
    std::fs::write(&inputs, inp).unwrap();

    let out_dir = dir.join("out");
    let config = dir.join("config.json");
    let cfg = serde_json::json!({
        "paths": {
            "data": raw_path,
            "label_space": labels,
            "hiscam": hiscam,
            "output_dir": out_dir,
        },
        "model": { "hidden_dim": 64, "max_len": 32, "dropout_p": 0.1 },
        "train": { "batch_size": 32, "max_epochs": PIPELINE_EPOCHS, "learning_rate": 0.002 },
        "combination": { "draws_per_description": 1 },
        "split": { "train_frac": 0.8, "val_frac": 0.1, "test_frac": 0.1 },
        "seed": 5
    });
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    PipelineFixture { config, raw: raw_path, labels, hiscam, inputs, out_dir, input_rows: n }
}

/// Status regressions on the fixed fixture, with every metric equal to its y.
pub fn ses_fixture_report() -> occode::analysis::SesReport {
    use occode::analysis::{ses_regression, PerCodeStats};
    let (y, h, l) = regression_fixture();
    let codes: Vec<HiscoCode> =
        (0..10).map(|i| HiscoCode::parse(&format!("{:05}", 10_000 + i * 1111)).unwrap()).collect();
    let table = occode::HiscamTable::from_entries(codes.iter().copied().zip(h.iter().copied())).unwrap();
    let stats: Vec<PerCodeStats> = (0..10)
        .map(|i| PerCodeStats {
            code: codes[i],
            n_train: l[i].exp().round() as usize,
            accuracy: Some(y[i]),
            precision: Some(y[i]),
            recall: Some(y[i]),
            f1: Some(y[i]),
            true_pos: 0,
            false_pos: 0,
            false_neg: 0,
        })
        .collect();
    ses_regression(&stats, &table)
}

/// Two panels, an observation row each, and a bracketed interval under every
/// coefficient (4 metrics times 1 + 2 regressors plus constants).
pub fn ses_layout_ok(text: &str) -> bool {
    text.contains("Panel A")
        && text.contains("Panel B")
        && text.matches("Observations").count() == 2
        && text.matches('[').count() == 4 * 5
}
