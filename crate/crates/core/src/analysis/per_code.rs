use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::AnalysisError;
use crate::calibrate::{set_predictions, PredictionMatrix};
use crate::hisco::{HiscoCode, LabelSpace};

/// Performance restricted to one code. `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerCodeStats {
    pub code: HiscoCode,
    pub n_train: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One entry per label in space order.
///
/// Accuracy for a code is the exact-set-match rate among records whose
/// target contains it. F1 is `2TP / (2TP + FP + FN)`, which agrees with the
/// harmonic mean whenever both precision and recall are defined.
pub fn per_code_performance(
    pm: &PredictionMatrix,
    space: &LabelSpace,
    threshold: f64,
    train_counts: &BTreeMap<HiscoCode, usize>,
) -> Result<Vec<PerCodeStats>, AnalysisError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalysisError::ThresholdOutOfRange(threshold));
    }
    let l = pm.label_count();
    let pred = set_predictions(pm.probs(), threshold);
    let mut tp = vec![0usize; l];
    let mut fp = vec![0usize; l];
    let mut fn_ = vec![0usize; l];
    let mut exact = vec![0usize; l];
    for (p, t) in pred.iter().zip(pm.targets()) {
        let hit = p == t;
        for &j in p {
            if t.binary_search(&j).is_ok() {
                tp[j] += 1;
            } else {
                fp[j] += 1;
            }
        }
        for &j in t {
            if p.binary_search(&j).is_err() {
                fn_[j] += 1;
            }
            if hit {
                exact[j] += 1;
            }
        }
    }
    Ok(space
        .codes()
        .iter()
        .enumerate()
        .take(l)
        .map(|(j, &code)| {
            let in_targets = tp[j] + fn_[j];
            PerCodeStats {
                code,
                n_train: train_counts.get(&code).copied().unwrap_or(0),
                accuracy: ratio(exact[j], in_targets),
                precision: ratio(tp[j], tp[j] + fp[j]),
                recall: ratio(tp[j], in_targets),
                f1: ratio(2 * tp[j], 2 * tp[j] + fp[j] + fn_[j]),
                true_pos: tp[j],
                false_pos: fp[j],
                false_neg: fn_[j],
            }
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `hisco,n_train,accuracy,precision,recall,f1`, empty cells for undefined.
pub fn write_per_code_csv<W: Write>(stats: &[PerCodeStats], writer: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["hisco", "n_train", "accuracy", "precision", "recall", "f1"])?;
    for s in stats {
        w.write_record([
            s.code.to_string(),
            s.n_train.to_string(),
            cell(s.accuracy),
            cell(s.precision),
            cell(s.recall),
            cell(s.f1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textenc::LanguageTag;
    use ndarray::Array2;

    fn pm(rows: &[&[f64]], targets: Vec<Vec<usize>>) -> PredictionMatrix {
        let l = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let n = rows.len();
        PredictionMatrix::new(Array2::from_shape_vec((n, l), flat).unwrap(), targets, vec![LanguageTag::En; n]).unwrap()
    }

    #[test]
    fn always_right_code() {
        let space = LabelSpace::parse("61110\n64100\n").unwrap();
        let m = pm(&[&[0.9, 0.1], &[0.8, 0.2]], vec![vec![0], vec![0]]);
        let s = per_code_performance(&m, &space, 0.5, &BTreeMap::new()).unwrap();
        assert_eq!((s[0].accuracy, s[0].precision, s[0].recall, s[0].f1), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!((s[1].accuracy, s[1].precision, s[1].recall, s[1].f1), (None, None, None, None));
    }

    #[test]
    fn never_predicted_code() {
        let space = LabelSpace::parse("61110\n64100\n").unwrap();
        let m = pm(&[&[0.9, 0.1], &[0.8, 0.2], &[0.7, 0.3]], vec![vec![0, 1], vec![1], vec![1]]);
        let s = per_code_performance(&m, &space, 0.5, &BTreeMap::new()).unwrap();
        assert_eq!(s[1].recall, Some(0.0));
        assert_eq!(s[1].precision, None);
        assert_eq!(s[1].f1, Some(0.0));
    }

    #[test]
    fn six_record_tally() {
        // Predicted at 0.5 / targets:
        // r0 {0}   / {0}      r1 {0,1} / {0}      r2 {1}  / {1,2}
        // r3 {}    / {2}      r4 {2}   / {2}      r5 {0,2}/ {0,2}
        let space = LabelSpace::parse("11111\n22222\n33333\n").unwrap();
        let m = pm(
            &[
                &[0.9, 0.1, 0.1],
                &[0.9, 0.6, 0.1],
                &[0.1, 0.7, 0.4],
                &[0.1, 0.1, 0.2],
                &[0.2, 0.3, 0.8],
                &[0.6, 0.1, 0.9],
            ],
            vec![vec![0], vec![0], vec![1, 2], vec![2], vec![2], vec![0, 2]],
        );
        let counts = BTreeMap::from([(HiscoCode::parse("22222").unwrap(), 7)]);
        let s = per_code_performance(&m, &space, 0.5, &counts).unwrap();
        // code 0: TP 3 (r0,r1,r5), FP 0, FN 0; exact among {r0,r1,r5} = r0,r5
        assert_eq!((s[0].true_pos, s[0].false_pos, s[0].false_neg), (3, 0, 0));
        assert_eq!(s[0].accuracy, Some(2.0 / 3.0));
        // code 1: TP 1 (r2), FP 1 (r1), FN 0; exact among {r2}: none
        assert_eq!((s[1].true_pos, s[1].false_pos, s[1].false_neg), (1, 1, 0));
        assert_eq!((s[1].precision, s[1].recall, s[1].accuracy), (Some(0.5), Some(1.0), Some(0.0)));
        assert_eq!(s[1].n_train, 7);
        // code 2: TP 2 (r4,r5), FP 0, FN 2 (r2,r3); exact among {r2,r3,r4,r5} = r4,r5
        assert_eq!((s[2].true_pos, s[2].false_pos, s[2].false_neg), (2, 0, 2));
        assert_eq!((s[2].recall, s[2].accuracy), (Some(0.5), Some(0.5)));
        assert_eq!(s[2].n_train, 0);

        let mut buf = Vec::new();
        write_per_code_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("hisco,n_train,accuracy,precision,recall,f1\n"));
    }
}
