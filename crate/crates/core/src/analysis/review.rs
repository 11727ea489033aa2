use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::Serialize;

use super::AnalysisError;
use crate::hisco::HiscoCode;
use crate::rng;
use crate::textenc::LanguageTag;

/// Human judgment of one prediction. `Correct` means acceptable without a
/// closer agreement judgment; `Substantial` means the difference would not
/// matter for most uses; `Exact` means the identical code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Exact,
    Substantial,
    Wrong,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Exact => "exact",
            Verdict::Substantial => "substantial",
            Verdict::Wrong => "wrong",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" => Ok(Verdict::Correct),
            "exact" => Ok(Verdict::Exact),
            "substantial" => Ok(Verdict::Substantial),
            "wrong" => Ok(Verdict::Wrong),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

/// A prediction eligible for review.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewCandidate {
    pub id: String,
    pub text: String,
    pub lang: LanguageTag,
    pub codes: Vec<HiscoCode>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRow {
    pub candidate: ReviewCandidate,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReviewSample {
    pub rows: Vec<ReviewRow>,
}

const HEADER: [&str; 6] = ["id", "text", "lang", "pred_codes", "probs", "verdict"];

/// Seeded uniform sample without replacement, in draw order.
pub fn draw_review_sample(population: &[ReviewCandidate], n: usize, seed: u64) -> Result<ReviewSample, AnalysisError> {
    if n > population.len() {
        return Err(AnalysisError::SampleTooLarge { requested: n, population: population.len() });
    }
    let mut r = rng::seeded(rng::derive_seed(seed, &[0x5245_5649_4557]));
    let picked = rand::seq::index::sample(&mut r, population.len(), n);
    Ok(ReviewSample {
        rows: picked.into_iter().map(|i| ReviewRow { candidate: population[i].clone(), verdict: None }).collect(),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

impl ReviewSample {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for r in &self.rows {
            let c = &r.candidate;
            w.write_record([
                c.id.clone(),
                c.text.clone(),
                c.lang.to_string(),
                join(&c.codes),
                join(&c.probs),
                r.verdict.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, AnalysisError> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().collect::<Vec<_>>() != HEADER {
            return Err(AnalysisError::InvalidReview(format!("expected header {}", HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| AnalysisError::InvalidReview(format!("row {}: {m}", i + 1));
            let split = |s: &str| s.split(';').filter(|p| !p.trim().is_empty()).map(str::to_string).collect::<Vec<_>>();
            let codes = split(&rec[3])
                .iter()
                .map(|s| HiscoCode::parse(s).map_err(|e| bad(e.to_string())))
                .collect::<Result<_, _>>()?;
            let probs = split(&rec[4])
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<_, _>>()?;
            let verdict = match rec[5].trim() {
                "" => None,
                v => Some(v.parse::<Verdict>().map_err(bad)?),
            };
            rows.push(ReviewRow {
                candidate: ReviewCandidate {
                    id: rec[0].to_string(),
                    text: rec[1].to_string(),
                    lang: rec[2].parse().map_err(|e: crate::textenc::EncodeError| bad(e.to_string()))?,
                    codes,
                    probs,
                },
                verdict,
            });
        }
        Ok(Self { rows })
    }
}

/// Agreement statistics of an annotated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReviewScore {
    /// Share judged correct, substantial or exact.
    pub accuracy: Option<f64>,
    /// Share judged exact.
    pub exact_agreement: Option<f64>,
    /// Share judged exact or substantial.
    pub substantial_agreement: Option<f64>,
    pub n_checked: usize,
}

/// Agreement shares are absent when the reviewer never used the exact or
/// substantial categories.
pub fn score_review(sample: &ReviewSample) -> Result<ReviewScore, AnalysisError> {
    let missing: Vec<String> =
        sample.rows.iter().filter(|r| r.verdict.is_none()).map(|r| r.candidate.id.clone()).collect();
    if !missing.is_empty() {
        return Err(AnalysisError::UnannotatedRows(missing));
    }
    let n = sample.rows.len();
    let count = |f: &dyn Fn(Verdict) -> bool| sample.rows.iter().filter(|r| f(r.verdict.unwrap())).count();
    let exact = count(&|v| v == Verdict::Exact);
    let subst = count(&|v| v == Verdict::Substantial);
    let ok = count(&|v| v != Verdict::Wrong);
    let share = |k: usize| (n > 0).then(|| k as f64 / n as f64);
    let graded = exact + subst > 0;
    Ok(ReviewScore {
        accuracy: share(ok),
        exact_agreement: if graded { share(exact) } else { None },
        substantial_agreement: if graded { share(exact + subst) } else { None },
        n_checked: n,
    })
}

impl fmt::Display for ReviewScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        writeln!(f, "{:<10} {:>15} {:>18} {:>10}", "Accuracy", "Exact agreement", "Subst. agreement", "N. checked")?;
        writeln!(
            f,
            "{:<10} {:>15} {:>18} {:>10}",
            show(self.accuracy),
            show(self.exact_agreement),
            show(self.substantial_agreement),
            self.n_checked
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population(n: usize) -> Vec<ReviewCandidate> {
        (0..n)
            .map(|i| ReviewCandidate {
                id: i.to_string(),
                text: format!("farmer, {i}"),
                lang: LanguageTag::En,
                codes: vec![HiscoCode::parse("61110").unwrap()],
                probs: vec![0.5 + (i % 40) as f64 / 100.0],
            })
            .collect()
    }

    fn annotate(sample: &mut ReviewSample, verdicts: &[(Verdict, usize)]) {
        let mut it = verdicts.iter().flat_map(|(v, k)| std::iter::repeat_n(*v, *k));
        for r in &mut sample.rows {
            r.verdict = it.next();
        }
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let pop = population(10_000);
        let a = draw_review_sample(&pop, 200, 7).unwrap();
        let b = draw_review_sample(&pop, 200, 7).unwrap();
        let c = draw_review_sample(&pop, 200, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut ids: Vec<&str> = a.rows.iter().map(|r| r.candidate.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 200);
    }

    #[test]
    fn whole_population_and_empty() {
        let pop = population(50);
        let s = draw_review_sample(&pop, 50, 1).unwrap();
        let mut ids: Vec<usize> = s.rows.iter().map(|r| r.candidate.id.parse().unwrap()).collect();
        assert_ne!(ids, (0..50).collect::<Vec<_>>());
        ids.sort();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        let empty = draw_review_sample(&pop, 0, 1).unwrap();
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,text,lang,pred_codes,probs,verdict\n");
        assert!(matches!(draw_review_sample(&pop, 51, 1), Err(AnalysisError::SampleTooLarge { .. })));
    }

    #[test]
    fn scoring() {
        let pop = population(1000);
        let mut s = draw_review_sample(&pop, 200, 3).unwrap();
        annotate(&mut s, &[(Verdict::Correct, 190), (Verdict::Wrong, 10)]);
        let r = score_review(&s).unwrap();
        assert_eq!(r.accuracy, Some(0.95));
        assert_eq!((r.exact_agreement, r.substantial_agreement), (None, None));

        annotate(&mut s, &[(Verdict::Exact, 164), (Verdict::Substantial, 23), (Verdict::Wrong, 13)]);
        let r = score_review(&s).unwrap();
        assert_eq!(r.exact_agreement, Some(0.82));
        assert_eq!(r.substantial_agreement, Some(0.935));
        assert_eq!(r.accuracy, Some(0.935));
        assert_eq!(r.n_checked, 200);

        annotate(&mut s, &[(Verdict::Exact, 200)]);
        let r = score_review(&s).unwrap();
        assert_eq!((r.accuracy, r.exact_agreement, r.substantial_agreement), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn blank_rows_are_listed() {
        let mut s = draw_review_sample(&population(10), 3, 0).unwrap();
        s.rows[0].verdict = Some(Verdict::Exact);
        let ids: Vec<String> = s.rows[1..].iter().map(|r| r.candidate.id.clone()).collect();
        match score_review(&s) {
            Err(AnalysisError::UnannotatedRows(got)) => assert_eq!(got, ids),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut s = draw_review_sample(&population(30), 5, 9).unwrap();
        s.rows[2].verdict = Some(Verdict::Substantial);
        s.rows[0].candidate.text = "smith, \"black\"".into();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(ReviewSample::read_csv(buf.as_slice()).unwrap(), s);
    }
}
