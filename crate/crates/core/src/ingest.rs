//! Data preparation: transliteration, code filtering, synthetic combined
//! occupations and seeded train/validation/test splitting.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hisco::{HiscoCode, HiscoError, LabelSpace, OccupationRecord, MAX_CODES};
use crate::rng;
use crate::textenc::LanguageTag;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no word for 'and' configured for language {0}")]
    MissingAndWord(LanguageTag),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("transliteration table: {0}")]
    Transliteration(String),
    #[error(transparent)]
    Record(#[from] HiscoError),
    #[error(transparent)]
    Language(#[from] crate::textenc::EncodeError),
}

/// Character → ASCII replacement table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transliteration {
    map: HashMap<char, String>,
}

impl Default for Transliteration {
    fn default() -> Self {
        let pairs: &[(&str, &str)] = &[
            ("å", "aa"),
            ("æ", "ae"),
            ("ø", "oe"),
            ("ä", "ae"),
            ("ö", "oe"),
            ("ü", "ue"),
            ("ß", "ss"),
            ("é", "e"),
            ("è", "e"),
            ("ê", "e"),
            ("à", "a"),
            ("â", "a"),
            ("ç", "c"),
            ("ñ", "n"),
            ("í", "i"),
            ("ì", "i"),
            ("ó", "o"),
            ("ò", "o"),
            ("ú", "u"),
            ("ù", "u"),
        ];
        Self::from_pairs(pairs.iter().map(|(a, b)| (a.chars().next().unwrap(), b.to_string())))
    }
}

#[derive(Deserialize)]
struct TranslitRow {
    from: String,
    to: String,
}

impl Transliteration {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (char, String)>) -> Self {
        Self { map: pairs.into_iter().collect() }
    }

    pub fn empty() -> Self {
        Self { map: HashMap::new() }
    }

    /// CSV with header `from,to`; `from` must be a single character.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut map = HashMap::new();
        for row in rdr.deserialize::<TranslitRow>() {
            let row = row?;
            let mut chars = row.from.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    map.insert(c, row.to);
                }
                _ => {
                    return Err(IngestError::Transliteration(format!(
                        "`from` must be one character, got {:?}",
                        row.from
                    )))
                }
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, c: char) -> Option<&str> {
        self.map.get(&c).map(String::as_str)
    }
}

/// Transliterates, lowercases and collapses whitespace.
pub fn normalize_text(text: &str, table: &Transliteration) -> String {
    let mut mapped = String::with_capacity(text.len());
    for c in text.chars() {
        if let Some(rep) = table.get(c) {
            mapped.push_str(rep);
            continue;
        }
        for lc in c.to_lowercase() {
            match table.get(lc) {
                Some(rep) => mapped.push_str(rep),
                None => mapped.push(lc),
            }
        }
    }
    let lowered = mapped.to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One input CSV row before validation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRow {
    pub occ_text: String,
    #[serde(default)]
    pub hisco_1: String,
    #[serde(default)]
    pub hisco_2: String,
    #[serde(default)]
    pub hisco_3: String,
    #[serde(default)]
    pub hisco_4: String,
    #[serde(default)]
    pub hisco_5: String,
    pub lang: String,
    #[serde(default)]
    pub source: String,
}

impl RawRow {
    pub fn new(text: &str, codes: &[&str], lang: &str, source: &str) -> Self {
        let c = |i: usize| codes.get(i).map(|s| s.to_string()).unwrap_or_default();
        Self {
            occ_text: text.into(),
            hisco_1: c(0),
            hisco_2: c(1),
            hisco_3: c(2),
            hisco_4: c(3),
            hisco_5: c(4),
            lang: lang.into(),
            source: source.into(),
        }
    }

    fn code_cells(&self) -> [&str; 5] {
        [&self.hisco_1, &self.hisco_2, &self.hisco_3, &self.hisco_4, &self.hisco_5]
    }
}

/// Output row: the input schema plus a `synthetic` flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRow {
    pub occ_text: String,
    pub hisco_1: String,
    pub hisco_2: String,
    pub hisco_3: String,
    pub hisco_4: String,
    pub hisco_5: String,
    pub lang: String,
    pub source: String,
    pub synthetic: bool,
}

impl From<&OccupationRecord> for CleanRow {
    fn from(r: &OccupationRecord) -> Self {
        let c = |i: usize| r.targets().get(i).map(|c| c.to_string()).unwrap_or_default();
        Self {
            occ_text: r.text.clone(),
            hisco_1: c(0),
            hisco_2: c(1),
            hisco_3: c(2),
            hisco_4: c(3),
            hisco_5: c(4),
            lang: r.lang.to_string(),
            source: r.source.clone(),
            synthetic: r.synthetic,
        }
    }
}

/// Why a row was dropped during cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingCode,
    MalformedCode,
    UnknownCode,
    UnknownLanguage,
    EmptyText,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanDataset {
    pub records: Vec<OccupationRecord>,
    pub provenance: BTreeMap<DropReason, usize>,
}

impl CleanDataset {
    pub fn from_records(records: Vec<OccupationRecord>) -> Self {
        Self { records, provenance: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.provenance.values().sum()
    }

    pub fn to_raw_rows(&self) -> Vec<RawRow> {
        self.records
            .iter()
            .map(|r| {
                let c = CleanRow::from(r);
                RawRow {
                    occ_text: c.occ_text,
                    hisco_1: c.hisco_1,
                    hisco_2: c.hisco_2,
                    hisco_3: c.hisco_3,
                    hisco_4: c.hisco_4,
                    hisco_5: c.hisco_5,
                    lang: c.lang,
                    source: c.source,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(CleanRow::from(r))?;
        }
        if self.records.is_empty() {
            w.write_record([
                "occ_text",
                "hisco_1",
                "hisco_2",
                "hisco_3",
                "hisco_4",
                "hisco_5",
                "lang",
                "source",
                "synthetic",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cleaned CSV (with `synthetic` column) against a label space.
    pub fn read_csv<R: Read>(reader: R, space: &LabelSpace) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for row in rdr.deserialize::<CleanRow>() {
            let row = row?;
            let codes = [&row.hisco_1, &row.hisco_2, &row.hisco_3, &row.hisco_4, &row.hisco_5]
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| crate::hisco::parse_code(s, Some(space)))
                .collect::<Result<Vec<_>, _>>()?;
            let lang: LanguageTag = row.lang.parse()?;
            let mut rec = OccupationRecord::new(row.occ_text, lang, codes, row.source)?;
            rec.synthetic = row.synthetic;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }
}

pub fn read_raw_rows<R: Read>(reader: R) -> Result<Vec<RawRow>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize::<RawRow>().collect::<Result<Vec<_>, _>>()?)
}

fn clean_row(row: &RawRow, space: &LabelSpace, table: &Transliteration) -> Result<OccupationRecord, DropReason> {
    let cells = row.code_cells();
    if cells[0].trim().is_empty() {
        return Err(DropReason::MissingCode);
    }
    let mut codes: Vec<HiscoCode> = Vec::new();
    for cell in cells.iter().filter(|c| !c.trim().is_empty()) {
        let code = HiscoCode::parse(cell).map_err(|_| DropReason::MalformedCode)?;
        if !space.contains(&code) {
            return Err(DropReason::UnknownCode);
        }
        codes.push(code);
    }
    let lang: LanguageTag = row.lang.parse().map_err(|_| DropReason::UnknownLanguage)?;
    let text = normalize_text(&row.occ_text, table);
    OccupationRecord::new(text, lang, codes, row.source.clone()).map_err(|_| DropReason::EmptyText)
}

/// Validates rows; invalid ones are dropped and tallied by reason.
pub fn clean_dataset(rows: &[RawRow], space: &LabelSpace, table: &Transliteration) -> CleanDataset {
    let mut ds = CleanDataset::default();
    for row in rows {
        match clean_row(row, space, table) {
            Ok(rec) => ds.records.push(rec),
            Err(reason) => *ds.provenance.entry(reason).or_insert(0) += 1,
        }
    }
    ds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinationPolicy {
    pub and_word: BTreeMap<LanguageTag, String>,
    pub draws_per_description: usize,
    pub rng_seed: u64,
    /// Redraws allowed when a union would exceed the code cap.
    pub max_retries: usize,
}

impl Default for CombinationPolicy {
    fn default() -> Self {
        let words = [
            (LanguageTag::Ca, "i"),
            (LanguageTag::Da, "og"),
            (LanguageTag::De, "und"),
            (LanguageTag::En, "and"),
            (LanguageTag::Es, "y"),
            (LanguageTag::Fr, "et"),
            (LanguageTag::Gr, "kai"),
            (LanguageTag::Is, "og"),
            (LanguageTag::It, "e"),
            (LanguageTag::Nl, "en"),
            (LanguageTag::No, "og"),
            (LanguageTag::Pt, "e"),
            (LanguageTag::Se, "och"),
            (LanguageTag::Unk, "and"),
        ];
        Self {
            and_word: words.iter().map(|(l, w)| (*l, w.to_string())).collect(),
            draws_per_description: 10,
            rng_seed: 0,
            max_retries: 10,
        }
    }
}

/// Adds synthetic "A and B" records drawn within each (source, language) group.
///
/// For every unique description, `draws_per_description` partners are drawn
/// uniformly from the other unique descriptions of its group. Unions larger
/// than the code cap are redrawn up to `max_retries` times, then skipped.
/// Original records are kept in front, synthetic ones appended in draw order.
pub fn synthesize_combinations(ds: &CleanDataset, policy: &CombinationPolicy) -> Result<CleanDataset, IngestError> {
    let mut out = ds.clone();
    if policy.draws_per_description == 0 {
        return Ok(out);
    }

    // Unique descriptions per group, first occurrence wins; groups in first-seen order.
    let mut group_order: Vec<(String, LanguageTag)> = Vec::new();
    let mut groups: HashMap<(String, LanguageTag), Vec<&OccupationRecord>> = HashMap::new();
    for r in ds.records.iter().filter(|r| !r.synthetic) {
        let key = (r.source.clone(), r.lang);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            group_order.push(key);
            Vec::new()
        });
        if !entry.iter().any(|e| e.text == r.text) {
            entry.push(r);
        }
    }
    for (_, lang) in &group_order {
        if !policy.and_word.contains_key(lang) {
            return Err(IngestError::MissingAndWord(*lang));
        }
    }

    let mut rng = rng::seeded(policy.rng_seed);
    for key in &group_order {
        let uniq = &groups[key];
        if uniq.len() < 2 {
            continue;
        }
        let and = &policy.and_word[&key.1];
        for (i, a) in uniq.iter().enumerate() {
            for _ in 0..policy.draws_per_description {
                for _attempt in 0..=policy.max_retries {
                    // Uniform over the other descriptions.
                    let mut j = rng.random_range(0..uniq.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    let b = uniq[j];
                    let mut codes = a.targets().to_vec();
                    for c in b.targets() {
                        if !codes.contains(c) {
                            codes.push(*c);
                        }
                    }
                    if codes.len() > MAX_CODES {
                        continue;
                    }
                    let text = format!("{} {} {}", a.text, and, b.text);
                    let mut rec = OccupationRecord::new(text, a.lang, codes, a.source.clone())?;
                    rec.synthetic = true;
                    out.records.push(rec);
                    break;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.85, val_frac: 0.10, test_frac: 0.05, rng_seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(IngestError::InvalidSplit(format!("fractions must be positive, got {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidSplit(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// Part for each record, one uniform draw per record in input order.
pub fn split_assignment(n: usize, spec: &SplitSpec) -> Result<Vec<Part>, IngestError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.rng_seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < spec.train_frac {
                Part::Train
            } else if u < spec.train_frac + spec.val_frac {
                Part::Val
            } else {
                Part::Test
            }
        })
        .collect())
}

pub fn split_dataset(
    ds: &CleanDataset,
    spec: &SplitSpec,
) -> Result<(CleanDataset, CleanDataset, CleanDataset), IngestError> {
    let parts = split_assignment(ds.len(), spec)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (r, p) in ds.records.iter().zip(parts) {
        match p {
            Part::Train => train.push(r.clone()),
            Part::Val => val.push(r.clone()),
            Part::Test => test.push(r.clone()),
        }
    }
    Ok((CleanDataset::from_records(train), CleanDataset::from_records(val), CleanDataset::from_records(test)))
}
