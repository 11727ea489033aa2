//! HISCO label universe.
//!
//! A [`LabelSpace`] fixes the bijection between codes and classifier output
//! slots. It is loaded from a plain code list and is the single authority on
//! which codes are usable: anything outside it is rejected at ingestion.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textenc::LanguageTag;

/// Maximum number of codes attached to one record.
pub const MAX_CODES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HiscoError {
    #[error("malformed HISCO code {0:?}: expected 5 digits")]
    MalformedCode(String),
    #[error("code {0} is not in the label space")]
    UnknownCode(HiscoCode),
    #[error("duplicate code {code} on line {line}")]
    DuplicateCode { code: HiscoCode, line: usize },
    #[error("label space file is empty")]
    EmptyFile,
    #[error("record has no target codes")]
    EmptyTargets,
    #[error("record has {0} target codes, at most {MAX_CODES} allowed")]
    TooManyCodes(usize),
    #[error("record text is empty")]
    EmptyText,
    #[error("hiscam table: {0}")]
    Hiscam(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// A validated five-digit HISCO code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HiscoCode([u8; 5]);

impl HiscoCode {
    pub fn parse(text: &str) -> Result<Self, HiscoError> {
        let t = text.trim();
        let bytes = t.as_bytes();
        if bytes.len() != 5 || !bytes.iter().all(u8::is_ascii_digit) {
            return Err(HiscoError::MalformedCode(text.to_string()));
        }
        let mut digits = [0u8; 5];
        digits.copy_from_slice(bytes);
        Ok(Self(digits))
    }

    pub fn as_str(&self) -> &str {
        // Constructed only from ASCII digits.
        std::str::from_utf8(&self.0).unwrap()
    }

    /// First digit, the major group (used as a sector key).
    pub fn major_group(&self) -> u8 {
        self.0[0] - b'0'
    }
}

impl fmt::Display for HiscoCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for HiscoCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HiscoCode({})", self.as_str())
    }
}

impl FromStr for HiscoCode {
    type Err = HiscoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for HiscoCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for HiscoCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        HiscoCode::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses a code and, when a space is given, checks membership.
pub fn parse_code(text: &str, space: Option<&LabelSpace>) -> Result<HiscoCode, HiscoError> {
    let code = HiscoCode::parse(text)?;
    match space {
        Some(s) if !s.contains(&code) => Err(HiscoError::UnknownCode(code)),
        _ => Ok(code),
    }
}

/// Ordered code list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    codes: Vec<HiscoCode>,
    index: HashMap<HiscoCode, usize>,
}

impl LabelSpace {
    pub fn new(codes: Vec<HiscoCode>) -> Result<Self, HiscoError> {
        if codes.is_empty() {
            return Err(HiscoError::EmptyFile);
        }
        let mut index = HashMap::with_capacity(codes.len());
        for (i, &c) in codes.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(HiscoError::DuplicateCode { code: c, line: i + 1 });
            }
        }
        Ok(Self { codes, index })
    }

    /// Parses one code per line. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self, HiscoError> {
        let mut codes = Vec::new();
        let mut seen: HashMap<HiscoCode, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let code = HiscoCode::parse(line)?;
            if seen.insert(code, lineno).is_some() {
                return Err(HiscoError::DuplicateCode { code, line: lineno + 1 });
            }
            codes.push(code);
        }
        Self::new(codes)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HiscoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HiscoError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[HiscoCode] {
        &self.codes
    }

    pub fn code(&self, index: usize) -> Option<HiscoCode> {
        self.codes.get(index).copied()
    }

    pub fn index_of(&self, code: &HiscoCode) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn contains(&self, code: &HiscoCode) -> bool {
        self.index.contains_key(code)
    }

    /// SHA-256 over the newline-joined code list, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.codes {
            h.update(c.as_str().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Dense 0/1 target vector over the space.
    pub fn to_multihot(&self, targets: &[HiscoCode]) -> Result<Vec<f32>, HiscoError> {
        if targets.is_empty() {
            return Err(HiscoError::EmptyTargets);
        }
        let mut v = vec![0.0; self.len()];
        for c in targets {
            let i = self.index_of(c).ok_or(HiscoError::UnknownCode(*c))?;
            v[i] = 1.0;
        }
        Ok(v)
    }

    /// Sorted index set of the targets.
    pub fn indices(&self, targets: &[HiscoCode]) -> Result<Vec<usize>, HiscoError> {
        let mut out = targets
            .iter()
            .map(|c| self.index_of(c).ok_or(HiscoError::UnknownCode(*c)))
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// One description with its language and target codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRecord {
    pub text: String,
    pub lang: LanguageTag,
    targets: Vec<HiscoCode>,
    pub source: String,
    #[serde(default)]
    pub synthetic: bool,
}

impl OccupationRecord {
    /// Builds a record; duplicate codes are collapsed keeping first-seen order.
    pub fn new(
        text: impl Into<String>,
        lang: LanguageTag,
        targets: impl IntoIterator<Item = HiscoCode>,
        source: impl Into<String>,
    ) -> Result<Self, HiscoError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(HiscoError::EmptyText);
        }
        let mut codes: Vec<HiscoCode> = Vec::new();
        for c in targets {
            if !codes.contains(&c) {
                codes.push(c);
            }
        }
        if codes.is_empty() {
            return Err(HiscoError::EmptyTargets);
        }
        if codes.len() > MAX_CODES {
            return Err(HiscoError::TooManyCodes(codes.len()));
        }
        Ok(Self { text, lang, targets: codes, source: source.into(), synthetic: false })
    }

    pub fn targets(&self) -> &[HiscoCode] {
        &self.targets
    }
}

/// Social-status score per code.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiscamTable {
    entries: BTreeMap<HiscoCode, f64>,
}

#[derive(Deserialize)]
struct HiscamRow {
    hisco: String,
    hiscam: f64,
}

impl HiscamTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (HiscoCode, f64)>) -> Result<Self, HiscoError> {
        let mut map = BTreeMap::new();
        for (c, s) in entries {
            if !s.is_finite() {
                return Err(HiscoError::Hiscam(format!("non-finite score for {c}")));
            }
            map.insert(c, s);
        }
        Ok(Self { entries: map })
    }

    /// Reads CSV with header `hisco,hiscam`.
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, HiscoError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| HiscoError::Hiscam(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["hisco", "hiscam"] {
            return Err(HiscoError::Hiscam(format!(
                "expected header `hisco,hiscam`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in rdr.deserialize::<HiscamRow>() {
            let row = row.map_err(|e| HiscoError::Hiscam(e.to_string()))?;
            entries.push((HiscoCode::parse(&row.hisco)?, row.hiscam));
        }
        Self::from_entries(entries)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HiscoError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|e| HiscoError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_reader(f)
    }

    /// Score for `code`, or `None` when the table has no entry.
    pub fn lookup(&self, code: &HiscoCode) -> Option<f64> {
        self.entries.get(code).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(s: &str) -> HiscoCode {
        HiscoCode::parse(s).unwrap()
    }

    #[test]
    fn parse_code_examples() {
        assert_eq!(code("61110").as_str(), "61110");
        assert_eq!(code("  64100 ").as_str(), "64100");
        assert!(matches!(HiscoCode::parse("6111"), Err(HiscoError::MalformedCode(_))));
        assert!(matches!(HiscoCode::parse("6111a"), Err(HiscoError::MalformedCode(_))));
        assert!(matches!(HiscoCode::parse("-1"), Err(HiscoError::MalformedCode(_))));
        let space = LabelSpace::parse("61110\n").unwrap();
        assert!(matches!(parse_code("64100", Some(&space)), Err(HiscoError::UnknownCode(_))));
    }

    #[test]
    fn label_space_file_order() {
        let s = LabelSpace::parse("61110\n64100\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.index_of(&code("64100")), Some(1));
        assert_eq!(s.code(0), Some(code("61110")));
    }

    #[test]
    fn label_space_errors() {
        assert!(matches!(LabelSpace::parse("61110\n64100\n61110\n"), Err(HiscoError::DuplicateCode { line: 3, .. })));
        assert_eq!(LabelSpace::parse("\n\n"), Err(HiscoError::EmptyFile));
        assert!(matches!(LabelSpace::parse("61110\n611\n"), Err(HiscoError::MalformedCode(_))));
    }

    #[test]
    fn full_size_space() {
        let text: String = (0..1921).map(|i| format!("{:05}\n", 10000 + i)).collect();
        assert_eq!(LabelSpace::parse(&text).unwrap().len(), 1921);
    }

    #[test]
    fn multihot_examples() {
        let s = LabelSpace::parse("61110\n64100\n").unwrap();
        assert_eq!(s.to_multihot(&[code("61110"), code("64100")]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(s.to_multihot(&[code("61110")]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.to_multihot(&[]), Err(HiscoError::EmptyTargets));
        assert!(matches!(s.to_multihot(&[code("99999")]), Err(HiscoError::UnknownCode(_))));
    }

    #[test]
    fn hiscam_lookup_examples() {
        let t = HiscamTable::from_entries([(code("61110"), 50.0)]).unwrap();
        assert_eq!(t.lookup(&code("61110")), Some(50.0));
        assert_eq!(t.lookup(&code("64100")), None);
        assert_eq!(HiscamTable::default().lookup(&code("61110")), None);
    }

    #[test]
    fn hiscam_csv() {
        let t = HiscamTable::from_reader("hisco,hiscam\n61110,50.5\n64100,48\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup(&code("64100")), Some(48.0));
        assert!(HiscamTable::from_reader("code,score\n61110,1\n".as_bytes()).is_err());
        assert!(HiscamTable::from_entries([(code("61110"), f64::NAN)]).is_err());
    }

    #[test]
    fn record_invariants() {
        let en = LanguageTag::En;
        let r = OccupationRecord::new("farmer", en, [code("61110"), code("61110")], "x").unwrap();
        assert_eq!(r.targets(), &[code("61110")]);
        assert_eq!(OccupationRecord::new("  ", en, [code("61110")], "x"), Err(HiscoError::EmptyText));
        let six = (0..6).map(|i| code(&format!("1000{i}")));
        assert_eq!(OccupationRecord::new("a", en, six, "x"), Err(HiscoError::TooManyCodes(6)));
    }

    proptest! {
        #[test]
        fn parse_accepts_iff_five_digits(s in "\\PC{0,7}") {
            let t = s.trim();
            let ok = t.len() == 5 && t.bytes().all(|b| b.is_ascii_digit());
            prop_assert_eq!(HiscoCode::parse(&s).is_ok(), ok);
        }

        #[test]
        fn parse_accepts_digit_strings(s in "[0-9]{5}") {
            let c = HiscoCode::parse(&s).unwrap();
            prop_assert_eq!(c.as_str(), s.as_str());
        }

        #[test]
        fn index_is_bijective_and_multihot_roundtrips(
            raw in proptest::collection::btree_set(10000u32..99999, 1..60),
            pick in proptest::collection::vec(any::<prop::sample::Index>(), 1..5),
        ) {
            let codes: Vec<HiscoCode> = raw.iter().map(|n| code(&n.to_string())).collect();
            let space = LabelSpace::new(codes.clone()).unwrap();
            for (i, c) in codes.iter().enumerate() {
                prop_assert_eq!(space.index_of(c), Some(i));
            }
            let targets: Vec<HiscoCode> = pick.iter().map(|ix| codes[ix.index(codes.len())]).collect();
            let hot = space.to_multihot(&targets).unwrap();
            let ones: Vec<usize> = hot.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
            prop_assert_eq!(ones, space.indices(&targets).unwrap());
        }
    }
}
