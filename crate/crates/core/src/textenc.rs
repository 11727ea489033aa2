//! Model input protocol and training-time text perturbation.
//!
//! An input is the serialized string `CLS lang SEP text`, mapped to Unicode
//! codepoints and padded to a fixed length. The two sentinels live in the
//! private-use area so they never collide with real text.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CLS: u32 = 0xE000;
pub const SEP: u32 = 0xE001;
pub const PAD: u32 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("max_len {max_len} too small for language tag {lang} (need at least {needed})")]
    MaxLenTooSmall { max_len: usize, lang: LanguageTag, needed: usize },
    #[error("unknown language tag {0:?}")]
    UnknownLanguage(String),
    #[error("invalid augmentation config: {0}")]
    InvalidAugment(String),
}

/// Language context given to the model; `Unk` marks an unknown language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageTag {
    Ca,
    Da,
    De,
    En,
    Es,
    Fr,
    Gr,
    Is,
    It,
    Nl,
    No,
    Pt,
    Se,
    Unk,
}

impl LanguageTag {
    pub const ALL: [LanguageTag; 14] = [
        Self::Ca,
        Self::Da,
        Self::De,
        Self::En,
        Self::Es,
        Self::Fr,
        Self::Gr,
        Self::Is,
        Self::It,
        Self::Nl,
        Self::No,
        Self::Pt,
        Self::Se,
        Self::Unk,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ca => "ca",
            Self::Da => "da",
            Self::De => "de",
            Self::En => "en",
            Self::Es => "es",
            Self::Fr => "fr",
            Self::Gr => "gr",
            Self::Is => "is",
            Self::It => "it",
            Self::Nl => "nl",
            Self::No => "no",
            Self::Pt => "pt",
            Self::Se => "se",
            Self::Unk => "unk",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageTag {
    type Err = EncodeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| EncodeError::UnknownLanguage(s.to_string()))
    }
}

/// Fixed-length codepoint sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of content (unmasked) positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Shortest `max_len` that fits the prefix for `lang` plus one text character.
pub fn min_len(lang: LanguageTag) -> usize {
    lang.as_str().len() + 3
}

pub fn encode(lang: LanguageTag, text: &str, max_len: usize) -> Result<EncodedInput, EncodeError> {
    let needed = min_len(lang);
    if max_len < needed {
        return Err(EncodeError::MaxLenTooSmall { max_len, lang, needed });
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(lang.as_str().chars().map(u32::from));
    ids.push(SEP);
    ids.extend(text.chars().map(u32::from).take(max_len - ids.len()));
    ids.truncate(max_len);
    let content = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; content];
    mask.resize(max_len, 0);
    Ok(EncodedInput { token_ids: ids, attention_mask: mask })
}

/// Recovers `(lang, text)` from an encoded input; `None` if the prefix is not
/// a valid `CLS lang SEP` header.
pub fn decode(input: &EncodedInput) -> Option<(LanguageTag, String)> {
    let content = &input.token_ids[..input.content_len()];
    if content.first() != Some(&CLS) {
        return None;
    }
    let sep = content.iter().position(|&c| c == SEP)?;
    let tag: String = content[1..sep].iter().map(|&c| char::from_u32(c)).collect::<Option<_>>()?;
    let lang = tag.parse().ok()?;
    let text = content[sep + 1..].iter().map(|&c| char::from_u32(c)).collect::<Option<_>>()?;
    Some((lang, text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_word_insert: f64,
    pub p_char_pass: f64,
    pub p_char_replace: f64,
    pub alphabet: String,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_word_insert: 0.10,
            p_char_pass: 0.10,
            p_char_replace: 0.10,
            alphabet: "abcdefghijklmnopqrstuvwxyz ".to_string(),
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Config that never changes its input.
    pub fn disabled() -> Self {
        Self { p_word_insert: 0.0, p_char_pass: 0.0, p_char_replace: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        for (name, p) in [
            ("p_word_insert", self.p_word_insert),
            ("p_char_pass", self.p_char_pass),
            ("p_char_replace", self.p_char_replace),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EncodeError::InvalidAugment(format!("{name}={p} not in [0,1]")));
            }
        }
        if self.alphabet.is_empty() && self.p_char_pass > 0.0 && self.p_char_replace > 0.0 {
            return Err(EncodeError::InvalidAugment("empty replacement alphabet".into()));
        }
        Ok(())
    }
}

/// What one call to [`augment_traced`] did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentTrace {
    pub word_inserted: bool,
    pub char_pass: bool,
    /// Characters examined during the character pass.
    pub chars_seen: usize,
    /// Characters that drew a replacement (possibly equal to the original).
    pub chars_replaced: usize,
}

pub fn augment<R: Rng + ?Sized>(text: &str, cfg: &AugmentConfig, rng: &mut R) -> String {
    augment_traced(text, cfg, rng).0
}

/// Word insertion followed by an independent per-character replacement pass.
pub fn augment_traced<R: Rng + ?Sized>(text: &str, cfg: &AugmentConfig, rng: &mut R) -> (String, AugmentTrace) {
    let mut trace = AugmentTrace::default();
    let mut out = text.to_string();

    if rng.random_bool(cfg.p_word_insert) {
        let mut words: Vec<&str> = text.split_whitespace().collect();
        if !words.is_empty() {
            let word = words[rng.random_range(0..words.len())];
            let at = rng.random_range(0..=words.len());
            words.insert(at, word);
            out = words.join(" ");
            trace.word_inserted = true;
        }
    }

    if rng.random_bool(cfg.p_char_pass) {
        trace.char_pass = true;
        let alphabet: Vec<char> = cfg.alphabet.chars().collect();
        out = out
            .chars()
            .map(|c| {
                trace.chars_seen += 1;
                if !alphabet.is_empty() && rng.random_bool(cfg.p_char_replace) {
                    trace.chars_replaced += 1;
                    alphabet[rng.random_range(0..alphabet.len())]
                } else {
                    c
                }
            })
            .collect();
    }
    (out, trace)
}

/// Replaces the tag with `Unk` with probability `p_unknown`.
pub fn apply_language_dropout<R: Rng + ?Sized>(lang: LanguageTag, p_unknown: f64, rng: &mut R) -> LanguageTag {
    if rng.random_bool(p_unknown) {
        LanguageTag::Unk
    } else {
        lang
    }
}
