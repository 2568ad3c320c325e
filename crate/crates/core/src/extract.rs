//! Rule-based entity extraction.
//!
//! Numeric kinds are matched with fixed patterns (currency amounts, HH:MM
//! times, day-of-month dates, standalone numbers); textual kinds are matched
//! against the registry's candidate pools as case-sensitive whole words.
//! All rule hits are collected as candidates first, then overlaps are
//! resolved: longest match wins, ties go to the leftmost candidate, then to
//! the higher-priority kind (money > time > date > cardinal > textual).

use std::collections::BTreeMap;

use aho_corasick::AhoCorasick;
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::entity::{EntityClass, EntityKind, EntitySpan, SensitivityRegistry};
use crate::error::{Error, Result};

/// Spans found in one document, with per-kind counts and the span density
/// used by the corpus filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub spans: Vec<EntitySpan>,
    pub counts: BTreeMap<EntityKind, usize>,
    pub density: f64,
}

/// Externally supplied span, offsets in characters. When `surface` is given
/// it is checked against the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
}

/// Byte/character offset translation for one text.
pub(crate) struct CharIndex {
    byte_of_char: Vec<usize>,
}

impl CharIndex {
    pub(crate) fn new(text: &str) -> Self {
        let mut byte_of_char: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_of_char.push(text.len());
        CharIndex { byte_of_char }
    }

    pub(crate) fn char_len(&self) -> usize {
        self.byte_of_char.len() - 1
    }

    pub(crate) fn byte(&self, char_idx: usize) -> usize {
        self.byte_of_char[char_idx]
    }

    /// Character index of a byte offset that sits on a char boundary.
    pub(crate) fn char_of_byte(&self, byte: usize) -> usize {
        self.byte_of_char.partition_point(|&b| b < byte)
    }

    pub(crate) fn slice<'t>(&self, text: &'t str, start: usize, end: usize) -> &'t str {
        &text[self.byte(start)..self.byte(end)]
    }
}

static MONEY_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"[$€£](?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?").unwrap()
});

static TIME_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"\b([01]?\d|2[0-3]):([0-5]\d)\b").unwrap()
});

const MONTHS: &str = "January|February|March|April|May|June|July|August|September|October|\
                      November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sep|Oct|Nov|Dec";

static DATE_MONTH_DAY_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(r"\b(?i:{MONTHS})\.?\s+(\d{{1,2}})\b")).unwrap()
});

static DATE_DAY_MONTH_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(&format!(r"\b(\d{{1,2}})\s+(?i:{MONTHS})\b")).unwrap()
});

static DATE_ISO_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap()
});

static CARDINAL_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"\b(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?\b").unwrap()
});

/// Parses a numeric surface: an optional leading currency symbol is dropped
/// and thousands separators are stripped.
pub(crate) fn parse_numeric_surface(surface: &str) -> Option<f64> {
    let stripped = surface
        .strip_prefix(['$', '€', '£'])
        .unwrap_or(surface);
    if stripped.is_empty() {
        return None;
    }
    stripped.replace(',', "").parse().ok()
}

/// Renders `value` in the style of `surface`: currency symbol, thousands
/// separators, fraction digits, and zero padding are carried over.
pub(crate) fn format_numeric_like(surface: &str, value: f64) -> String {
    let (symbol, digits) = match surface.chars().next() {
        Some(c @ ('$' | '€' | '£')) => (Some(c), &surface[c.len_utf8()..]),
        _ => (None, surface),
    };
    let decimals = digits
        .split_once('.')
        .map(|(_, frac)| frac.len())
        .unwrap_or(0);
    let has_sep = digits.contains(',');
    let negative = value < 0.0;
    let rendered = format!("{:.*}", decimals, value.abs());
    let (int_part, frac_part) = match rendered.split_once('.') {
        Some((i, f)) => (i.to_string(), Some(f.to_string())),
        None => (rendered, None),
    };
    let mut int_out = if has_sep {
        let bytes = int_part.as_bytes();
        let mut grouped = String::with_capacity(int_part.len() + int_part.len() / 3);
        for (i, b) in bytes.iter().enumerate() {
            if i > 0 && (bytes.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(*b as char);
        }
        grouped
    } else {
        int_part
    };
    if !has_sep && decimals == 0 && digits.len() >= 2 && digits.starts_with('0') {
        while int_out.len() < digits.len() {
            int_out.insert(0, '0');
        }
    }
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if let Some(sym) = symbol {
        out.push(sym);
    }
    out.push_str(&int_out);
    if let Some(frac) = frac_part {
        out.push('.');
        out.push_str(&frac);
    }
    out
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    end: usize,
    kind: EntityKind,
    numeric_value: Option<f64>,
    pool_index: Option<usize>,
}

/// Day-of-month candidate from a date pattern whose capture group 1 is the
/// day field. Days outside 1..=31 void the whole match.
fn push_day_candidate(
    caps: &regex::Captures<'_>,
    candidates: &mut Vec<Candidate>,
    blocked: &mut Vec<(usize, usize)>,
) {
    let whole = caps.get(0).unwrap();
    let day = caps.get(1).unwrap();
    let value: f64 = day.as_str().parse().unwrap();
    if (1.0..=31.0).contains(&value) {
        candidates.push(Candidate {
            start: day.start(),
            end: day.end(),
            kind: EntityKind::DateDay,
            numeric_value: Some(value),
            pool_index: None,
        });
        blocked.push((whole.start(), whole.end()));
    }
}

fn kind_priority(kind: EntityKind) -> u8 {
    match kind {
        EntityKind::Money => 0,
        EntityKind::TimeHour | EntityKind::TimeMinute => 1,
        EntityKind::DateDay => 2,
        EntityKind::Cardinal => 3,
        _ => 4,
    }
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn whole_word(text: &str, start: usize, end: usize) -> bool {
    let before_ok = start == 0 || !text[..start].chars().next_back().is_some_and(is_word_char);
    let after_ok = end == text.len() || !text[end..].chars().next().is_some_and(is_word_char);
    before_ok && after_ok
}

/// Collects every rule hit in byte offsets. `blocked` regions (full money,
/// time, and date pattern matches) suppress standalone-number candidates.
fn collect_candidates(text: &str, registry: &SensitivityRegistry) -> Vec<Candidate> {
    let mut candidates = Vec::new();
    let mut blocked: Vec<(usize, usize)> = Vec::new();

    for m in MONEY_RE.find_iter(text) {
        if let Some(value) = parse_numeric_surface(m.as_str()) {
            candidates.push(Candidate {
                start: m.start(),
                end: m.end(),
                kind: EntityKind::Money,
                numeric_value: Some(value),
                pool_index: None,
            });
            blocked.push((m.start(), m.end()));
        }
    }

    for caps in TIME_RE.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let hour = caps.get(1).unwrap();
        let minute = caps.get(2).unwrap();
        candidates.push(Candidate {
            start: hour.start(),
            end: hour.end(),
            kind: EntityKind::TimeHour,
            numeric_value: Some(hour.as_str().parse().unwrap()),
            pool_index: None,
        });
        candidates.push(Candidate {
            start: minute.start(),
            end: minute.end(),
            kind: EntityKind::TimeMinute,
            numeric_value: Some(minute.as_str().parse().unwrap()),
            pool_index: None,
        });
        blocked.push((whole.start(), whole.end()));
    }

    for caps in DATE_MONTH_DAY_RE.captures_iter(text) {
        push_day_candidate(&caps, &mut candidates, &mut blocked);
    }
    for caps in DATE_DAY_MONTH_RE.captures_iter(text) {
        push_day_candidate(&caps, &mut candidates, &mut blocked);
    }
    for caps in DATE_ISO_RE.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let month: f64 = caps.get(2).unwrap().as_str().parse().unwrap();
        let day_match = caps.get(3).unwrap();
        let day: f64 = day_match.as_str().parse().unwrap();
        if (1.0..=12.0).contains(&month) && (1.0..=31.0).contains(&day) {
            candidates.push(Candidate {
                start: day_match.start(),
                end: day_match.end(),
                kind: EntityKind::DateDay,
                numeric_value: Some(day),
                pool_index: None,
            });
            blocked.push((whole.start(), whole.end()));
        }
    }

    for m in CARDINAL_RE.find_iter(text) {
        let range = (m.start(), m.end());
        if blocked.iter().any(|&b| overlaps(range, b)) {
            continue;
        }
        if let Some(value) = parse_numeric_surface(m.as_str()) {
            candidates.push(Candidate {
                start: m.start(),
                end: m.end(),
                kind: EntityKind::Cardinal,
                numeric_value: Some(value),
                pool_index: None,
            });
        }
    }

    let mut patterns: Vec<&str> = Vec::new();
    let mut pattern_info: Vec<(EntityKind, usize)> = Vec::new();
    for (kind, profile) in registry.kinds() {
        if kind.class() == EntityClass::Textual {
            for (i, entry) in profile.pool.iter().enumerate() {
                patterns.push(entry.as_str());
                pattern_info.push((kind, i));
            }
        }
    }
    if !patterns.is_empty() {
        let ac = AhoCorasick::new(&patterns).expect("pool automaton");
        for m in ac.find_overlapping_iter(text) {
            if !whole_word(text, m.start(), m.end()) {
                continue;
            }
            let (kind, pool_index) = pattern_info[m.pattern().as_usize()];
            candidates.push(Candidate {
                start: m.start(),
                end: m.end(),
                kind,
                numeric_value: None,
                pool_index: Some(pool_index),
            });
        }
    }

    candidates
}

/// Longest-leftmost-priority overlap resolution over byte-offset candidates.
fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(kind_priority(a.kind).cmp(&kind_priority(b.kind)))
            .then((a.kind as u8).cmp(&(b.kind as u8)))
    });
    let mut accepted: Vec<Candidate> = Vec::new();
    for cand in candidates {
        if !accepted
            .iter()
            .any(|a| overlaps((a.start, a.end), (cand.start, cand.end)))
        {
            accepted.push(cand);
        }
    }
    accepted.sort_by_key(|c| c.start);
    accepted
}

fn finish(text: &str, index: &CharIndex, accepted: Vec<Candidate>) -> ExtractionResult {
    let mut spans = Vec::with_capacity(accepted.len());
    let mut counts: BTreeMap<EntityKind, usize> = BTreeMap::new();
    for c in accepted {
        let start = index.char_of_byte(c.start);
        let end = index.char_of_byte(c.end);
        spans.push(EntitySpan {
            start,
            end,
            kind: c.kind,
            surface: text[c.start..c.end].to_owned(),
            numeric_value: c.numeric_value,
            pool_index: c.pool_index,
        });
        *counts.entry(c.kind).or_insert(0) += 1;
    }
    let density = spans.len() as f64 / index.char_len().max(1) as f64;
    ExtractionResult {
        spans,
        counts,
        density,
    }
}

/// Runs rule-based extraction over `text`. Deterministic: equal inputs give
/// equal results.
pub fn extract(text: &str, registry: &SensitivityRegistry) -> ExtractionResult {
    let index = CharIndex::new(text);
    let accepted = resolve_overlaps(collect_candidates(text, registry));
    finish(text, &index, accepted)
}

fn nearest_pool_index(pool: &[String], surface: &str) -> usize {
    if let Some(i) = pool.iter().position(|p| p == surface) {
        return i;
    }
    let common_prefix = |a: &str, b: &str| {
        a.bytes()
            .zip(b.bytes())
            .take_while(|(x, y)| x == y)
            .count()
    };
    let mut best = 0usize;
    let mut best_key = (0usize, std::cmp::Reverse(pool[0].clone()));
    for (i, entry) in pool.iter().enumerate() {
        let key = (common_prefix(entry, surface), std::cmp::Reverse(entry.clone()));
        if i == 0 || key > best_key {
            best = i;
            best_key = key;
        }
    }
    best
}

/// Validates externally supplied spans against `text`, fills in surfaces,
/// values, and pool indices, then extends the set with non-overlapping rule
/// matches.
pub fn merge_annotations(
    text: &str,
    supplied: &[AnnotationSpan],
    registry: &SensitivityRegistry,
) -> Result<ExtractionResult> {
    let index = CharIndex::new(text);
    let char_len = index.char_len();
    let mut pinned: Vec<Candidate> = Vec::with_capacity(supplied.len());

    for ann in supplied {
        if ann.start >= ann.end || ann.end > char_len {
            return Err(Error::Annotation(format!(
                "span {}..{} ({}) is out of range for a {char_len}-character text",
                ann.start, ann.end, ann.kind
            )));
        }
        let surface = index.slice(text, ann.start, ann.end);
        if let Some(expected) = &ann.surface {
            if expected != surface {
                return Err(Error::Annotation(format!(
                    "span {}..{} reads {surface:?}, annotation says {expected:?}",
                    ann.start, ann.end
                )));
            }
        }
        let (numeric_value, pool_index) = match ann.kind.class() {
            EntityClass::Numeric => {
                let value = parse_numeric_surface(surface).ok_or_else(|| {
                    Error::Annotation(format!(
                        "span {}..{} ({}): surface {surface:?} is not numeric",
                        ann.start, ann.end, ann.kind
                    ))
                })?;
                (Some(value), None)
            }
            EntityClass::Textual => {
                let pool = registry.pool(ann.kind)?;
                (None, Some(nearest_pool_index(pool, surface)))
            }
        };
        pinned.push(Candidate {
            start: index.byte(ann.start),
            end: index.byte(ann.end),
            kind: ann.kind,
            numeric_value,
            pool_index,
        });
    }

    pinned.sort_by_key(|c| c.start);
    for pair in pinned.windows(2) {
        if overlaps((pair[0].start, pair[0].end), (pair[1].start, pair[1].end)) {
            return Err(Error::Annotation(format!(
                "supplied spans overlap at bytes {}..{} and {}..{}",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }

    let mut merged = pinned.clone();
    for cand in resolve_overlaps(collect_candidates(text, registry)) {
        if !pinned
            .iter()
            .any(|p| overlaps((p.start, p.end), (cand.start, cand.end)))
        {
            merged.push(cand);
        }
    }
    merged.sort_by_key(|c| c.start);
    Ok(finish(text, &index, merged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::EntityKind as K;

    fn reg() -> SensitivityRegistry {
        SensitivityRegistry::default()
    }

    fn kinds(result: &ExtractionResult) -> Vec<(K, &str)> {
        result
            .spans
            .iter()
            .map(|s| (s.kind, s.surface.as_str()))
            .collect()
    }

    #[test]
    fn mixed_sentence_extracts_all_kinds() {
        let text = "Alice paid $250 on March 14 at 09:45";
        let result = extract(text, &reg());
        assert_eq!(
            kinds(&result),
            vec![
                (K::Person, "Alice"),
                (K::Money, "$250"),
                (K::DateDay, "14"),
                (K::TimeHour, "09"),
                (K::TimeMinute, "45"),
            ]
        );
        let money = &result.spans[1];
        assert_eq!(money.numeric_value, Some(250.0));
        let hour = &result.spans[3];
        assert_eq!(hour.numeric_value, Some(9.0));
        assert_eq!(result.counts[&K::Person], 1);
        assert_eq!(result.counts.len(), 5);
        assert!((result.density - 5.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn surfaces_match_text_slices() {
        let text = "Café révénue €1,250.75 at 7:05 near Vienna on 3 May";
        let result = extract(text, &reg());
        assert!(!result.spans.is_empty());
        let chars: Vec<char> = text.chars().collect();
        for span in &result.spans {
            let slice: String = chars[span.start..span.end].iter().collect();
            assert_eq!(slice, span.surface, "span {span:?}");
        }
        let money = result.spans.iter().find(|s| s.kind == K::Money).unwrap();
        assert_eq!(money.surface, "€1,250.75");
        assert_eq!(money.numeric_value, Some(1250.75));
    }

    #[test]
    fn year_inside_iso_date_is_not_a_cardinal() {
        let result = extract("shipped 2024-03-14 with 77 boxes", &reg());
        assert_eq!(
            kinds(&result),
            vec![(K::DateDay, "14"), (K::Cardinal, "77")]
        );
    }

    #[test]
    fn invalid_day_and_time_fall_back_to_cardinals() {
        let result = extract("March 45 at 25:99", &reg());
        let got = kinds(&result);
        assert!(got.contains(&(K::Cardinal, "45")), "{got:?}");
        assert!(!got.iter().any(|(k, _)| *k == K::DateDay));
        assert!(!got.iter().any(|(k, _)| *k == K::TimeHour));
    }

    #[test]
    fn gazetteer_is_case_sensitive_and_whole_word() {
        let result = extract("alice visited Aliceville while Alice slept", &reg());
        assert_eq!(kinds(&result), vec![(K::Person, "Alice")]);
    }

    #[test]
    fn spans_never_overlap() {
        let texts = [
            "Alice paid $250 on March 14 at 09:45",
            "$1,000 1,000 10:30 2024-01-02 Berlin Vienna Alice",
            "14 March and March 14 and 2024-03-14",
        ];
        for text in texts {
            let result = extract(text, &reg());
            for pair in result.spans.windows(2) {
                assert!(pair[0].end <= pair[1].start, "{text}: {pair:?}");
            }
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let text = "Vera moved $3,200 to Oslo on 2 June at 18:05; ticket 4381.";
        assert_eq!(extract(text, &reg()), extract(text, &reg()));
    }

    #[test]
    fn empty_and_plain_text_extract_nothing() {
        let empty = extract("", &reg());
        assert!(empty.spans.is_empty());
        assert_eq!(empty.density, 0.0);
        let plain = extract("nothing to see here", &reg());
        assert!(plain.spans.is_empty());
        assert!(plain.counts.is_empty());
    }

    #[test]
    fn counts_track_multiplicity() {
        let result = extract("Alice met Omar and Alice paid 12 then 99", &reg());
        assert_eq!(result.counts[&K::Person], 3);
        assert_eq!(result.counts[&K::Cardinal], 2);
    }

    #[test]
    fn numeric_format_round_trip_styles() {
        assert_eq!(format_numeric_like("$250", 180.0), "$180");
        assert_eq!(format_numeric_like("1,250,000", 980123.0), "980,123");
        assert_eq!(format_numeric_like("09", 7.0), "07");
        assert_eq!(format_numeric_like("3.25", 4.1), "4.10");
        assert_eq!(format_numeric_like("€1,250.75", 88.5), "€88.50");
        assert_eq!(format_numeric_like("45", 0.0), "0");
    }

    #[test]
    fn merge_accepts_valid_annotations() {
        let text = "the visitor Zorblatt paid $250";
        let supplied = vec![AnnotationSpan {
            start: 12,
            end: 20,
            kind: K::Person,
            surface: None,
        }];
        let result = merge_annotations(text, &supplied, &reg()).unwrap();
        let got = kinds(&result);
        assert_eq!(got[0], (K::Person, "Zorblatt"));
        assert!(got.contains(&(K::Money, "$250")));
        // Out-of-pool surface maps to some valid pool index.
        assert!(result.spans[0].pool_index.unwrap() < reg().pool(K::Person).unwrap().len());
    }

    #[test]
    fn merge_rejects_bad_offsets_and_mismatches() {
        let text = "short";
        let out_of_range = vec![AnnotationSpan {
            start: 2,
            end: 99,
            kind: K::Person,
            surface: None,
        }];
        assert!(merge_annotations(text, &out_of_range, &reg()).is_err());

        let mismatch = vec![AnnotationSpan {
            start: 0,
            end: 5,
            kind: K::Person,
            surface: Some("other".into()),
        }];
        assert!(merge_annotations(text, &mismatch, &reg()).is_err());

        let not_numeric = vec![AnnotationSpan {
            start: 0,
            end: 5,
            kind: K::Money,
            surface: None,
        }];
        assert!(merge_annotations(text, &not_numeric, &reg()).is_err());
    }

    #[test]
    fn merge_rejects_overlapping_annotations() {
        let text = "Alice Bellweather";
        let supplied = vec![
            AnnotationSpan {
                start: 0,
                end: 10,
                kind: K::Person,
                surface: None,
            },
            AnnotationSpan {
                start: 6,
                end: 17,
                kind: K::Org,
                surface: None,
            },
        ];
        assert!(merge_annotations(text, &supplied, &reg()).is_err());
    }

    #[test]
    fn merge_prefers_supplied_spans_over_rules() {
        let text = "Alice paid $250";
        let supplied = vec![AnnotationSpan {
            start: 0,
            end: 10,
            kind: K::Org,
            surface: None,
        }];
        let result = merge_annotations(text, &supplied, &reg()).unwrap();
        assert_eq!(result.spans[0].kind, K::Org);
        assert_eq!(result.spans[0].surface, "Alice paid");
        assert!(!kinds(&result).contains(&(K::Person, "Alice")));
        assert!(kinds(&result).contains(&(K::Money, "$250")));
    }

    #[test]
    fn nearest_pool_index_prefers_shared_prefix() {
        let pool: Vec<String> = ["Anna", "Annette", "Bob"].iter().map(|s| s.to_string()).collect();
        assert_eq!(nearest_pool_index(&pool, "Annette"), 1);
        assert_eq!(nearest_pool_index(&pool, "Annet"), 1);
        assert_eq!(nearest_pool_index(&pool, "Ann"), 0);
        assert_eq!(nearest_pool_index(&pool, "Zed"), 0);
    }
}
