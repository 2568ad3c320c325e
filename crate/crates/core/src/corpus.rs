//! Corpus handling: JSONL document IO, the eligibility filter, and a
//! synthetic generator for classifier experiments.
//!
//! The generator builds each document from hash-defined topic trigram
//! chains over a fixed vocabulary. A context's candidate continuations and
//! their base weights are pure functions of `(seed, topic, context)`, so the
//! corpus is reproducible without storing any model. Class membership only
//! changes the sampling temperature: machine-labeled documents sample the
//! chains sharply, human-labeled ones sample them flat. Entity mentions are
//! injected on a rotating schedule with identical statistics in both
//! classes.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::entity::{EntityClass, EntityKind, SensitivityRegistry};
use crate::error::{Error, Result};
use crate::extract::{extract, AnnotationSpan};
use crate::mech::{stable_hash, RandomSource};

const GENERATOR_WORDS: &str = include_str!("../data/words.txt");

const MONTH_NAMES: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

/// Document class for supervised runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Machine,
}

impl Label {
    /// Regression target: human 0, machine 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Human => 0.0,
            Label::Machine => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Human => f.write_str("human"),
            Label::Machine => f.write_str("machine"),
        }
    }
}

/// One corpus entry. `entities` carries externally supplied annotations;
/// when absent, rule extraction decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<AnnotationSpan>>,
}

/// Reads a JSONL corpus. Blank lines are tolerated; anything else that does
/// not parse fails with its one-based line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::CorruptLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes a JSONL corpus, one document per line.
pub fn write_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| Error::json(path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Why the filter excluded a document. Checks run in declaration order and
/// the first failure wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Length,
    MissingNumeric,
    MissingTextual,
    Density,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RejectReason::Length => "length",
            RejectReason::MissingNumeric => "missing_numeric",
            RejectReason::MissingTextual => "missing_textual",
            RejectReason::Density => "density",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedDocument {
    pub doc_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_chars: usize,
    pub max_chars: usize,
    /// Entity spans per character must strictly exceed this.
    pub min_density: f64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_chars: 100,
            max_chars: 15_000,
            min_density: 0.003,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub rejected: Vec<RejectedDocument>,
}

/// Applies the eligibility checks to each document: character length window,
/// at least one numeric span, at least one textual span, then span density.
pub fn filter_corpus(
    docs: Vec<Document>,
    policy: &FilterPolicy,
    registry: &SensitivityRegistry,
) -> FilterOutcome {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for doc in docs {
        let chars = doc.text.chars().count();
        if chars < policy.min_chars || chars > policy.max_chars {
            rejected.push(RejectedDocument {
                doc_id: doc.doc_id,
                reason: RejectReason::Length,
            });
            continue;
        }
        let extraction = extract(&doc.text, registry);
        let has_class = |class: EntityClass| {
            extraction
                .counts
                .iter()
                .any(|(kind, &count)| count > 0 && kind.class() == class)
        };
        if !has_class(EntityClass::Numeric) {
            rejected.push(RejectedDocument {
                doc_id: doc.doc_id,
                reason: RejectReason::MissingNumeric,
            });
            continue;
        }
        if !has_class(EntityClass::Textual) {
            rejected.push(RejectedDocument {
                doc_id: doc.doc_id,
                reason: RejectReason::MissingTextual,
            });
            continue;
        }
        if extraction.density <= policy.min_density {
            rejected.push(RejectedDocument {
                doc_id: doc.doc_id,
                reason: RejectReason::Density,
            });
            continue;
        }
        kept.push(doc);
    }
    FilterOutcome { kept, rejected }
}

/// Synthetic corpus parameters. Temperatures are `(low, high)` ranges
/// jittered per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub topics: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Mean number of word tokens between entity injections.
    pub entity_gap: usize,
    pub human_temperature: (f64, f64),
    pub machine_temperature: (f64, f64),
    /// Continuations drawn per context.
    pub candidates: usize,
    /// Topic base sharpness range for the chain weights.
    pub sharpness: (f64, f64),
    /// Active word list size per topic. Small enough that trigram contexts
    /// recur across the corpus and a scorer can estimate their statistics.
    pub topic_vocab: usize,
    /// Per-document fraction of filler tokens drawn from outside every
    /// topic list, jittered uniformly in this range for both classes.
    pub noise_rate: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 200,
            seed: 1,
            topics: 4,
            min_tokens: 150,
            max_tokens: 230,
            entity_gap: 12,
            human_temperature: (0.9, 1.3),
            machine_temperature: (0.9, 1.3),
            candidates: 12,
            sharpness: (0.9, 1.2),
            topic_vocab: 64,
            noise_rate: (0.02, 0.12),
        }
    }
}

fn range_sample(range: (f64, f64), rng: &mut RandomSource) -> f64 {
    range.0 + (range.1 - range.0) * rng.next_f64()
}

/// Hash-selects `size` distinct words as one topic's active list.
fn topic_words<'a>(vocab: &[&'a str], seed: u64, topic: u64, size: usize) -> Vec<&'a str> {
    let size = size.min(vocab.len());
    let mut words: Vec<&'a str> = Vec::with_capacity(size);
    for slot in 0u64.. {
        if words.len() == size || slot >= 64 * size as u64 {
            break;
        }
        let h = stable_hash(&[
            &seed.to_le_bytes(),
            b"topic-words",
            &topic.to_le_bytes(),
            &slot.to_le_bytes(),
        ]);
        let word = vocab[(h % vocab.len() as u64) as usize];
        if !words.contains(&word) {
            words.push(word);
        }
    }
    // Collision-heavy hash streams leave a shortfall; top up in list order.
    for word in vocab {
        if words.len() == size {
            break;
        }
        if !words.contains(word) {
            words.push(word);
        }
    }
    words
}

/// Off-topic filler comes from one shared lexicon of this many words, so the
/// scorer's vocabulary stays bounded while filler still scores poorly in any
/// particular trigram context.
const NOISE_LEXICON: usize = 512;

/// Deterministic five-letter filler token, the `index`-th entry of the run's
/// shared noise lexicon.
fn noise_word(seed: u64, index: u64) -> String {
    let mut h = stable_hash(&[&seed.to_le_bytes(), b"noise", &index.to_le_bytes()]);
    let mut word = String::with_capacity(5);
    for _ in 0..5 {
        word.push((b'a' + (h % 26) as u8) as char);
        h /= 26;
    }
    word
}

/// Hash-defined trigram chain for one topic, sampled at one temperature.
struct ChainSampler<'a> {
    vocab: &'a [&'a str],
    seed: u64,
    topic: u64,
    candidates: usize,
    /// Zipf exponent already divided by the document temperature.
    exponent: f64,
}

impl ChainSampler<'_> {
    /// Continuations are keyed by the immediately preceding word alone, so
    /// the reachable bigram contexts stay few enough to recur across the
    /// corpus and build up real counts.
    fn next_word(&self, b: &str, rng: &mut RandomSource) -> &str {
        let mut words = Vec::with_capacity(self.candidates);
        let mut weights = Vec::with_capacity(self.candidates);
        let mut total = 0.0;
        for j in 0..self.candidates {
            let h = stable_hash(&[
                &self.seed.to_le_bytes(),
                &self.topic.to_le_bytes(),
                b.as_bytes(),
                &(j as u64).to_le_bytes(),
            ]);
            let word = self.vocab[(h % self.vocab.len() as u64) as usize];
            let weight = ((j + 1) as f64).powf(-self.exponent);
            words.push(word);
            weights.push(weight);
            total += weight;
        }
        let mut draw = rng.next_f64() * total;
        for (word, weight) in words.iter().zip(&weights) {
            draw -= weight;
            if draw <= 0.0 {
                return word;
            }
        }
        words[words.len() - 1]
    }
}

/// Draws a slot index under a steep Zipf profile; slot 0 dominates.
fn zipf_slot(count: usize, steepness: f64, rng: &mut RandomSource) -> usize {
    let weight = |i: usize| (i as f64 + 1.0).powf(-steepness);
    let total: f64 = (0..count).map(weight).sum();
    let mut draw = rng.next_f64() * total;
    for i in 0..count {
        draw -= weight(i);
        if draw <= 0.0 {
            return i;
        }
    }
    count - 1
}

/// Machine documents reuse a handful of favorite pool entries per topic;
/// the repetition is what gives their mentions learnable context statistics.
fn favored_pool_pick<'a>(
    pool: &'a [String],
    seed: u64,
    topic: u64,
    kind: EntityKind,
    rng: &mut RandomSource,
) -> &'a str {
    if rng.next_f64() < 0.08 {
        return &pool[rng.uniform_index(pool.len())];
    }
    let slot = zipf_slot(pool.len().min(3), 2.0, rng) as u64;
    let h = stable_hash(&[
        &seed.to_le_bytes(),
        &topic.to_le_bytes(),
        kind.tag().as_bytes(),
        &slot.to_le_bytes(),
    ]);
    &pool[(h % pool.len() as u64) as usize]
}

/// Machine counterpart for numeric surfaces: a few favorite values per
/// (topic, tag) with a small uniform escape.
fn favored_value(
    seed: u64,
    topic: u64,
    tag: &str,
    range: usize,
    rng: &mut RandomSource,
) -> usize {
    if rng.next_f64() < 0.1 {
        return rng.uniform_index(range);
    }
    let slot = zipf_slot(3, 2.0, rng) as u64;
    let h = stable_hash(&[
        &seed.to_le_bytes(),
        &topic.to_le_bytes(),
        tag.as_bytes(),
        &slot.to_le_bytes(),
    ]);
    (h % range as u64) as usize
}

/// Every injection is led in by a short carrier phrase drawn from a small
/// per-(topic, kind) library. Both classes use the same library with the
/// same frequencies, so the phrase itself carries no label signal; it pins
/// down the trigram context in which the entity value is read.
fn intro_phrase(seed: u64, topic: u64, kind_tag: &str, words: &[&str], rng: &mut RandomSource) -> String {
    let slot = zipf_slot(4, 1.3, rng) as u64;
    let pick = |part: u64| {
        let h = stable_hash(&[
            &seed.to_le_bytes(),
            &topic.to_le_bytes(),
            kind_tag.as_bytes(),
            &slot.to_le_bytes(),
            &part.to_le_bytes(),
        ]);
        words[(h % words.len() as u64) as usize]
    };
    format!("{} {}", pick(1), pick(2))
}

/// Surface templates the generator rotates through. A date surface extracts
/// as a day-of-month span; a time surface extracts as an hour span and a
/// minute span.
#[derive(Debug, Clone, Copy)]
enum Injection {
    Person,
    Money,
    Gpe,
    Date,
    Time,
    Cardinal,
}

const INJECTION_ORDER: [Injection; 12] = [
    Injection::Person,
    Injection::Gpe,
    Injection::Money,
    Injection::Person,
    Injection::Gpe,
    Injection::Date,
    Injection::Person,
    Injection::Gpe,
    Injection::Time,
    Injection::Person,
    Injection::Gpe,
    Injection::Cardinal,
];

/// Renders one injected entity as carrier phrase plus value surface. The
/// phrase distribution is shared by both classes; the value is drawn from
/// topic favorites for machine documents and uniformly for human ones.
fn render_entity(
    injection: Injection,
    seed: u64,
    topic: u64,
    label: Label,
    words: &[&str],
    registry: &SensitivityRegistry,
    rng: &mut RandomSource,
) -> Result<String> {
    let machine = label == Label::Machine;
    let pick_value = |tag: &str, range: usize, rng: &mut RandomSource| {
        if machine {
            favored_value(seed, topic, tag, range, rng)
        } else {
            rng.uniform_index(range)
        }
    };
    let (kind_tag, surface) = match injection {
        Injection::Person | Injection::Gpe => {
            let kind = match injection {
                Injection::Person => EntityKind::Person,
                _ => EntityKind::Gpe,
            };
            let pool = registry.pool(kind)?;
            let name = if machine {
                favored_pool_pick(pool, seed, topic, kind, rng)
            } else {
                &pool[rng.uniform_index(pool.len())]
            };
            (kind.tag(), name.to_string())
        }
        Injection::Money => {
            let amount = 10 + pick_value("money", 1990, rng);
            ("MONEY", format!("${amount}"))
        }
        Injection::Date => {
            let month = MONTH_NAMES[pick_value("date-month", 12, rng)];
            let day = 1 + pick_value("date-day", 28, rng);
            ("DATE", format!("{month} {day}"))
        }
        Injection::Time => {
            let hour = pick_value("time-hour", 24, rng);
            let minute = pick_value("time-minute", 60, rng);
            ("TIME", format!("{hour:02}:{minute:02}"))
        }
        Injection::Cardinal => ("CARDINAL", format!("{}", 2 + pick_value("cardinal", 498, rng))),
    };
    let intro = intro_phrase(seed, topic, kind_tag, words, rng);
    Ok(format!("{intro} {surface}"))
}

fn generate_document(
    config: &SynthConfig,
    vocab: &[&str],
    registry: &SensitivityRegistry,
    label: Label,
    index: usize,
) -> Result<Document> {
    let class_tag: &[u8] = match label {
        Label::Human => b"human",
        Label::Machine => b"machine",
    };
    let doc_seed = stable_hash(&[
        &config.seed.to_le_bytes(),
        class_tag,
        &(index as u64).to_le_bytes(),
    ]);
    let mut rng = RandomSource::new(doc_seed, 0);

    let topic = rng.uniform_index(config.topics) as u64;
    let temperature = match label {
        Label::Human => range_sample(config.human_temperature, &mut rng),
        Label::Machine => range_sample(config.machine_temperature, &mut rng),
    };
    let span = config.sharpness.1 - config.sharpness.0;
    let sharpness = config.sharpness.0
        + span
            * (stable_hash(&[&config.seed.to_le_bytes(), b"sharpness", &topic.to_le_bytes()])
                as f64
                / u64::MAX as f64);
    let words = topic_words(vocab, config.seed, topic, config.topic_vocab);
    let sampler = ChainSampler {
        vocab: &words,
        seed: config.seed,
        topic,
        candidates: config.candidates,
        exponent: sharpness / temperature,
    };
    let noise_rate = range_sample(config.noise_rate, &mut rng);

    let n_tokens = config.min_tokens + rng.uniform_index(config.max_tokens - config.min_tokens + 1);
    let mut pieces: Vec<String> = Vec::with_capacity(n_tokens + n_tokens / 8);
    let mut last = "^".to_string();
    let mut until_entity = 4 + rng.uniform_index(8);
    let mut injection = rng.uniform_index(INJECTION_ORDER.len());
    let mut until_period = 9 + rng.uniform_index(6);
    let mut emitted = 0usize;

    while emitted < n_tokens {
        if until_entity == 0 {
            let template = INJECTION_ORDER[injection % INJECTION_ORDER.len()];
            injection += 1;
            let surface = render_entity(
                template,
                config.seed,
                topic,
                label,
                &words,
                registry,
                &mut rng,
            )?;
            // The chain context is left alone: the topic thread picks up
            // again after the mention, the way a name or figure sits inside
            // an otherwise ordinary sentence.
            emitted += crate::scorer::tokenize(&surface).len();
            pieces.push(surface);
            until_entity = config.entity_gap / 2 + rng.uniform_index(config.entity_gap.max(1));
            until_period = until_period.max(2);
            continue;
        }
        if until_period == 0 {
            let last = pieces.len() - 1;
            pieces[last].push('.');
            until_period = 9 + rng.uniform_index(6);
        }
        if rng.next_f64() < noise_rate {
            let index = rng.uniform_index(NOISE_LEXICON) as u64;
            pieces.push(noise_word(config.seed, index));
        } else {
            let word = sampler.next_word(&last, &mut rng);
            pieces.push(word.to_string());
            last = word.to_string();
        }
        emitted += 1;
        until_entity -= 1;
        until_period -= 1;
    }

    let mut text = pieces.join(" ");
    text.push('.');
    let short = match label {
        Label::Human => 'h',
        Label::Machine => 'm',
    };
    Ok(Document {
        doc_id: format!("synth-{short}-{index:04}"),
        text,
        label: Some(label),
        source: Some(format!("synthetic:topic={topic}")),
        entities: None,
    })
}

/// Generates `2 * n_per_class` labeled documents. Every document passes the
/// default filter policy; the whole corpus is a pure function of the config.
///
/// Both classes share the same topic chains, temperatures, and carrier
/// phrases. They differ in entity diversity: machine documents keep reusing
/// a few favorite names and values per topic, human documents spread their
/// mentions over the whole pools. A scorer trained on the corpus therefore
/// assigns machine mentions concentrated context statistics, which is what
/// the perturbation response features pick up.
pub fn generate_synthetic(
    config: &SynthConfig,
    registry: &SensitivityRegistry,
) -> Result<Vec<Document>> {
    if config.n_per_class == 0 {
        return Err(Error::Parameter("n_per_class must be positive".into()));
    }
    if config.topics == 0 || config.candidates == 0 {
        return Err(Error::Parameter(
            "topics and candidates must be positive".into(),
        ));
    }
    if config.min_tokens < 40 || config.max_tokens < config.min_tokens {
        return Err(Error::Parameter(format!(
            "token window [{}, {}] is too small to satisfy the filter",
            config.min_tokens, config.max_tokens
        )));
    }
    if config.entity_gap == 0 || config.entity_gap > config.min_tokens / 4 {
        return Err(Error::Parameter(format!(
            "entity_gap {} must lie in [1, {}] so every document gets both entity classes",
            config.entity_gap,
            config.min_tokens / 4
        )));
    }
    if config.topic_vocab < 16 {
        return Err(Error::Parameter(format!(
            "topic_vocab {} is too small for distinct trigram contexts",
            config.topic_vocab
        )));
    }
    let (noise_lo, noise_hi) = config.noise_rate;
    if !(0.0..=0.4).contains(&noise_lo) || !(noise_lo..=0.4).contains(&noise_hi) {
        return Err(Error::Parameter(format!(
            "noise_rate ({noise_lo}, {noise_hi}) must be an ordered range within [0, 0.4]"
        )));
    }
    let vocab: Vec<&str> = GENERATOR_WORDS
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .collect();
    let mut docs = Vec::with_capacity(config.n_per_class * 2);
    for index in 0..config.n_per_class {
        docs.push(generate_document(
            config,
            &vocab,
            registry,
            Label::Human,
            index,
        )?);
        docs.push(generate_document(
            config,
            &vocab,
            registry,
            Label::Machine,
            index,
        )?);
    }
    Ok(docs)
}
