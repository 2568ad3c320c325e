//! Entity taxonomy and the per-kind sensitivity registry.
//!
//! The registry carries everything the budget allocator and the perturbation
//! mechanisms need to know about a kind: its sensitivity `delta`, its base
//! weight, optional value bounds for numeric kinds, and the candidate pool
//! for textual kinds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Cardinal,
    Money,
    DateDay,
    TimeHour,
    TimeMinute,
    Person,
    Gpe,
    Org,
    Product,
    Event,
    WorkOfArt,
    Fac,
    Law,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityClass {
    Numeric,
    Textual,
}

impl EntityKind {
    pub const ALL: [EntityKind; 13] = [
        EntityKind::Cardinal,
        EntityKind::Money,
        EntityKind::DateDay,
        EntityKind::TimeHour,
        EntityKind::TimeMinute,
        EntityKind::Person,
        EntityKind::Gpe,
        EntityKind::Org,
        EntityKind::Product,
        EntityKind::Event,
        EntityKind::WorkOfArt,
        EntityKind::Fac,
        EntityKind::Law,
    ];

    pub fn class(self) -> EntityClass {
        match self {
            EntityKind::Cardinal
            | EntityKind::Money
            | EntityKind::DateDay
            | EntityKind::TimeHour
            | EntityKind::TimeMinute => EntityClass::Numeric,
            _ => EntityClass::Textual,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EntityKind::Cardinal => "CARDINAL",
            EntityKind::Money => "MONEY",
            EntityKind::DateDay => "DATE_DAY",
            EntityKind::TimeHour => "TIME_HOUR",
            EntityKind::TimeMinute => "TIME_MINUTE",
            EntityKind::Person => "PERSON",
            EntityKind::Gpe => "GPE",
            EntityKind::Org => "ORG",
            EntityKind::Product => "PRODUCT",
            EntityKind::Event => "EVENT",
            EntityKind::WorkOfArt => "WORK_OF_ART",
            EntityKind::Fac => "FAC",
            EntityKind::Law => "LAW",
        }
    }

    /// Replacement token for instances past a bucket's perturbation cutoff.
    pub fn placeholder(self) -> String {
        format!("[{}]", self.tag())
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown entity kind {s:?}")))
    }
}

/// Closed interval a perturbed numeric value is clamped into. Either side may
/// be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl ValueBounds {
    pub fn new(min: Option<f64>, max: Option<f64>) -> Self {
        ValueBounds { min, max }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        let mut v = value;
        if let Some(lo) = self.min {
            v = v.max(lo);
        }
        if let Some(hi) = self.max {
            v = v.min(hi);
        }
        v
    }
}

/// One contiguous entity occurrence. Offsets are character offsets into the
/// source text, half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub surface: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_index: Option<usize>,
}

impl EntitySpan {
    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Annotation(format!(
                "span {}..{} is empty or reversed",
                self.start, self.end
            )));
        }
        match self.kind.class() {
            EntityClass::Numeric => {
                if self.numeric_value.is_none() || self.pool_index.is_some() {
                    return Err(Error::Annotation(format!(
                        "numeric span {:?} must carry numeric_value and no pool_index",
                        self.surface
                    )));
                }
            }
            EntityClass::Textual => {
                if self.pool_index.is_none() || self.numeric_value.is_some() {
                    return Err(Error::Annotation(format!(
                        "textual span {:?} must carry pool_index and no numeric_value",
                        self.surface
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How the per-bucket weight responds to entity counts.
///
/// `Static` keeps the weight a function of the kind alone; the occurrence
/// count enters the allocation only through the noisy-count factor. `Counted`
/// additionally multiplies the weight by `count + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    #[default]
    Static,
    Counted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindProfile {
    pub delta: f64,
    pub base_weight: f64,
    pub bounds: Option<ValueBounds>,
    pub pool: Vec<String>,
}

/// Per-kind sensitivities, weights, bounds, and candidate pools.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRegistry {
    kinds: BTreeMap<EntityKind, KindProfile>,
}

const POOL_PERSON: &str = include_str!("../data/pools/person.txt");
const POOL_GPE: &str = include_str!("../data/pools/gpe.txt");
const POOL_ORG: &str = include_str!("../data/pools/org.txt");
const POOL_PRODUCT: &str = include_str!("../data/pools/product.txt");
const POOL_EVENT: &str = include_str!("../data/pools/event.txt");
const POOL_WORK_OF_ART: &str = include_str!("../data/pools/work_of_art.txt");
const POOL_FAC: &str = include_str!("../data/pools/fac.txt");
const POOL_LAW: &str = include_str!("../data/pools/law.txt");

fn parse_pool(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

fn bundled_pool(kind: EntityKind) -> Vec<String> {
    let raw = match kind {
        EntityKind::Person => POOL_PERSON,
        EntityKind::Gpe => POOL_GPE,
        EntityKind::Org => POOL_ORG,
        EntityKind::Product => POOL_PRODUCT,
        EntityKind::Event => POOL_EVENT,
        EntityKind::WorkOfArt => POOL_WORK_OF_ART,
        EntityKind::Fac => POOL_FAC,
        EntityKind::Law => POOL_LAW,
        _ => return Vec::new(),
    };
    parse_pool(raw)
}

/// Cap applied to the sensitivity of unbounded counts and amounts.
pub const UNBOUNDED_NUMERIC_DELTA: f64 = 10_000.0;
pub const BASE_WEIGHT_NUMERIC: f64 = 0.3;
pub const BASE_WEIGHT_TEXTUAL: f64 = 0.25;

impl Default for SensitivityRegistry {
    fn default() -> Self {
        let mut kinds = BTreeMap::new();
        let numeric = [
            (EntityKind::Cardinal, UNBOUNDED_NUMERIC_DELTA, Some(0.0), None),
            (EntityKind::Money, UNBOUNDED_NUMERIC_DELTA, Some(0.0), None),
            (EntityKind::DateDay, 29.0, Some(1.0), Some(31.0)),
            (EntityKind::TimeHour, 23.0, Some(0.0), Some(23.0)),
            (EntityKind::TimeMinute, 59.0, Some(0.0), Some(59.0)),
        ];
        for (kind, delta, min, max) in numeric {
            kinds.insert(
                kind,
                KindProfile {
                    delta,
                    base_weight: BASE_WEIGHT_NUMERIC,
                    bounds: Some(ValueBounds::new(min, max)),
                    pool: Vec::new(),
                },
            );
        }
        for kind in EntityKind::ALL {
            if kind.class() == EntityClass::Textual {
                let pool = bundled_pool(kind);
                kinds.insert(
                    kind,
                    KindProfile {
                        delta: pool.len() as f64,
                        base_weight: BASE_WEIGHT_TEXTUAL,
                        bounds: None,
                        pool,
                    },
                );
            }
        }
        SensitivityRegistry { kinds }
    }
}

impl SensitivityRegistry {
    pub fn from_profiles(kinds: BTreeMap<EntityKind, KindProfile>) -> Result<Self> {
        let registry = SensitivityRegistry { kinds };
        registry.validate()?;
        Ok(registry)
    }

    fn validate(&self) -> Result<()> {
        for (kind, profile) in &self.kinds {
            if !(profile.delta > 0.0) {
                return Err(Error::Config(format!(
                    "{kind}: delta must be positive, got {}",
                    profile.delta
                )));
            }
            if !(profile.base_weight > 0.0) {
                return Err(Error::Config(format!(
                    "{kind}: base_weight must be positive, got {}",
                    profile.base_weight
                )));
            }
            if kind.class() == EntityClass::Textual {
                if profile.pool.len() < 2 {
                    return Err(Error::Config(format!(
                        "{kind}: candidate pool needs at least 2 entries, got {}",
                        profile.pool.len()
                    )));
                }
                if profile.delta != profile.pool.len() as f64 {
                    return Err(Error::Config(format!(
                        "{kind}: delta {} does not equal pool size {}",
                        profile.delta,
                        profile.pool.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, kind: EntityKind) -> Result<&KindProfile> {
        self.kinds
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("kind {kind} is not registered")))
    }

    pub fn delta(&self, kind: EntityKind) -> Result<f64> {
        Ok(self.profile(kind)?.delta)
    }

    pub fn bounds(&self, kind: EntityKind) -> Result<Option<ValueBounds>> {
        Ok(self.profile(kind)?.bounds)
    }

    pub fn pool(&self, kind: EntityKind) -> Result<&[String]> {
        let profile = self.profile(kind)?;
        if kind.class() != EntityClass::Textual {
            return Err(Error::Config(format!("kind {kind} has no candidate pool")));
        }
        Ok(&profile.pool)
    }

    pub fn kinds(&self) -> impl Iterator<Item = (EntityKind, &KindProfile)> {
        self.kinds.iter().map(|(k, p)| (*k, p))
    }

    /// Bucket weight for a kind: `base_weight * ln(delta + 1)`, times
    /// `count + 1` in `Counted` mode.
    pub fn weight(&self, kind: EntityKind, count: usize, mode: WeightMode) -> Result<f64> {
        let profile = self.profile(kind)?;
        let base = profile.base_weight * (profile.delta + 1.0).ln();
        Ok(match mode {
            WeightMode::Static => base,
            WeightMode::Counted => base * (count as f64 + 1.0),
        })
    }

    /// Writes the registry as a JSON file plus one pool file per textual
    /// kind, placed under `pools/` next to the JSON file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let pool_dir = dir.join("pools");
        let mut file: BTreeMap<String, KindFileEntry> = BTreeMap::new();
        for (kind, profile) in &self.kinds {
            let pool_path = if kind.class() == EntityClass::Textual {
                std::fs::create_dir_all(&pool_dir)
                    .map_err(|e| Error::io(&pool_dir, e))?;
                let rel = format!("pools/{}.txt", kind.tag().to_lowercase());
                let dest = dir.join(&rel);
                let body = profile.pool.join("\n") + "\n";
                std::fs::write(&dest, body).map_err(|e| Error::io(&dest, e))?;
                Some(rel)
            } else {
                None
            };
            file.insert(
                kind.tag().to_owned(),
                KindFileEntry {
                    delta: profile.delta,
                    base_weight: profile.base_weight,
                    bounds: profile.bounds,
                    pool_path,
                },
            );
        }
        let body = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Loads a registry JSON file written by [`SensitivityRegistry::save`].
    /// Pool paths are resolved relative to the JSON file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: BTreeMap<String, KindFileEntry> =
            serde_json::from_str(&body).map_err(|e| Error::json(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut kinds = BTreeMap::new();
        for (tag, entry) in file {
            let kind = EntityKind::from_str(&tag)?;
            let pool = match (&entry.pool_path, kind.class()) {
                (Some(rel), EntityClass::Textual) => {
                    let pool_file = dir.join(rel);
                    let raw = std::fs::read_to_string(&pool_file)
                        .map_err(|e| Error::io(&pool_file, e))?;
                    parse_pool(&raw)
                }
                (None, EntityClass::Textual) => {
                    return Err(Error::Config(format!("{kind}: missing pool_path")));
                }
                (Some(_), EntityClass::Numeric) => {
                    return Err(Error::Config(format!(
                        "{kind}: numeric kinds take no pool_path"
                    )));
                }
                (None, EntityClass::Numeric) => Vec::new(),
            };
            kinds.insert(
                kind,
                KindProfile {
                    delta: entry.delta,
                    base_weight: entry.base_weight,
                    bounds: entry.bounds,
                    pool,
                },
            );
        }
        SensitivityRegistry::from_profiles(kinds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KindFileEntry {
    delta: f64,
    base_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<ValueBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_path: Option<String>,
}
