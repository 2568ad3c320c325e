//! Document sanitization: runs the budget plan against extracted spans and
//! splices perturbed values back into the text.
//!
//! Every mechanism invocation is charged to the ledger before it draws any
//! randomness, so a budget overrun aborts the document instead of leaking an
//! unaccounted release. Spans past a bucket's perturb limit are replaced by
//! the kind's placeholder at zero cost.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alloc::{build_plan, AccountantLedger, BucketKey, BudgetPlan, PlanOptions};
use crate::entity::{EntityClass, EntityKind, SensitivityRegistry, WeightMode};
use crate::error::{Error, Result};
use crate::extract::{extract, format_numeric_like, ExtractionResult};
use crate::mech::{perturb_numeric, perturb_textual, MechanismKind, RandomSource};

fn default_count_fraction() -> f64 {
    0.1
}

/// Knobs shared by every sanitization call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SanitizeConfig {
    /// Fraction of the document budget reserved for noisy bucket counts.
    #[serde(default = "default_count_fraction")]
    pub count_fraction: f64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    /// Account all textual kinds against one shared bucket.
    #[serde(default)]
    pub collapse_text_bucket: bool,
}

impl Default for SanitizeConfig {
    fn default() -> Self {
        SanitizeConfig {
            count_fraction: default_count_fraction(),
            weight_mode: WeightMode::default(),
            collapse_text_bucket: false,
        }
    }
}

impl SanitizeConfig {
    fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            count_fraction: self.count_fraction,
            weight_mode: self.weight_mode,
            collapse_text_bucket: self.collapse_text_bucket,
        }
    }
}

/// One span's before/after, with the budget it consumed. Offsets are
/// character positions in the original text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
    pub original: String,
    pub output: String,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
}

/// A sanitized document with its full account: what was replaced, under
/// which plan, and what the ledger says was spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizedDocument {
    pub original_text: String,
    pub sanitized_text: String,
    pub records: Vec<SpanRecord>,
    pub plan: BudgetPlan,
    pub ledger: AccountantLedger,
    pub rng_seed: u64,
    pub rng_stream: u64,
}

/// Extracts entities and sanitizes them under a fresh budget plan.
pub fn sanitize(
    text: &str,
    epsilon_total: f64,
    registry: &SensitivityRegistry,
    config: &SanitizeConfig,
    seed: u64,
    stream: u64,
) -> Result<SanitizedDocument> {
    let extraction = extract(text, registry);
    sanitize_extraction(text, &extraction, epsilon_total, registry, config, seed, stream)
}

/// Sanitizes a document whose spans were already extracted. The extraction
/// must refer to `text`.
pub fn sanitize_extraction(
    text: &str,
    extraction: &ExtractionResult,
    epsilon_total: f64,
    registry: &SensitivityRegistry,
    config: &SanitizeConfig,
    seed: u64,
    stream: u64,
) -> Result<SanitizedDocument> {
    let mut rng = RandomSource::new(seed, stream);
    let plan = build_plan(
        extraction,
        epsilon_total,
        registry,
        &config.plan_options(),
        &mut rng,
    )?;
    let mut ledger = AccountantLedger::new(epsilon_total, plan.epsilon_cnt)?;

    let mut seen: std::collections::BTreeMap<BucketKey, usize> = std::collections::BTreeMap::new();
    let mut records = Vec::with_capacity(extraction.spans.len());
    for span in &extraction.spans {
        let bucket = BucketKey::for_kind(span.kind, config.collapse_text_bucket);
        let instance = *seen.entry(bucket).or_insert(0);
        *seen.get_mut(&bucket).unwrap() += 1;
        let bucket_plan = plan.buckets.get(&bucket).ok_or_else(|| {
            Error::Protocol(format!("span kind {} missing from the plan", span.kind))
        })?;

        let record = if instance < bucket_plan.perturb_limit {
            let epsilon = bucket_plan.per_instance_epsilon;
            match span.kind.class() {
                EntityClass::Numeric => {
                    let value = span.numeric_value.ok_or_else(|| {
                        Error::Annotation(format!(
                            "numeric span {:?} at {}..{} has no parsed value",
                            span.surface, span.start, span.end
                        ))
                    })?;
                    ledger.charge(bucket, instance, MechanismKind::Laplace, epsilon)?;
                    let perturbed = perturb_numeric(
                        value,
                        span.kind,
                        registry.delta(span.kind)?,
                        epsilon,
                        registry.bounds(span.kind)?,
                        &mut rng,
                    )?;
                    let rendered = format_numeric_like(&span.surface, perturbed.output_number()?);
                    SpanRecord {
                        start: span.start,
                        end: span.end,
                        kind: span.kind,
                        original: span.surface.clone(),
                        output: rendered,
                        mechanism: MechanismKind::Laplace,
                        epsilon,
                    }
                }
                EntityClass::Textual => {
                    let pool = registry.pool(span.kind)?;
                    let pool_index = span.pool_index.ok_or_else(|| {
                        Error::Annotation(format!(
                            "textual span {:?} at {}..{} has no pool index",
                            span.surface, span.start, span.end
                        ))
                    })?;
                    ledger.charge(bucket, instance, MechanismKind::Exponential, epsilon)?;
                    let perturbed =
                        perturb_textual(pool_index, span.kind, pool, epsilon, &mut rng)?;
                    SpanRecord {
                        start: span.start,
                        end: span.end,
                        kind: span.kind,
                        original: span.surface.clone(),
                        output: perturbed.output_text()?,
                        mechanism: MechanismKind::Exponential,
                        epsilon,
                    }
                }
            }
        } else {
            ledger.charge(bucket, instance, MechanismKind::Redacted, 0.0)?;
            SpanRecord {
                start: span.start,
                end: span.end,
                kind: span.kind,
                original: span.surface.clone(),
                output: span.kind.placeholder().to_string(),
                mechanism: MechanismKind::Redacted,
                epsilon: 0.0,
            }
        };
        records.push(record);
    }

    let sanitized_text = splice(text, &records);
    Ok(SanitizedDocument {
        original_text: text.to_string(),
        sanitized_text,
        records,
        plan,
        ledger,
        rng_seed: seed,
        rng_stream: stream,
    })
}

/// Replaces each record's span with its output, right to left so earlier
/// character offsets stay valid.
fn splice(text: &str, records: &[SpanRecord]) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    for record in records.iter().rev() {
        let replacement: Vec<char> = record.output.chars().collect();
        chars.splice(record.start..record.end, replacement);
    }
    chars.into_iter().collect()
}

/// Evenly spaced budget levels, inclusive of both ends.
pub fn epsilon_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !min.is_finite() || !max.is_finite() || max < min {
        return Err(Error::Parameter(format!(
            "grid bounds must satisfy 0 < min <= max, got [{min}, {max}]"
        )));
    }
    if count == 0 {
        return Err(Error::Parameter("grid needs at least one level".into()));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let step = (max - min) / (count as f64 - 1.0);
    Ok((0..count).map(|i| min + step * i as f64).collect())
}

/// The default trajectory grid: thirty levels from 0.1 to 2.0.
pub fn default_epsilon_grid() -> Vec<f64> {
    epsilon_grid(0.1, 2.0, 30).expect("fixed bounds are valid")
}

/// Sanitizes one document once per grid level. Extraction happens once; the
/// level index selects the RNG stream, so levels are independently seeded
/// but individually reproducible.
pub fn sanitize_grid(
    text: &str,
    grid: &[f64],
    registry: &SensitivityRegistry,
    config: &SanitizeConfig,
    seed: u64,
) -> Result<Vec<SanitizedDocument>> {
    let extraction = extract(text, registry);
    grid.iter()
        .enumerate()
        .map(|(i, &epsilon)| {
            sanitize_extraction(text, &extraction, epsilon, registry, config, seed, i as u64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAudit {
    pub bucket: BucketKey,
    pub true_count: usize,
    pub noisy_count: f64,
    pub rho: f64,
    pub per_instance_epsilon: f64,
    pub perturb_limit: usize,
}

/// Flat audit trail for one sanitized document, suitable for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub doc_id: String,
    pub epsilon_total: f64,
    pub epsilon_cnt: f64,
    pub buckets: Vec<BucketAudit>,
    pub records: Vec<SpanRecord>,
    pub ledger_total: f64,
}

impl AuditRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<AuditRecord> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::json(path, e))
    }
}

/// Builds the audit trail for a sanitized document.
pub fn audit(doc: &SanitizedDocument, doc_id: &str) -> AuditRecord {
    AuditRecord {
        doc_id: doc_id.to_string(),
        epsilon_total: doc.plan.epsilon_total,
        epsilon_cnt: doc.plan.epsilon_cnt,
        buckets: doc
            .plan
            .buckets
            .iter()
            .map(|(&bucket, plan)| BucketAudit {
                bucket,
                true_count: plan.true_count,
                noisy_count: plan.noisy_count,
                rho: plan.rho,
                per_instance_epsilon: plan.per_instance_epsilon,
                perturb_limit: plan.perturb_limit,
            })
            .collect(),
        records: doc.records.clone(),
        ledger_total: doc.ledger.grand_total(),
    }
}
