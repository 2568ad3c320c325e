//! Budget split, noisy bucket counts, per-instance allocation, and spend
//! accounting.
//!
//! A document's budget `epsilon_total` splits into a counting share and a
//! substitution share. Each bucket's occurrence count is released through a
//! Laplace mechanism and floored at one; the substitution share is then
//! divided as `eps_tau = epsilon_sub * rho_tau / (c_tilde_tau * sum(rho))`
//! with `rho_tau = delta_tau * w_tau * c_tilde_tau`, which makes the noisy
//! spend `sum(c_tilde_tau * eps_tau)` telescope to exactly `epsilon_sub`.
//! Only the first `floor(c_tilde_tau)` instances of a bucket are perturbed;
//! the rest are redacted at zero cost.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::entity::{EntityClass, EntityKind, SensitivityRegistry, WeightMode};
use crate::error::{Error, Result};
use crate::extract::ExtractionResult;
use crate::mech::{laplace_sample, MechanismKind, RandomSource};

/// Slack applied when comparing accumulated spend against the budget, to
/// absorb float summation error.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Allocation bucket: one per entity kind, or a single shared bucket for all
/// textual kinds when collapsing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BucketKey {
    Kind(EntityKind),
    Text,
}

impl BucketKey {
    pub fn for_kind(kind: EntityKind, collapse_textual: bool) -> BucketKey {
        if collapse_textual && kind.class() == EntityClass::Textual {
            BucketKey::Text
        } else {
            BucketKey::Kind(kind)
        }
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BucketKey::Kind(kind) => f.write_str(kind.tag()),
            BucketKey::Text => f.write_str("TEXT"),
        }
    }
}

impl FromStr for BucketKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "TEXT" {
            Ok(BucketKey::Text)
        } else {
            Ok(BucketKey::Kind(EntityKind::from_str(s)?))
        }
    }
}

impl Serialize for BucketKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BucketKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        BucketKey::from_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Splits a document budget into the counting share and the substitution
/// share. The two halves sum back to the total exactly.
pub fn split_budget(epsilon_total: f64, count_fraction: f64) -> Result<(f64, f64)> {
    if !(epsilon_total > 0.0) || !epsilon_total.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon_total must be a positive finite real, got {epsilon_total}"
        )));
    }
    if !(count_fraction > 0.0 && count_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "count_fraction must lie strictly between 0 and 1, got {count_fraction}"
        )));
    }
    let epsilon_cnt = epsilon_total * count_fraction;
    Ok((epsilon_cnt, epsilon_total - epsilon_cnt))
}

/// Noisy release of one bucket's occurrence count (sensitivity 1), floored
/// at one.
pub fn noisy_count(count: usize, epsilon_cnt: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(epsilon_cnt > 0.0) || !epsilon_cnt.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon_cnt must be a positive finite real, got {epsilon_cnt}"
        )));
    }
    let noise = laplace_sample(1.0 / epsilon_cnt, rng)?;
    Ok((count as f64 + noise).max(1.0))
}

/// Inputs to [`allocate`] for one bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketStats {
    pub noisy_count: f64,
    pub delta: f64,
    pub weight: f64,
}

impl BucketStats {
    pub fn rho(&self) -> f64 {
        self.delta * self.weight * self.noisy_count
    }
}

/// Per-instance budgets for each bucket. An empty bucket map allocates
/// nothing.
pub fn allocate(
    epsilon_sub: f64,
    buckets: &BTreeMap<BucketKey, BucketStats>,
) -> Result<BTreeMap<BucketKey, f64>> {
    if !(epsilon_sub > 0.0) || !epsilon_sub.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon_sub must be a positive finite real, got {epsilon_sub}"
        )));
    }
    if buckets.is_empty() {
        return Ok(BTreeMap::new());
    }
    for (key, stats) in buckets {
        if !(stats.noisy_count >= 1.0) || !(stats.delta > 0.0) || !(stats.weight > 0.0) {
            return Err(Error::Parameter(format!(
                "bucket {key} has invalid stats {stats:?}"
            )));
        }
    }
    let rho_sum: f64 = buckets.values().map(BucketStats::rho).sum();
    Ok(buckets
        .iter()
        .map(|(key, stats)| {
            (
                *key,
                epsilon_sub * stats.rho() / (stats.noisy_count * rho_sum),
            )
        })
        .collect())
}

/// Number of instances actually perturbed in a bucket.
pub fn perturb_limit(true_count: usize, noisy_count: f64) -> usize {
    true_count.min(noisy_count.floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPlan {
    pub true_count: usize,
    pub noisy_count: f64,
    pub delta: f64,
    pub weight: f64,
    pub rho: f64,
    pub per_instance_epsilon: f64,
    pub perturb_limit: usize,
}

/// The budget decisions for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub epsilon_total: f64,
    pub epsilon_cnt: f64,
    pub epsilon_sub: f64,
    pub buckets: BTreeMap<BucketKey, BucketPlan>,
}

impl BudgetPlan {
    /// Worst-case spend of the substitution stage under this plan.
    pub fn planned_spend(&self) -> f64 {
        self.buckets
            .values()
            .map(|b| b.perturb_limit as f64 * b.per_instance_epsilon)
            .sum()
    }

    /// The telescoping identity the allocation is built on:
    /// `sum(c_tilde * eps_tau) = epsilon_sub` whenever buckets exist.
    pub fn noisy_spend(&self) -> f64 {
        self.buckets
            .values()
            .map(|b| b.noisy_count * b.per_instance_epsilon)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub count_fraction: f64,
    pub weight_mode: WeightMode,
    pub collapse_text_bucket: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            count_fraction: 0.1,
            weight_mode: WeightMode::default(),
            collapse_text_bucket: false,
        }
    }
}

/// Builds the budget plan for one extraction: groups counts into buckets,
/// releases noisy counts (in bucket key order), and allocates the
/// substitution share.
pub fn build_plan(
    extraction: &ExtractionResult,
    epsilon_total: f64,
    registry: &SensitivityRegistry,
    options: &PlanOptions,
    rng: &mut RandomSource,
) -> Result<BudgetPlan> {
    let (epsilon_cnt, epsilon_sub) = split_budget(epsilon_total, options.count_fraction)?;

    let mut counts: BTreeMap<BucketKey, usize> = BTreeMap::new();
    for (&kind, &count) in &extraction.counts {
        if count == 0 {
            continue;
        }
        *counts
            .entry(BucketKey::for_kind(kind, options.collapse_text_bucket))
            .or_insert(0) += count;
    }

    let mut params: BTreeMap<BucketKey, (usize, f64, f64)> = BTreeMap::new();
    for (&key, &count) in &counts {
        let (delta, weight) = match key {
            BucketKey::Kind(kind) => (
                registry.delta(kind)?,
                registry.weight(kind, count, options.weight_mode)?,
            ),
            BucketKey::Text => {
                // The shared textual bucket takes its sensitivity from the
                // widest pool present in the document.
                let mut widest: Option<EntityKind> = None;
                for (&kind, &c) in &extraction.counts {
                    if c > 0 && kind.class() == EntityClass::Textual {
                        let better = match widest {
                            None => true,
                            Some(w) => registry.delta(kind)? > registry.delta(w)?,
                        };
                        if better {
                            widest = Some(kind);
                        }
                    }
                }
                let kind = widest.expect("textual bucket without textual counts");
                let profile = registry.profile(kind)?;
                let base = profile.base_weight * (profile.delta + 1.0).ln();
                let weight = match options.weight_mode {
                    WeightMode::Static => base,
                    WeightMode::Counted => base * (count as f64 + 1.0),
                };
                (profile.delta, weight)
            }
        };
        params.insert(key, (count, delta, weight));
    }

    let mut stats: BTreeMap<BucketKey, BucketStats> = BTreeMap::new();
    for (&key, &(count, delta, weight)) in &params {
        let c_tilde = noisy_count(count, epsilon_cnt, rng)?;
        stats.insert(
            key,
            BucketStats {
                noisy_count: c_tilde,
                delta,
                weight,
            },
        );
    }

    let per_instance = allocate(epsilon_sub, &stats)?;

    let mut buckets = BTreeMap::new();
    for (&key, &(count, delta, weight)) in &params {
        let s = stats[&key];
        buckets.insert(
            key,
            BucketPlan {
                true_count: count,
                noisy_count: s.noisy_count,
                delta,
                weight,
                rho: s.rho(),
                per_instance_epsilon: per_instance[&key],
                perturb_limit: perturb_limit(count, s.noisy_count),
            },
        );
    }

    Ok(BudgetPlan {
        epsilon_total,
        epsilon_cnt,
        epsilon_sub,
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub bucket: BucketKey,
    pub instance: usize,
    pub mechanism: MechanismKind,
    pub epsilon: f64,
}

/// Running account of every mechanism charge against one document budget.
/// The counting share is booked at construction; each perturbation must be
/// charged before it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantLedger {
    epsilon_total: f64,
    epsilon_cnt: f64,
    entries: Vec<LedgerEntry>,
    spent: f64,
}

impl AccountantLedger {
    pub fn new(epsilon_total: f64, epsilon_cnt: f64) -> Result<Self> {
        if !(epsilon_total > 0.0) || !epsilon_total.is_finite() {
            return Err(Error::Parameter(format!(
                "epsilon_total must be a positive finite real, got {epsilon_total}"
            )));
        }
        if !(epsilon_cnt >= 0.0) || epsilon_cnt > epsilon_total {
            return Err(Error::Parameter(format!(
                "epsilon_cnt {epsilon_cnt} must lie in [0, {epsilon_total}]"
            )));
        }
        Ok(AccountantLedger {
            epsilon_total,
            epsilon_cnt,
            entries: Vec::new(),
            spent: 0.0,
        })
    }

    pub fn charge(
        &mut self,
        bucket: BucketKey,
        instance: usize,
        mechanism: MechanismKind,
        epsilon: f64,
    ) -> Result<()> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Parameter(format!(
                "charge must be a nonnegative finite real, got {epsilon}"
            )));
        }
        let would_be = self.grand_total() + epsilon;
        if would_be > self.epsilon_total + BUDGET_TOLERANCE {
            return Err(Error::BudgetExceeded {
                requested: epsilon,
                would_be,
                limit: self.epsilon_total,
            });
        }
        self.entries.push(LedgerEntry {
            bucket,
            instance,
            mechanism,
            epsilon,
        });
        self.spent += epsilon;
        Ok(())
    }

    pub fn grand_total(&self) -> f64 {
        self.epsilon_cnt + self.spent
    }

    pub fn epsilon_total(&self) -> f64 {
        self.epsilon_total
    }

    pub fn epsilon_cnt(&self) -> f64 {
        self.epsilon_cnt
    }

    pub fn remaining(&self) -> f64 {
        self.epsilon_total - self.grand_total()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn per_bucket(&self) -> BTreeMap<BucketKey, f64> {
        let mut totals = BTreeMap::new();
        for entry in &self.entries {
            *totals.entry(entry.bucket).or_insert(0.0) += entry.epsilon;
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::extract;

    fn stats(noisy_count: f64, delta: f64, weight: f64) -> BucketStats {
        BucketStats {
            noisy_count,
            delta,
            weight,
        }
    }

    #[test]
    fn split_preserves_the_total() {
        let (cnt, sub) = split_budget(1.0, 0.1).unwrap();
        assert!((cnt - 0.1).abs() < 1e-15);
        assert!((sub - 0.9).abs() < 1e-15);
        assert_eq!(cnt + sub, 1.0);
        for total in [0.1, 0.77, 2.0, 13.5] {
            for fraction in [0.01, 0.1, 0.5, 0.99] {
                let (c, s) = split_budget(total, fraction).unwrap();
                assert_eq!(c + s, total);
            }
        }
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        assert!(split_budget(1.0, 0.0).is_err());
        assert!(split_budget(1.0, 1.0).is_err());
        assert!(split_budget(1.0, -0.2).is_err());
        assert!(split_budget(0.0, 0.5).is_err());
        assert!(split_budget(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn noisy_count_never_drops_below_one() {
        let mut rng = RandomSource::new(3, 0);
        for _ in 0..10_000 {
            let c = noisy_count(0, 0.05, &mut rng).unwrap();
            assert!(c >= 1.0);
        }
    }

    #[test]
    fn noisy_count_concentrates_at_high_epsilon() {
        let mut rng = RandomSource::new(4, 0);
        for _ in 0..100 {
            let c = noisy_count(7, 1e6, &mut rng).unwrap();
            assert!((c - 7.0).abs() < 0.01, "got {c}");
        }
    }

    #[test]
    fn allocate_single_bucket_divides_by_noisy_count() {
        let mut buckets = BTreeMap::new();
        buckets.insert(BucketKey::Kind(EntityKind::Person), stats(4.0, 48.0, 0.25));
        let eps = allocate(0.8, &buckets).unwrap();
        let got = eps[&BucketKey::Kind(EntityKind::Person)];
        assert!((got - 0.2).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn allocate_two_buckets_with_equal_shares() {
        let mut buckets = BTreeMap::new();
        // Equal rho: 3*1*1 = 1*1*3.
        buckets.insert(BucketKey::Kind(EntityKind::Cardinal), stats(1.0, 3.0, 1.0));
        buckets.insert(BucketKey::Kind(EntityKind::Money), stats(3.0, 1.0, 1.0));
        let eps = allocate(1.2, &buckets).unwrap();
        assert!((eps[&BucketKey::Kind(EntityKind::Cardinal)] - 0.6).abs() < 1e-12);
        assert!((eps[&BucketKey::Kind(EntityKind::Money)] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn allocate_is_scale_free_in_rho() {
        let mut buckets = BTreeMap::new();
        buckets.insert(BucketKey::Kind(EntityKind::Cardinal), stats(2.5, 10.0, 0.3));
        buckets.insert(BucketKey::Kind(EntityKind::Person), stats(1.0, 48.0, 0.25));
        buckets.insert(BucketKey::Text, stats(6.2, 36.0, 0.25));
        let base = allocate(1.0, &buckets).unwrap();
        let mut scaled = buckets.clone();
        for s in scaled.values_mut() {
            s.weight *= 17.0;
        }
        let got = allocate(1.0, &scaled).unwrap();
        for (key, eps) in &base {
            assert!((eps - got[key]).abs() < 1e-12, "bucket {key}");
        }
    }

    #[test]
    fn allocate_spends_exactly_the_substitution_share() {
        let mut rng = RandomSource::new(99, 0);
        for trial in 0..1000 {
            let eps_sub = 0.05 + rng.next_f64() * 2.0;
            let n_buckets = 1 + rng.uniform_index(6);
            let mut buckets = BTreeMap::new();
            for i in 0..n_buckets {
                let kind = EntityKind::ALL[i];
                buckets.insert(
                    BucketKey::Kind(kind),
                    stats(
                        1.0 + rng.next_f64() * 12.0,
                        0.5 + rng.next_f64() * 100.0,
                        0.05 + rng.next_f64(),
                    ),
                );
            }
            let eps = allocate(eps_sub, &buckets).unwrap();
            let noisy_spend: f64 = buckets
                .iter()
                .map(|(k, s)| s.noisy_count * eps[k])
                .sum();
            assert!(
                (noisy_spend - eps_sub).abs() < 1e-9,
                "trial {trial}: {noisy_spend} vs {eps_sub}"
            );
        }
    }

    #[test]
    fn allocate_empty_buckets_yields_nothing() {
        let eps = allocate(1.0, &BTreeMap::new()).unwrap();
        assert!(eps.is_empty());
    }

    #[test]
    fn perturb_limit_truncates_to_the_noisy_floor() {
        assert_eq!(perturb_limit(5, 2.7), 2);
        assert_eq!(perturb_limit(5, 7.3), 5);
        assert_eq!(perturb_limit(3, 3.0), 3);
        assert_eq!(perturb_limit(0, 1.0), 0);
    }

    #[test]
    fn plan_for_empty_extraction_has_no_buckets() {
        let reg = SensitivityRegistry::default();
        let extraction = extract("no entities in this line", &reg);
        let mut rng = RandomSource::new(0, 0);
        let plan = build_plan(&extraction, 1.0, &reg, &PlanOptions::default(), &mut rng).unwrap();
        assert!(plan.buckets.is_empty());
        assert!((plan.epsilon_cnt - 0.1).abs() < 1e-12);
        assert_eq!(plan.planned_spend(), 0.0);
    }

    #[test]
    fn plan_respects_the_telescoping_identity() {
        let reg = SensitivityRegistry::default();
        let extraction = extract("Alice paid $250 on March 14 at 09:45 in Vienna", &reg);
        for seed in 0..50 {
            let mut rng = RandomSource::new(seed, 0);
            let plan =
                build_plan(&extraction, 1.3, &reg, &PlanOptions::default(), &mut rng).unwrap();
            assert!((plan.noisy_spend() - plan.epsilon_sub).abs() < 1e-9);
            assert!(plan.planned_spend() <= plan.epsilon_sub + 1e-9);
            for bucket in plan.buckets.values() {
                assert!(bucket.noisy_count >= 1.0);
                assert!(bucket.per_instance_epsilon > 0.0);
            }
        }
    }

    #[test]
    fn plan_collapses_textual_kinds_on_request() {
        let reg = SensitivityRegistry::default();
        let extraction = extract("Alice met Omar in Vienna near Berlin", &reg);
        let options = PlanOptions {
            collapse_text_bucket: true,
            ..PlanOptions::default()
        };
        let mut rng = RandomSource::new(1, 0);
        let plan = build_plan(&extraction, 1.0, &reg, &options, &mut rng).unwrap();
        assert_eq!(plan.buckets.len(), 1);
        let bucket = &plan.buckets[&BucketKey::Text];
        assert_eq!(bucket.true_count, 4);
        // PERSON has the widest pool (48 entries).
        assert_eq!(bucket.delta, 48.0);
    }

    #[test]
    fn plan_is_deterministic_per_stream() {
        let reg = SensitivityRegistry::default();
        let extraction = extract("Alice paid $250 on March 14", &reg);
        let a = build_plan(
            &extraction,
            1.0,
            &reg,
            &PlanOptions::default(),
            &mut RandomSource::new(7, 3),
        )
        .unwrap();
        let b = build_plan(
            &extraction,
            1.0,
            &reg,
            &PlanOptions::default(),
            &mut RandomSource::new(7, 3),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ledger_books_the_counting_share_up_front() {
        let ledger = AccountantLedger::new(1.0, 0.1).unwrap();
        assert!((ledger.grand_total() - 0.1).abs() < 1e-15);
        let mut ledger = ledger;
        ledger
            .charge(BucketKey::Kind(EntityKind::Money), 0, MechanismKind::Laplace, 0.2)
            .unwrap();
        assert!((ledger.grand_total() - 0.3).abs() < 1e-15);
        assert_eq!(ledger.entries().len(), 1);
    }

    #[test]
    fn ledger_allows_spending_to_the_limit_and_no_further() {
        let mut ledger = AccountantLedger::new(1.0, 0.1).unwrap();
        for i in 0..9 {
            ledger
                .charge(
                    BucketKey::Kind(EntityKind::Cardinal),
                    i,
                    MechanismKind::Laplace,
                    0.1,
                )
                .unwrap();
        }
        assert!(ledger.remaining().abs() < 1e-9);
        let err = ledger
            .charge(
                BucketKey::Kind(EntityKind::Cardinal),
                9,
                MechanismKind::Laplace,
                1e-6,
            )
            .unwrap_err();
        match err {
            Error::BudgetExceeded { limit, .. } => assert_eq!(limit, 1.0),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn ledger_rejects_invalid_construction() {
        assert!(AccountantLedger::new(0.0, 0.0).is_err());
        assert!(AccountantLedger::new(1.0, 1.5).is_err());
        assert!(AccountantLedger::new(1.0, -0.1).is_err());
    }

    #[test]
    fn bucket_keys_serialize_as_tags() {
        let key = BucketKey::Kind(EntityKind::WorkOfArt);
        assert_eq!(serde_json::to_string(&key).unwrap(), "\"WORK_OF_ART\"");
        let text: BucketKey = serde_json::from_str("\"TEXT\"").unwrap();
        assert_eq!(text, BucketKey::Text);
    }
}
