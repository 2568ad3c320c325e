//! Budget-trajectory features.
//!
//! A document is sanitized once per budget level of a grid. Each level
//! contributes three numbers: the variant's mean token score, the confidence
//! that the variant's token scores shifted relative to the original (one
//! minus the rank-test p-value), and the standardized effect size between
//! the two score samples. Flattened row-major, a thirty-level grid yields a
//! ninety-dimensional vector.

use serde::{Deserialize, Serialize};

use crate::entity::SensitivityRegistry;
use crate::error::{Error, Result};
use crate::extract::extract;
use crate::sanitize::{sanitize_extraction, SanitizeConfig};
use crate::scorer::{Metric, TrigramScorer};
use crate::stats::{cohens_d, mann_whitney_u};

/// The three per-level features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub mean_score: f64,
    pub shift_confidence: f64,
    pub effect_size: f64,
}

/// One document's features across the whole budget grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrajectory {
    pub epsilon_grid: Vec<f64>,
    pub rows: Vec<TrajectoryRow>,
}

impl FeatureTrajectory {
    /// Row-major flattening: `(mean, confidence, effect)` per level.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.len() * 3);
        for row in &self.rows {
            out.push(row.mean_score);
            out.push(row.shift_confidence);
            out.push(row.effect_size);
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.rows.len() * 3
    }
}

/// Effect size with the degenerate case folded to zero: two samples with no
/// pooled spread carry no standardized shift signal.
fn effect_size_or_zero(a: &[f64], b: &[f64]) -> Result<f64> {
    match cohens_d(a, b) {
        Ok(d) => Ok(d),
        Err(Error::ZeroVariance) => {
            log::warn!("score samples have zero pooled variance, effect size set to 0");
            Ok(0.0)
        }
        Err(other) => Err(other),
    }
}

/// Extracts the full trajectory for one document. The budget level's index
/// selects the sanitizer RNG stream, so each level is reproducible in
/// isolation and the grid as a whole is deterministic in `seed`.
pub fn extract_trajectory(
    text: &str,
    grid: &[f64],
    scorer: &TrigramScorer,
    metric: Metric,
    registry: &SensitivityRegistry,
    config: &SanitizeConfig,
    seed: u64,
) -> Result<FeatureTrajectory> {
    if grid.is_empty() {
        return Err(Error::Parameter("budget grid is empty".into()));
    }
    let extraction = extract(text, registry);
    let original_scores = scorer.token_scores(text, metric)?;

    let mut rows = Vec::with_capacity(grid.len());
    for (level, &epsilon) in grid.iter().enumerate() {
        let variant = sanitize_extraction(
            text,
            &extraction,
            epsilon,
            registry,
            config,
            seed,
            level as u64,
        )?;
        let variant_scores = scorer.token_scores(&variant.sanitized_text, metric)?;
        let mean = variant_scores.iter().sum::<f64>() / variant_scores.len() as f64;
        let (_, p) = mann_whitney_u(&variant_scores, &original_scores)?;
        let effect = effect_size_or_zero(&variant_scores, &original_scores)?;
        rows.push(TrajectoryRow {
            mean_score: mean,
            shift_confidence: 1.0 - p,
            effect_size: effect,
        });
    }
    Ok(FeatureTrajectory {
        epsilon_grid: grid.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sanitize::{default_epsilon_grid, epsilon_grid};

    const SAMPLE: &str =
        "Alice paid $250 to Omar on March 14 at 09:45 in Vienna, then sent 37 reports \
         to Berlin before the deadline came around again.";

    fn scorer() -> TrigramScorer {
        TrigramScorer::fit(
            &[
                SAMPLE,
                "Omar sent 12 reports to Alice in Berlin on March 2 at 11:30.",
                "the deadline came and went while everyone waited for the reports",
            ],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn default_grid_yields_ninety_features() {
        let reg = SensitivityRegistry::default();
        let t = extract_trajectory(
            SAMPLE,
            &default_epsilon_grid(),
            &scorer(),
            Metric::LogLikelihood,
            &reg,
            &SanitizeConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 30);
        assert_eq!(t.dimension(), 90);
        assert_eq!(t.flat().len(), 90);
        assert_eq!(t.epsilon_grid.len(), 30);
    }

    #[test]
    fn ten_levels_yield_thirty_features() {
        let reg = SensitivityRegistry::default();
        let grid = epsilon_grid(0.1, 2.0, 10).unwrap();
        let t = extract_trajectory(
            SAMPLE,
            &grid,
            &scorer(),
            Metric::LogLikelihood,
            &reg,
            &SanitizeConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(t.flat().len(), 30);
    }

    #[test]
    fn flattening_is_row_major() {
        let t = FeatureTrajectory {
            epsilon_grid: vec![0.1, 0.2],
            rows: vec![
                TrajectoryRow {
                    mean_score: 1.0,
                    shift_confidence: 2.0,
                    effect_size: 3.0,
                },
                TrajectoryRow {
                    mean_score: 4.0,
                    shift_confidence: 5.0,
                    effect_size: 6.0,
                },
            ],
        };
        assert_eq!(t.flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn trajectories_are_deterministic_in_the_seed() {
        let reg = SensitivityRegistry::default();
        let grid = epsilon_grid(0.1, 2.0, 6).unwrap();
        let s = scorer();
        let config = SanitizeConfig::default();
        let a = extract_trajectory(SAMPLE, &grid, &s, Metric::Rank, &reg, &config, 3).unwrap();
        let b = extract_trajectory(SAMPLE, &grid, &s, Metric::Rank, &reg, &config, 3).unwrap();
        assert_eq!(a, b);
        let c = extract_trajectory(SAMPLE, &grid, &s, Metric::Rank, &reg, &config, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_are_finite_and_confidences_are_probabilities() {
        let reg = SensitivityRegistry::default();
        let grid = epsilon_grid(0.1, 2.0, 8).unwrap();
        let s = scorer();
        for metric in [Metric::LogLikelihood, Metric::Rank, Metric::Entropy] {
            let t = extract_trajectory(
                SAMPLE,
                &grid,
                &s,
                metric,
                &reg,
                &SanitizeConfig::default(),
                11,
            )
            .unwrap();
            for row in &t.rows {
                assert!(row.mean_score.is_finite());
                assert!((0.0..=1.0).contains(&row.shift_confidence));
                assert!(row.effect_size.is_finite());
            }
        }
    }

    #[test]
    fn an_enormous_budget_produces_a_null_trajectory() {
        // One occurrence per kind, so the floor-truncated perturb limits
        // cover every span and the huge budget changes nothing.
        let text = "Alice paid $250 on March 14 at 09:45 in Vienna before 37 reports came due.";
        let reg = SensitivityRegistry::default();
        let s = scorer();
        let t = extract_trajectory(
            text,
            &[1e9],
            &s,
            Metric::LogLikelihood,
            &reg,
            &SanitizeConfig::default(),
            5,
        )
        .unwrap();
        let original_mean = s.mean_score(text, Metric::LogLikelihood).unwrap();
        let row = &t.rows[0];
        assert!((row.mean_score - original_mean).abs() < 1e-12);
        assert_eq!(row.shift_confidence, 0.0);
        assert_eq!(row.effect_size, 0.0);
    }

    #[test]
    fn entity_free_text_produces_a_null_trajectory() {
        let reg = SensitivityRegistry::default();
        let s = scorer();
        let text = "the deadline came and went while everyone waited";
        let t = extract_trajectory(
            text,
            &[0.1, 1.0],
            &s,
            Metric::LogLikelihood,
            &reg,
            &SanitizeConfig::default(),
            5,
        )
        .unwrap();
        for row in &t.rows {
            assert_eq!(row.shift_confidence, 0.0);
            assert_eq!(row.effect_size, 0.0);
        }
    }

    #[test]
    fn zero_spread_samples_fold_to_zero_effect() {
        assert_eq!(
            effect_size_or_zero(&[2.0, 2.0, 2.0], &[2.0, 2.0]).unwrap(),
            0.0
        );
        let d = effect_size_or_zero(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!(d < 0.0);
        assert!(effect_size_or_zero(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let reg = SensitivityRegistry::default();
        assert!(extract_trajectory(
            SAMPLE,
            &[],
            &scorer(),
            Metric::LogLikelihood,
            &reg,
            &SanitizeConfig::default(),
            0,
        )
        .is_err());
    }
}
