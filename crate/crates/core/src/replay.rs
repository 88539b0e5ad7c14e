//! Deterministic replay of conformal sampling with rejection over a record's
//! pre-drawn sample sequence.
//!
//! The sampler consumes samples strictly in draw order and never revisits
//! one, so replaying the first `k_max` recorded samples reproduces exactly
//! what an online run with the same draws would have returned.

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext_float;
use crate::records::PromptRecord;
use crate::set_scoring::{uses_rejection, RunningScore, ScorerKind};
use crate::text_metrics::compute_similarity;

/// Threshold triple plus scorer.
///
/// `lambda1` is the similarity ceiling, `lambda2` the quality floor and
/// `lambda3` the set-confidence level at which sampling stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    #[serde(with = "ext_float")]
    pub lambda1: f64,
    #[serde(with = "ext_float")]
    pub lambda2: f64,
    pub lambda3: f64,
    pub scorer: ScorerKind,
}

impl LambdaConfig {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, scorer: ScorerKind) -> Result<Self> {
        let config = Self {
            lambda1,
            lambda2,
            lambda3,
            scorer,
        };
        config.validate()?;
        Ok(config)
    }

    /// Count-only configuration: accept every draw, stop after `k` draws.
    pub fn first_k(k: usize) -> Self {
        Self {
            lambda1: f64::INFINITY,
            lambda2: f64::NEG_INFINITY,
            lambda3: k as f64,
            scorer: ScorerKind::FirstK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda3.is_finite() {
            return Err(Error::invalid(format!(
                "lambda3 must be finite, got {}",
                self.lambda3
            )));
        }
        if self.lambda1.is_nan() || self.lambda2.is_nan() {
            return Err(Error::invalid("lambda1/lambda2 must not be NaN"));
        }
        Ok(())
    }

    /// `(lambda1, lambda2)` as applied: scorers without rejection accept everything.
    pub fn effective_rejection(&self) -> (f64, f64) {
        if uses_rejection(self.scorer) {
            (self.lambda1, self.lambda2)
        } else {
            (f64::INFINITY, f64::NEG_INFINITY)
        }
    }

    fn needs_similarity(&self) -> bool {
        self.effective_rejection().0 < f64::INFINITY
    }
}

impl fmt::Display for LambdaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:l1={};l2={};l3={}",
            self.scorer,
            ext_float::display(self.lambda1),
            ext_float::display(self.lambda2),
            ext_float::display(self.lambda3)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    /// 0-based sample positions forming the prediction set, in draw order.
    pub accepted_indices: Vec<usize>,
    /// Total samples drawn, accepted or rejected.
    pub draws: usize,
    pub stopped_by_confidence: bool,
    /// `true` when no accepted sample is admissible.
    pub loss: bool,
    /// 1-based draw index of the first admissible sample within `k_max`.
    pub oracle_first_admissible: Option<usize>,
}

impl ReplayOutcome {
    pub fn set_size(&self) -> usize {
        self.accepted_indices.len()
    }

    /// `[draws - S*]^+ / draws`; zero when nothing admissible was available.
    pub fn relative_excess(&self) -> f64 {
        match self.oracle_first_admissible {
            Some(first) => draws_beyond(self.draws, first) as f64 / self.draws as f64,
            None => 0.0,
        }
    }

    /// Per-record term of the selection objective.
    pub fn objective(&self, rho1: f64, rho2: f64) -> f64 {
        rho1 * self.set_size() as f64 + rho2 * self.relative_excess()
    }
}

fn draws_beyond(draws: usize, first: usize) -> usize {
    draws.saturating_sub(first)
}

fn check_k_max(record: &PromptRecord, k_max: usize) -> Result<()> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if record.samples.len() < k_max {
        return Err(Error::InsufficientSamples {
            id: record.id.clone(),
            available: record.samples.len(),
            k_max,
        });
    }
    Ok(())
}

fn resolve_similarity<'a>(
    record: &'a PromptRecord,
    needed: bool,
) -> Result<Option<Cow<'a, [Vec<f64>]>>> {
    if !needed {
        return Ok(None);
    }
    if let Some(rows) = &record.similarity {
        return Ok(Some(Cow::Borrowed(rows.as_slice())));
    }
    if record.samples.iter().any(|s| s.text.is_none()) {
        return Err(Error::SimilarityUnavailable {
            id: record.id.clone(),
        });
    }
    Ok(Some(Cow::Owned(compute_similarity(record)?)))
}

fn run(
    record: &PromptRecord,
    similarity: Option<&[Vec<f64>]>,
    config: &LambdaConfig,
    k_max: usize,
) -> Result<ReplayOutcome> {
    config.validate()?;
    let (max_similarity, min_quality) = config.effective_rejection();
    let mut accepted: Vec<usize> = Vec::new();
    let mut score = RunningScore::new(config.scorer);
    let mut draws = 0;
    let mut stopped = false;

    for (k, sample) in record.samples.iter().take(k_max).enumerate() {
        draws = k + 1;
        if sample.quality < min_quality {
            continue;
        }
        if max_similarity < f64::INFINITY && !accepted.is_empty() {
            let rows = similarity.ok_or_else(|| Error::SimilarityUnavailable {
                id: record.id.clone(),
            })?;
            let closest = accepted
                .iter()
                .map(|&j| rows[k][j])
                .fold(f64::NEG_INFINITY, f64::max);
            if closest > max_similarity {
                continue;
            }
        }
        accepted.push(k);
        score.accept(sample.quality);
        if score.value(draws) >= config.lambda3 {
            stopped = true;
            break;
        }
    }

    let loss = !accepted.iter().any(|&i| record.samples[i].admission);
    Ok(ReplayOutcome {
        accepted_indices: accepted,
        draws,
        stopped_by_confidence: stopped,
        loss,
        oracle_first_admissible: record.first_admissible(k_max),
    })
}

/// Replays the sampler on `record` under `config` with budget `k_max`.
pub fn replay(record: &PromptRecord, config: &LambdaConfig, k_max: usize) -> Result<ReplayOutcome> {
    check_k_max(record, k_max)?;
    let similarity = resolve_similarity(record, config.needs_similarity() && k_max > 1)?;
    run(record, similarity.as_deref(), config, k_max)
}

/// Replays every config in `configs`, resolving the similarity matrix once.
pub fn replay_grid(
    record: &PromptRecord,
    configs: &[LambdaConfig],
    k_max: usize,
) -> Result<Vec<ReplayOutcome>> {
    check_k_max(record, k_max)?;
    let needed = k_max > 1 && configs.iter().any(LambdaConfig::needs_similarity);
    let similarity = resolve_similarity(record, needed)?;
    configs
        .iter()
        .map(|config| run(record, similarity.as_deref(), config, k_max))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::SampleRecord;

    fn record(
        qualities: &[f64],
        admissions: &[bool],
        similarity: Option<Vec<Vec<f64>>>,
    ) -> PromptRecord {
        PromptRecord {
            id: "r".into(),
            samples: qualities
                .iter()
                .zip(admissions)
                .map(|(&q, &a)| SampleRecord::new(q, a))
                .collect(),
            similarity,
            reference_components: None,
        }
    }

    fn zeros(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![0.0; i]).collect()
    }

    #[test]
    fn stops_immediately_on_confident_first_sample() {
        let r = record(&[0.9, 0.2, 0.8], &[false, false, true], Some(zeros(3)));
        let config = LambdaConfig::new(1.0, 0.5, 0.85, ScorerKind::Max).unwrap();
        let out = replay(&r, &config, 3).unwrap();
        assert_eq!(
            out,
            ReplayOutcome {
                accepted_indices: vec![0],
                draws: 1,
                stopped_by_confidence: true,
                loss: true,
                oracle_first_admissible: Some(3),
            }
        );
        assert_eq!(out.relative_excess(), 0.0);
    }

    #[test]
    fn infinite_quality_floor_rejects_everything() {
        let r = record(&[0.9, 0.2, 0.8], &[true, true, true], Some(zeros(3)));
        let config = LambdaConfig::new(1.0, f64::INFINITY, 0.5, ScorerKind::Max).unwrap();
        let out = replay(&r, &config, 3).unwrap();
        assert!(out.accepted_indices.is_empty());
        assert_eq!(out.draws, 3);
        assert!(out.loss && !out.stopped_by_confidence);
    }

    #[test]
    fn first_k_stops_after_lambda3_draws() {
        // FIRST-K ignores the rejection thresholds entirely.
        let r = record(&[0.1, 0.2], &[false, true], None);
        let config = LambdaConfig::new(-1.0, 10.0, 1.0, ScorerKind::FirstK).unwrap();
        let out = replay(&r, &config, 2).unwrap();
        assert_eq!(out.accepted_indices, vec![0]);
        assert_eq!(out.draws, 1);
        let out = replay(&r, &LambdaConfig::first_k(2), 2).unwrap();
        assert_eq!(out.accepted_indices, vec![0, 1]);
        assert!(!out.loss);
        assert!((out.relative_excess() - 0.0).abs() < 1e-15);
    }

    #[test]
    fn duplicates_rejected_above_similarity_ceiling() {
        let sim = vec![vec![], vec![1.0], vec![0.3, 0.2]];
        let r = record(&[0.5, 0.5, 0.5], &[false, true, true], Some(sim));
        let config = LambdaConfig::new(0.5, f64::NEG_INFINITY, 100.0, ScorerKind::Sum).unwrap();
        let out = replay(&r, &config, 3).unwrap();
        assert_eq!(out.accepted_indices, vec![0, 2]);
        assert_eq!(out.draws, 3);
        assert!(!out.loss);
        assert_eq!(out.oracle_first_admissible, Some(2));
        assert!((out.relative_excess() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn first_k_reject_counts_rejected_draws() {
        let r = record(&[0.1, 0.9, 0.9], &[false, false, true], Some(zeros(3)));
        let config = LambdaConfig::new(f64::INFINITY, 0.5, 2.0, ScorerKind::FirstKReject).unwrap();
        let out = replay(&r, &config, 3).unwrap();
        // Draw 1 rejected; draw 2 accepted with score 2 >= 2.
        assert_eq!(out.accepted_indices, vec![1]);
        assert_eq!(out.draws, 2);
        assert!(out.stopped_by_confidence);
    }

    #[test]
    fn similarity_computed_from_text_when_absent() {
        let mut r = record(&[0.5, 0.5], &[true, false], None);
        r.samples[0].text = Some("the cat sat".into());
        r.samples[1].text = Some("The cat sat!".into());
        let config = LambdaConfig::new(0.9, f64::NEG_INFINITY, 100.0, ScorerKind::Max).unwrap();
        assert_eq!(replay(&r, &config, 2).unwrap().accepted_indices, vec![0]);
    }

    #[test]
    fn errors() {
        let r = record(&[0.5, 0.5], &[true, false], None);
        let config = LambdaConfig::new(0.5, 0.0, 100.0, ScorerKind::Max).unwrap();
        assert!(matches!(
            replay(&r, &config, 2),
            Err(Error::SimilarityUnavailable { .. })
        ));
        assert!(matches!(
            replay(&r, &config, 3),
            Err(Error::InsufficientSamples { k_max: 3, .. })
        ));
        assert!(LambdaConfig::new(0.5, 0.0, f64::INFINITY, ScorerKind::Max).is_err());
        // An infinite ceiling never consults similarity.
        let open = LambdaConfig::new(f64::INFINITY, 0.0, 100.0, ScorerKind::Max).unwrap();
        assert!(replay(&r, &open, 2).is_ok());
    }

    #[test]
    fn grid_matches_single_replays() {
        let r = record(
            &[0.3, 0.8, 0.6, 0.9],
            &[false, true, false, true],
            Some(zeros(4)),
        );
        assert!(replay_grid(&r, &[], 4).unwrap().is_empty());
        let configs: Vec<_> = [0.2, 0.7, 1.5]
            .iter()
            .flat_map(|&l3| {
                [ScorerKind::Max, ScorerKind::Sum]
                    .map(|s| LambdaConfig::new(0.5, 0.5, l3, s).unwrap())
            })
            .collect();
        let grid = replay_grid(&r, &configs, 4).unwrap();
        for (config, outcome) in configs.iter().zip(&grid) {
            assert_eq!(outcome, &replay(&r, config, 4).unwrap());
        }
    }

    #[test]
    fn config_json_uses_string_infinities() {
        let config =
            LambdaConfig::new(f64::INFINITY, f64::NEG_INFINITY, 3.0, ScorerKind::FirstK).unwrap();
        let json = serde_json::to_string(&config).unwrap();
        assert_eq!(
            json,
            r#"{"lambda1":"inf","lambda2":"-inf","lambda3":3.0,"scorer":"first-k"}"#
        );
        assert_eq!(serde_json::from_str::<LambdaConfig>(&json).unwrap(), config);
    }
}
