//! Conformal component selection.
//!
//! Components (e.g. sentences) of the samples in a prediction set are kept
//! when their confidence clears `gamma`. `gamma` is calibrated against the
//! first `k_max` samples of each calibration record, a superset of any
//! prediction set the sampler can return, so the calibrated threshold stays
//! valid for whatever set is produced at test time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{binomial_tail_pvalue, empirical_quantiles, fixed_sequence_test};
use crate::error::{Error, Result};
use crate::ext_float;
use crate::records::{Dataset, PromptRecord};
use crate::replay::ReplayOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub alpha: f64,
    pub delta: f64,
    pub k_max: usize,
}

impl GammaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha = {} not in (0, 1)",
                self.alpha
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta = {} not in (0, 1)",
                self.delta
            )));
        }
        if self.k_max < 1 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        Ok(())
    }
}

/// Selected components as `(sample index, component index)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub selected: Vec<(usize, usize)>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, pair: (usize, usize)) -> bool {
        self.selected.contains(&pair)
    }

    pub fn is_subset_of(&self, other: &ComponentSet) -> bool {
        self.selected.iter().all(|&p| other.contains(p))
    }

    /// Whether any selected component is inadmissible.
    pub fn has_false_positive(&self, record: &PromptRecord) -> bool {
        self.selected.iter().any(|&(s, c)| {
            !record.samples[s]
                .components
                .as_ref()
                .expect("selected from components")[c]
                .admission
        })
    }

    pub fn admissible_count(&self, record: &PromptRecord) -> usize {
        self.len()
            - self
                .selected
                .iter()
                .filter(|&&(s, c)| {
                    !record.samples[s]
                        .components
                        .as_ref()
                        .expect("selected from components")[c]
                        .admission
                })
                .count()
    }
}

/// Components of `included_samples` with confidence `>= gamma`.
pub fn select_components(
    record: &PromptRecord,
    included_samples: &[usize],
    gamma: f64,
) -> Result<ComponentSet> {
    let mut selected = Vec::new();
    for &s in included_samples {
        let sample = record.samples.get(s).ok_or(Error::IndexOutOfRange {
            index: s,
            len: record.samples.len(),
        })?;
        let components = sample
            .components
            .as_ref()
            .ok_or_else(|| Error::MissingComponents {
                id: record.id.clone(),
                sample: s,
            })?;
        selected.extend(
            components
                .iter()
                .enumerate()
                .filter(|(_, c)| c.confidence >= gamma)
                .map(|(c, _)| (s, c)),
        );
    }
    selected.sort_unstable();
    selected.dedup();
    Ok(ComponentSet { selected })
}

fn first_k_max(record: &PromptRecord, k_max: usize) -> Result<Vec<usize>> {
    if record.samples.len() < k_max {
        return Err(Error::InsufficientSamples {
            id: record.id.clone(),
            available: record.samples.len(),
            k_max,
        });
    }
    Ok((0..k_max).collect())
}

/// Calibration-time component selection over the first `k_max` samples.
pub fn calibration_selection(
    record: &PromptRecord,
    gamma: f64,
    k_max: usize,
) -> Result<ComponentSet> {
    select_components(record, &first_k_max(record, k_max)?, gamma)
}

/// 1 when the first-`k_max` selection at `gamma` contains an inadmissible component.
pub fn component_loss(record: &PromptRecord, gamma: f64, k_max: usize) -> Result<bool> {
    Ok(calibration_selection(record, gamma, k_max)?.has_false_positive(record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaTest {
    #[serde(with = "ext_float")]
    pub gamma: f64,
    pub p_value: f64,
    pub risk: f64,
    pub mean_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaResult {
    /// Accepted prefix of the descending-γ testing order.
    #[serde(with = "ext_float::vec")]
    pub valid_gammas: Vec<f64>,
    #[serde(with = "ext_float::option")]
    pub selected: Option<f64>,
    /// One entry per grid γ, in testing order (descending γ).
    pub p_values: Vec<GammaTest>,
}

impl GammaResult {
    pub fn abstained(&self) -> bool {
        self.selected.is_none()
    }
}

/// Calibrates γ so that the any-false-positive rate is at most `alpha`.
///
/// Hypotheses are tested from the largest γ down: selection shrinks as γ
/// grows, so component loss is non-increasing in γ. Among the accepted
/// prefix, the γ with the largest mean selection size wins (ties to the
/// smaller γ).
pub fn calibrate_gamma(cal: &Dataset, gamma_grid: &[f64], spec: &GammaSpec) -> Result<GammaResult> {
    spec.validate()?;
    if gamma_grid.is_empty() {
        return Err(Error::invalid("empty gamma grid"));
    }
    if gamma_grid.iter().any(|g| g.is_nan()) {
        return Err(Error::invalid("gamma grid contains NaN"));
    }
    let mut gammas = gamma_grid.to_vec();
    gammas.sort_by(|a, b| b.total_cmp(a));
    gammas.dedup();

    let per_record: Vec<Vec<(bool, usize)>> = cal
        .records()
        .par_iter()
        .map(|record| {
            gammas
                .iter()
                .map(|&g| {
                    let set = calibration_selection(record, g, spec.k_max)?;
                    Ok((set.has_false_positive(record), set.len()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let n = cal.len();
    let mut tests = Vec::with_capacity(gammas.len());
    for (g, &gamma) in gammas.iter().enumerate() {
        let losses = per_record.iter().filter(|r| r[g].0).count();
        let total: usize = per_record.iter().map(|r| r[g].1).sum();
        tests.push(GammaTest {
            gamma,
            p_value: binomial_tail_pvalue(n, losses, spec.alpha)?,
            risk: losses as f64 / n as f64,
            mean_count: total as f64 / n as f64,
        });
    }

    let p: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let accepted = fixed_sequence_test(&p, spec.delta);
    let valid_gammas: Vec<f64> = accepted.iter().map(|&i| gammas[i]).collect();
    // Scan ascending γ and replace only on a strict improvement: ties keep the smaller γ.
    let selected = accepted
        .iter()
        .rev()
        .map(|&i| &tests[i])
        .fold(None::<&GammaTest>, |best, t| match best {
            Some(b) if b.mean_count >= t.mean_count => Some(b),
            _ => Some(t),
        })
        .map(|t| t.gamma);

    Ok(GammaResult {
        valid_gammas,
        selected,
        p_values: tests,
    })
}

/// Default γ grid: confidence quantiles over the first `k_max` samples plus `+inf`.
pub fn gamma_grid(data: &Dataset, k_max: usize, levels: usize) -> Result<Vec<f64>> {
    data.require_k_max(k_max)?;
    let confidences: Vec<f64> = data
        .iter()
        .flat_map(|r| r.samples.iter().take(k_max))
        .flat_map(|s| s.components.iter().flatten())
        .map(|c| c.confidence)
        .collect();
    let mut grid = empirical_quantiles(&confidences, levels);
    grid.push(f64::INFINITY);
    Ok(grid)
}

/// Test-time selection over the samples the sampler actually accepted.
pub fn apply_component_selection(
    record: &PromptRecord,
    outcome: &ReplayOutcome,
    gamma: f64,
) -> Result<ComponentSet> {
    let mismatch = |what: &str| Error::InvalidRecord {
        id: record.id.clone(),
        message: format!("replay outcome does not belong to this record: {what}"),
    };
    if outcome.draws > record.samples.len() {
        return Err(mismatch("more draws than samples"));
    }
    if outcome.accepted_indices.iter().any(|&i| i >= outcome.draws) {
        return Err(mismatch("accepted index beyond draws"));
    }
    let covered = outcome
        .accepted_indices
        .iter()
        .any(|&i| record.samples[i].admission);
    if covered == outcome.loss {
        return Err(mismatch("loss disagrees with admissions"));
    }
    select_components(record, &outcome.accepted_indices, gamma)
}
