//! Threshold grids derived from the optimization split.
//!
//! Each continuous threshold takes `levels` empirical quantiles of the
//! values it is compared against (order statistics at evenly spaced
//! levels from 0 to 1, endpoints included) plus sentinels. Count-based
//! stop thresholds use the integers `1..=k_max`.

use crate::error::{Error, Result};
use crate::records::Dataset;
use crate::replay::LambdaConfig;
use crate::set_scoring::{set_score, ScorerKind, SetState};
use crate::text_metrics::compute_similarity;

pub const DEFAULT_LEVELS: usize = 17;

/// Order statistics at `levels` evenly spaced quantile levels in `[0, 1]`,
/// deduplicated and ascending. Empty input gives an empty grid.
pub fn empirical_quantiles(values: &[f64], levels: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() || levels == 0 {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let mut out: Vec<f64> = (0..levels)
        .map(|i| {
            let level = if levels == 1 {
                0.5
            } else {
                i as f64 / (levels - 1) as f64
            };
            sorted[(level * last as f64).round() as usize]
        })
        .collect();
    dedup_sorted(&mut out);
    out
}

fn dedup_sorted(values: &mut Vec<f64>) {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| a == b);
}

fn with_sentinels(mut values: Vec<f64>) -> Vec<f64> {
    values.push(f64::NEG_INFINITY);
    values.push(f64::INFINITY);
    dedup_sorted(&mut values);
    values
}

/// Default λ grid for `scorer`, built from the first `k_max` samples of `opt`.
pub fn lambda_grid(
    opt: &Dataset,
    scorer: ScorerKind,
    k_max: usize,
    levels: usize,
) -> Result<Vec<LambdaConfig>> {
    opt.require_k_max(k_max)?;
    if levels == 0 {
        return Err(Error::invalid("grid needs at least one quantile level"));
    }
    if scorer == ScorerKind::FirstK {
        return Ok((1..=k_max).map(LambdaConfig::first_k).collect());
    }

    let mut similarities = Vec::new();
    let mut qualities = Vec::new();
    let mut set_scores = Vec::new();
    for record in opt.iter() {
        let owned;
        let rows = match &record.similarity {
            Some(rows) => rows,
            None => {
                owned = compute_similarity(record)?;
                &owned
            }
        };
        let mut state = SetState::default();
        for (k, sample) in record.samples.iter().take(k_max).enumerate() {
            similarities.extend_from_slice(&rows[k]);
            qualities.push(sample.quality);
            state.accepted_qualities.push(sample.quality);
            state.draws_so_far = k + 1;
            set_scores.push(set_score(scorer, &state));
        }
    }

    let lambda1 = with_sentinels(empirical_quantiles(&similarities, levels));
    let lambda2 = with_sentinels(empirical_quantiles(&qualities, levels));
    let lambda3 = if scorer.is_count_based() {
        (1..=k_max).map(|k| k as f64).collect()
    } else {
        let mut l3 = empirical_quantiles(&set_scores, levels);
        // A finite level above every observed score: never stop before k_max.
        if let Some(&top) = l3.last() {
            l3.push(top + top.abs().max(1.0));
        }
        l3
    };

    let mut grid = Vec::with_capacity(lambda1.len() * lambda2.len() * lambda3.len());
    for &l1 in &lambda1 {
        for &l2 in &lambda2 {
            for &l3 in &lambda3 {
                grid.push(LambdaConfig::new(l1, l2, l3, scorer)?);
            }
        }
    }
    Ok(grid)
}
