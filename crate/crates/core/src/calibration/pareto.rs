use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::pvalue::binomial_tail_pvalue;
use crate::error::{Error, Result};

/// Indices of the non-dominated points.
///
/// `minimize[d]` selects the direction of coordinate `d`; maximized
/// coordinates are negated first. `u` dominates `v` when `u <= v`
/// coordinatewise and `u != v`, so exact duplicates of a frontier point are
/// all kept. Output indices are ascending.
///
/// Points are visited in lexicographic order. A dominator always sorts
/// strictly before the point it dominates, and by transitivity some frontier
/// point dominates every dominated point, so each candidate only needs to be
/// compared against the frontier found so far.
pub fn pareto_frontier(points: &[Vec<f64>], minimize: &[bool]) -> Result<Vec<usize>> {
    let dim = minimize.len();
    if dim == 0 {
        return Err(Error::invalid(
            "pareto frontier needs at least one objective",
        ));
    }
    let mut normalized = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        if point.len() != dim {
            return Err(Error::invalid(format!(
                "point {i} has dimension {}, expected {dim}",
                point.len()
            )));
        }
        if point.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("point {i} has a NaN coordinate")));
        }
        let oriented: Vec<f64> = point
            .iter()
            .zip(minimize)
            // `+ 0.0` folds -0.0 into 0.0 so the sort agrees with `<=`.
            .map(|(&v, &min)| if min { v + 0.0 } else { -v + 0.0 })
            .collect();
        normalized.push(oriented);
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lexicographic(&normalized[a], &normalized[b]).then(a.cmp(&b)));

    let mut frontier: Vec<usize> = Vec::new();
    for &candidate in &order {
        let point = &normalized[candidate];
        if !frontier.iter().any(|&f| dominates(&normalized[f], point)) {
            frontier.push(candidate);
        }
    }
    frontier.sort_unstable();
    Ok(frontier)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn dominates(u: &[f64], v: &[f64]) -> bool {
    u.iter().zip(v).all(|(a, b)| a <= b) && u.iter().zip(v).any(|(a, b)| a < b)
}

/// Loss count and mean objective of one configuration on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigStats {
    pub n: usize,
    pub losses: usize,
    pub objective: f64,
}

impl ConfigStats {
    pub fn risk(&self) -> f64 {
        self.losses as f64 / self.n as f64
    }

    pub fn p_value(&self, epsilon: f64) -> Result<f64> {
        binomial_tail_pvalue(self.n, self.losses, epsilon)
    }
}

/// Testing order for fixed sequence testing.
///
/// Keeps the Pareto frontier of (risk, objective), both minimized, then
/// sorts it by ascending binomial-tail p-value at `epsilon` computed on the
/// same split; ties go to lower objective, then lower index.
pub fn pareto_testing_order(opt_outcomes: &[ConfigStats], epsilon: f64) -> Result<Vec<usize>> {
    let frontier = risk_objective_frontier(opt_outcomes)?;
    order_by_p_value(opt_outcomes, &frontier, epsilon)
}

/// Pareto frontier of (risk, objective), both minimized.
pub fn risk_objective_frontier(stats: &[ConfigStats]) -> Result<Vec<usize>> {
    if stats.is_empty() {
        return Err(Error::invalid("no configurations to order"));
    }
    let points: Vec<Vec<f64>> = stats.iter().map(|s| vec![s.risk(), s.objective]).collect();
    pareto_frontier(&points, &[true, true])
}

/// Sorts `candidates` by ascending p-value at `epsilon`, then objective, then index.
pub fn order_by_p_value(
    stats: &[ConfigStats],
    candidates: &[usize],
    epsilon: f64,
) -> Result<Vec<usize>> {
    let mut keyed = candidates
        .iter()
        .map(|&i| Ok((stats[i].p_value(epsilon)?, stats[i].objective, i)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}
