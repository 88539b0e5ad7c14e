//! Learn-Then-Test calibration of the sampler thresholds.
//!
//! The procedure is two-stage Pareto Testing with a single controlled
//! objective (coverage risk) and a single optimized objective (the
//! size/excess trade-off):
//!
//! 1. replay the whole grid on the optimization split;
//! 2. order its (risk, objective) Pareto frontier by binomial-tail p-value;
//! 3. replay the ordered configs on the calibration split and compute
//!    p-values at level `epsilon`;
//! 4. fixed sequence testing at level `delta` gives the valid set;
//! 5. pick the valid config with the lowest calibration objective.

mod grid;
mod pareto;
mod pvalue;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use grid::{empirical_quantiles, lambda_grid, DEFAULT_LEVELS};
pub use pareto::{
    order_by_p_value, pareto_frontier, pareto_testing_order, risk_objective_frontier, ConfigStats,
};
pub use pvalue::{binomial_tail_pvalue, empirical_risk};

use crate::error::{Error, Result};
use crate::records::Dataset;
use crate::replay::{replay_grid, LambdaConfig, ReplayOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub k_max: usize,
    pub rho1: f64,
    pub rho2: f64,
}

impl RiskSpec {
    /// `k_max = 20`, `rho1 = rho2 = 0.5`.
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            k_max: 20,
            rho1: 0.5,
            rho2: 0.5,
        }
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = k_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} not in (0, 1)")))
            }
        };
        unit("epsilon", self.epsilon)?;
        unit("delta", self.delta)?;
        if self.k_max < 1 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0 && self.rho1 + self.rho2 > 0.0) {
            return Err(Error::invalid(format!(
                "weights rho1 = {}, rho2 = {} must be non-negative with a positive sum",
                self.rho1, self.rho2
            )));
        }
        Ok(())
    }
}

/// Configs accepted by fixed sequence testing at level `delta`.
///
/// Walks `ordered_pvalues` in order, accepting while `p < delta` and stopping
/// for good at the first `p >= delta`. Returns the accepted prefix positions.
pub fn fixed_sequence_test(ordered_pvalues: &[f64], delta: f64) -> Vec<usize> {
    ordered_pvalues
        .iter()
        .take_while(|&&p| p < delta)
        .enumerate()
        .map(|(i, _)| i)
        .collect()
}

/// `(first-k_max risk, first-1 risk)`: the range of non-trivial epsilon.
pub fn achievable_epsilon_band(data: &Dataset, k_max: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.require_k_max(k_max)?;
    let n = data.len() as f64;
    let miss_all = data
        .iter()
        .filter(|r| r.first_admissible(k_max).is_none())
        .count();
    let miss_first = data.iter().filter(|r| !r.samples[0].admission).count();
    Ok((miss_all as f64 / n, miss_first as f64 / n))
}

/// Per-config binomial-tail p-values keyed by grid index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PValueTable {
    pub entries: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    pub grid_size: usize,
    pub frontier_size: usize,
    /// Hypotheses examined by fixed sequence testing, including the failing one.
    pub tested: usize,
    /// Position in the testing order where testing stopped, if it did.
    pub stop_index: Option<usize>,
    pub n_opt: usize,
    pub n_cal: usize,
    /// Calibration records without any admissible sample in the first `k_max`.
    pub cal_without_admissible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Grid indices passing fixed sequence testing, in testing order.
    pub valid_configs: Vec<usize>,
    /// `None` when no configuration is valid (abstention).
    pub selected: Option<LambdaConfig>,
    pub selected_index: Option<usize>,
    /// Frontier indices in the order they were tested.
    pub test_order: Vec<usize>,
    /// Mean selection objective on the calibration split.
    pub objective_values: BTreeMap<usize, f64>,
    /// Calibration-split p-values at level epsilon.
    pub p_values: PValueTable,
    /// Optimization-split p-values that fixed the testing order.
    pub opt_p_values: PValueTable,
    pub diagnostics: CalibrationDiagnostics,
}

impl CalibrationResult {
    pub fn abstained(&self) -> bool {
        self.selected.is_none()
    }
}

/// Replays `configs` on every record and returns per-config totals.
///
/// Records are replayed in parallel; sums are taken in record order so the
/// result does not depend on scheduling.
pub fn evaluate_configs(
    data: &Dataset,
    configs: &[LambdaConfig],
    spec: &RiskSpec,
) -> Result<Vec<ConfigStats>> {
    let per_record: Vec<Vec<ReplayOutcome>> = data
        .records()
        .par_iter()
        .map(|record| replay_grid(record, configs, spec.k_max))
        .collect::<Result<_>>()?;
    let n = data.len();
    let mut losses = vec![0usize; configs.len()];
    let mut objective = vec![0.0f64; configs.len()];
    for outcomes in &per_record {
        for (c, outcome) in outcomes.iter().enumerate() {
            losses[c] += usize::from(outcome.loss);
            objective[c] += outcome.objective(spec.rho1, spec.rho2);
        }
    }
    Ok(losses
        .into_iter()
        .zip(objective)
        .map(|(losses, total)| ConfigStats {
            n,
            losses,
            objective: total / n as f64,
        })
        .collect())
}

fn ensure_disjoint(opt: &Dataset, cal: &Dataset) -> Result<()> {
    let ids: HashSet<&str> = opt.ids().collect();
    if let Some(shared) = cal.ids().find(|id| ids.contains(id)) {
        return Err(Error::invalid(format!(
            "record {shared:?} appears in both optimization and calibration splits"
        )));
    }
    Ok(())
}

/// Calibrates λ on `cal` using `opt` to order the hypotheses.
pub fn calibrate_lambda(
    opt: &Dataset,
    cal: &Dataset,
    grid: &[LambdaConfig],
    spec: &RiskSpec,
) -> Result<CalibrationResult> {
    spec.validate()?;
    LambdaCalibrator::new(opt, cal, grid, spec)?.calibrate(spec.epsilon, spec.delta)
}

/// The epsilon-independent part of [`calibrate_lambda`].
///
/// Grid replay on the optimization split, the (risk, objective) frontier and
/// the frontier's calibration statistics do not depend on `epsilon` or
/// `delta`, so a sweep over tolerances computes them once per split.
#[derive(Debug, Clone)]
pub struct LambdaCalibrator {
    grid: Vec<LambdaConfig>,
    opt_stats: Vec<ConfigStats>,
    frontier: Vec<usize>,
    /// Calibration statistics keyed by grid index, frontier members only.
    cal_stats: BTreeMap<usize, ConfigStats>,
    n_opt: usize,
    n_cal: usize,
    cal_without_admissible: usize,
}

impl LambdaCalibrator {
    pub fn new(
        opt: &Dataset,
        cal: &Dataset,
        grid: &[LambdaConfig],
        spec: &RiskSpec,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::invalid("empty configuration grid"));
        }
        for config in grid {
            config.validate()?;
        }
        opt.require_k_max(spec.k_max)?;
        cal.require_k_max(spec.k_max)?;
        ensure_disjoint(opt, cal)?;

        let opt_stats = evaluate_configs(opt, grid, spec)?;
        let frontier = risk_objective_frontier(&opt_stats)?;
        let frontier_configs: Vec<LambdaConfig> = frontier.iter().map(|&i| grid[i]).collect();
        let cal_stats = frontier
            .iter()
            .copied()
            .zip(evaluate_configs(cal, &frontier_configs, spec)?)
            .collect();
        Ok(Self {
            grid: grid.to_vec(),
            opt_stats,
            frontier,
            cal_stats,
            n_opt: opt.len(),
            n_cal: cal.len(),
            cal_without_admissible: cal
                .iter()
                .filter(|r| r.first_admissible(spec.k_max).is_none())
                .count(),
        })
    }

    pub fn grid(&self) -> &[LambdaConfig] {
        &self.grid
    }

    pub fn calibrate(&self, epsilon: f64, delta: f64) -> Result<CalibrationResult> {
        for (name, v) in [("epsilon", epsilon), ("delta", delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} = {v} not in (0, 1)")));
            }
        }
        let test_order = order_by_p_value(&self.opt_stats, &self.frontier, epsilon)?;
        let mut opt_p_values = PValueTable::default();
        let mut p_values = PValueTable::default();
        let mut objective_values = BTreeMap::new();
        let mut cal_p = Vec::with_capacity(test_order.len());
        for &i in &test_order {
            opt_p_values
                .entries
                .insert(i, self.opt_stats[i].p_value(epsilon)?);
            let stats = &self.cal_stats[&i];
            let p = stats.p_value(epsilon)?;
            p_values.entries.insert(i, p);
            objective_values.insert(i, stats.objective);
            cal_p.push(p);
        }

        let accepted = fixed_sequence_test(&cal_p, delta);
        let stop_index = (accepted.len() < test_order.len()).then_some(accepted.len());
        let valid_configs: Vec<usize> = accepted.iter().map(|&pos| test_order[pos]).collect();
        let selected_index = valid_configs.iter().copied().min_by(|&a, &b| {
            objective_values[&a]
                .total_cmp(&objective_values[&b])
                .then(a.cmp(&b))
        });

        Ok(CalibrationResult {
            selected: selected_index.map(|i| self.grid[i]),
            selected_index,
            diagnostics: CalibrationDiagnostics {
                grid_size: self.grid.len(),
                frontier_size: test_order.len(),
                tested: stop_index.map_or(test_order.len(), |s| s + 1),
                stop_index,
                n_opt: self.n_opt,
                n_cal: self.n_cal,
                cal_without_admissible: self.cal_without_admissible,
            },
            valid_configs,
            test_order,
            objective_values,
            p_values,
            opt_p_values,
        })
    }
}

/// Machine-readable calibration report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub spec: RiskSpec,
    pub achievable_band: (f64, f64),
    pub grid: Vec<LambdaConfig>,
    pub result: CalibrationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<crate::components::GammaResult>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{PromptRecord, SampleRecord};
    use crate::set_scoring::ScorerKind;

    #[test]
    fn fst_examples() {
        assert_eq!(
            fixed_sequence_test(&[0.001, 0.01, 0.2, 0.005], 0.05),
            vec![0, 1]
        );
        assert!(fixed_sequence_test(&[0.9, 0.001], 0.05).is_empty());
        assert_eq!(fixed_sequence_test(&[0.04], 0.05), vec![0]);
        // p == delta stops.
        assert!(fixed_sequence_test(&[0.05], 0.05).is_empty());
        assert!(fixed_sequence_test(&[], 0.05).is_empty());
    }

    fn dataset(prefix: &str, admissions: &[Vec<bool>]) -> Dataset {
        Dataset::new(
            admissions
                .iter()
                .enumerate()
                .map(|(i, a)| PromptRecord {
                    id: format!("{prefix}{i}"),
                    samples: a.iter().map(|&x| SampleRecord::new(0.5, x)).collect(),
                    similarity: Some((0..a.len()).map(|k| vec![0.0; k]).collect()),
                    reference_components: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn band_extremes() {
        let all = dataset("a", &vec![vec![true, false]; 5]);
        assert_eq!(achievable_epsilon_band(&all, 2).unwrap(), (0.0, 0.0));
        let none = dataset("n", &vec![vec![false, false]; 5]);
        assert_eq!(achievable_epsilon_band(&none, 2).unwrap(), (1.0, 1.0));
        let mixed = dataset(
            "m",
            &[
                vec![false, true],
                vec![true, false],
                vec![false, false],
                vec![false, true],
            ],
        );
        assert_eq!(achievable_epsilon_band(&mixed, 2).unwrap(), (0.25, 0.75));
        assert_eq!(achievable_epsilon_band(&mixed, 1).unwrap(), (0.75, 0.75));
    }

    #[test]
    fn zero_risk_config_selected() {
        // Every second sample admissible: first-2 has zero risk, first-1 risk 1.
        let rows = vec![vec![false, true]; 400];
        let opt = dataset("o", &rows[..100]);
        let cal = dataset("c", &rows[100..]);
        let spec = RiskSpec::new(0.05, 0.05).with_k_max(2);
        let grid = lambda_grid(&opt, ScorerKind::FirstK, 2, DEFAULT_LEVELS).unwrap();
        let result = calibrate_lambda(&opt, &cal, &grid, &spec).unwrap();
        // p = 0.95^300 is far below delta.
        assert!(0.95f64.powi(300) < spec.delta);
        assert_eq!(result.valid_configs, vec![1]);
        assert_eq!(result.selected, Some(LambdaConfig::first_k(2)));
        assert_eq!(result.diagnostics.stop_index, Some(1));
        assert!(result
            .p_values
            .entries
            .values()
            .all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn abstains_below_band() {
        let rows = vec![vec![false, false]; 200];
        let opt = dataset("o", &rows[..50]);
        let cal = dataset("c", &rows[50..]);
        let spec = RiskSpec::new(0.5, 0.05).with_k_max(2);
        let grid = lambda_grid(&opt, ScorerKind::Max, 2, 5).unwrap();
        let result = calibrate_lambda(&opt, &cal, &grid, &spec).unwrap();
        assert!(result.abstained());
        assert!(result.valid_configs.is_empty());
        assert_eq!(result.selected_index, None);
    }

    #[test]
    fn argument_errors() {
        let rows = vec![vec![true, false]; 10];
        let opt = dataset("o", &rows[..5]);
        let cal = dataset("c", &rows[5..]);
        let spec = RiskSpec::new(0.2, 0.05).with_k_max(2);
        assert!(calibrate_lambda(&opt, &cal, &[], &spec).is_err());
        let grid = [LambdaConfig::first_k(1)];
        assert!(calibrate_lambda(&opt, &cal, &grid, &spec.with_k_max(3)).is_err());
        assert!(calibrate_lambda(&opt, &opt, &grid, &spec).is_err());
        let mut bad = spec;
        bad.rho1 = 0.0;
        bad.rho2 = 0.0;
        assert!(calibrate_lambda(&opt, &cal, &grid, &bad).is_err());
    }
}
