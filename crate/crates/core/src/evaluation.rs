//! Trial protocol and metrics.
//!
//! A trial shuffles the data with its seed, splits it into optimization,
//! calibration and test parts (10/20/70 by default), calibrates on the first
//! two and measures on the third. Sweeps repeat this over tolerances and
//! trials; trial `t` of a sweep uses seed [`derive_seed`]`(master_seed, t)`
//! for every tolerance, so tolerances are compared on identical splits.
//!
//! Metrics per trial (set calibration):
//! - `mean_loss`: fraction of test prompts whose set has no admissible sample;
//! - `mean_excess`: mean of `[S - S*]^+ / S`, zero when no admissible sample
//!   exists within `k_max`;
//! - `mean_size_normalized`: mean of `|C| / k_max`.
//!
//! AUCs are normalized trapezoid integrals over the tolerances that are
//! non-trivial (below the first-sample risk of the full dataset) and achieved
//! (at least one trial did not abstain), using the mean over non-abstaining
//! trials at each tolerance.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    achievable_epsilon_band, lambda_grid, LambdaCalibrator, RiskSpec, DEFAULT_LEVELS,
};
use crate::components::{calibrate_gamma, calibration_selection, gamma_grid, GammaSpec};
use crate::error::{Error, Result};
use crate::ext_float;
use crate::records::{split_dataset, Dataset, SplitFractions};
use crate::replay::{replay, LambdaConfig, ReplayOutcome};
use crate::seeds::derive_seed;
use crate::set_scoring::ScorerKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub fractions: SplitFractions,
    /// Quantile levels per threshold in the default grids.
    pub grid_levels: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            fractions: SplitFractions::default(),
            grid_levels: DEFAULT_LEVELS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Set,
    Component,
}

/// One row of a sweep: one tolerance, one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub kind: SweepKind,
    pub scorer: Option<ScorerKind>,
    /// Epsilon for set calibration, alpha for component calibration.
    pub target: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub abstained: bool,
    pub mean_loss: Option<f64>,
    pub mean_excess: Option<f64>,
    pub mean_size_normalized: Option<f64>,
    pub mean_component_count: Option<f64>,
    pub mean_recall: Option<f64>,
    pub n_test: usize,
    /// Test prompts with no admissible sample among the first `k_max`.
    pub test_without_admissible: usize,
    pub selected: Option<String>,
}

/// CSV column order; frozen.
pub const CSV_COLUMNS: [&str; 14] = [
    "kind",
    "scorer",
    "target",
    "trial",
    "trial_seed",
    "abstained",
    "mean_loss",
    "mean_excess",
    "mean_size_normalized",
    "mean_component_count",
    "mean_recall",
    "n_test",
    "test_without_admissible",
    "selected",
];

pub fn write_csv<W: Write>(rows: &[TrialReport], writer: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("csv output failed: {e}"));
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    out.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: f64,
    pub trials: usize,
    pub abstentions: usize,
    pub loss: Option<MeanStd>,
    pub excess: Option<MeanStd>,
    pub size_normalized: Option<MeanStd>,
    pub component_count: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    /// Non-abstaining trials whose test loss exceeded the target.
    pub violations: usize,
    pub violation_rate: Option<f64>,
    pub trivial: bool,
    pub in_auc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub scorer: Option<ScorerKind>,
    pub trials: usize,
    pub master_seed: u64,
    pub delta: f64,
    pub k_max: usize,
    /// (first-k_max risk, first-1 risk) for set sweeps; (0, take-all
    /// false-positive rate) for component sweeps.
    pub achievable_band: (f64, f64),
    pub summaries: Vec<TargetSummary>,
    pub auc_range: Option<(f64, f64)>,
    pub auc_loss: Option<f64>,
    pub auc_excess: Option<f64>,
    pub auc_size: Option<f64>,
    pub auc_component_count: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<TrialReport>,
}

/// `(1 / (b - a)) ∫_a^b f` by the trapezoid rule over `(x, f(x))` points.
///
/// `None` with fewer than two distinct abscissae.
pub fn normalized_auc(points: &[(f64, f64)]) -> Option<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (a, b) = (sorted.first()?.0, sorted.last()?.0);
    if b <= a {
        return None;
    }
    let area: f64 = sorted
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Some(area / (b - a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SetMetrics {
    mean_loss: f64,
    mean_excess: f64,
    mean_size_normalized: f64,
    without_admissible: usize,
}

fn evaluate_set(test: &Dataset, config: &LambdaConfig, k_max: usize) -> Result<SetMetrics> {
    let outcomes: Vec<ReplayOutcome> = test
        .records()
        .par_iter()
        .map(|r| replay(r, config, k_max))
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let mut loss = 0.0;
    let mut excess = 0.0;
    let mut size = 0.0;
    let mut without = 0;
    for o in &outcomes {
        loss += f64::from(u8::from(o.loss));
        excess += o.relative_excess();
        size += o.set_size() as f64 / k_max as f64;
        without += usize::from(o.oracle_first_admissible.is_none());
    }
    Ok(SetMetrics {
        mean_loss: loss / n,
        mean_excess: excess / n,
        mean_size_normalized: size / n,
        without_admissible: without,
    })
}

fn audit_disjoint(opt: &Dataset, cal: &Dataset, test: &Dataset) -> Result<()> {
    let seen: HashSet<&str> = opt.ids().chain(cal.ids()).collect();
    match test.ids().find(|id| seen.contains(id)) {
        Some(id) => Err(Error::invalid(format!(
            "test record {id:?} was used for calibration"
        ))),
        None => Ok(()),
    }
}

fn validate_targets(targets: &[f64], name: &str) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid(format!("no {name} values given")));
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::invalid(format!("{name} = {t} not in (0, 1)")));
    }
    Ok(())
}

fn set_row(
    spec: &RiskSpec,
    scorer: ScorerKind,
    seed: u64,
    n_test: usize,
    selected: Option<&LambdaConfig>,
    metrics: Option<SetMetrics>,
    without_admissible: usize,
) -> TrialReport {
    TrialReport {
        kind: SweepKind::Set,
        scorer: Some(scorer),
        target: spec.epsilon,
        trial: 0,
        trial_seed: seed,
        abstained: selected.is_none(),
        mean_loss: metrics.map(|m| m.mean_loss),
        mean_excess: metrics.map(|m| m.mean_excess),
        mean_size_normalized: metrics.map(|m| m.mean_size_normalized),
        mean_component_count: None,
        mean_recall: None,
        n_test,
        test_without_admissible: without_admissible,
        selected: selected.map(ToString::to_string),
    }
}

/// Prepared trial state shared by every tolerance of one trial.
struct SetTrial {
    seed: u64,
    calibrator: LambdaCalibrator,
    test: Dataset,
    without_admissible: usize,
    cache: HashMap<usize, SetMetrics>,
}

impl SetTrial {
    fn prepare(
        data: &Dataset,
        spec: &RiskSpec,
        scorer: ScorerKind,
        seed: u64,
        options: &TrialOptions,
    ) -> Result<Self> {
        let (opt, cal, test) = split_dataset(data, options.fractions, seed)?;
        audit_disjoint(&opt, &cal, &test)?;
        let grid = lambda_grid(&opt, scorer, spec.k_max, options.grid_levels)?;
        let calibrator = LambdaCalibrator::new(&opt, &cal, &grid, spec)?;
        let without_admissible = test
            .iter()
            .filter(|r| r.first_admissible(spec.k_max).is_none())
            .count();
        Ok(Self {
            seed,
            calibrator,
            test,
            without_admissible,
            cache: HashMap::new(),
        })
    }

    fn run(&mut self, spec: &RiskSpec, scorer: ScorerKind) -> Result<TrialReport> {
        let result = self.calibrator.calibrate(spec.epsilon, spec.delta)?;
        let metrics = match result.selected_index {
            Some(i) => Some(match self.cache.get(&i) {
                Some(m) => *m,
                None => {
                    let m = evaluate_set(&self.test, &self.calibrator.grid()[i], spec.k_max)?;
                    self.cache.insert(i, m);
                    m
                }
            }),
            None => None,
        };
        Ok(set_row(
            spec,
            scorer,
            self.seed,
            self.test.len(),
            result.selected.as_ref(),
            metrics,
            self.without_admissible,
        ))
    }
}

/// One split-calibrate-test trial at `spec.epsilon`.
pub fn run_trial(
    data: &Dataset,
    spec: &RiskSpec,
    scorer: ScorerKind,
    seed: u64,
    options: &TrialOptions,
) -> Result<TrialReport> {
    spec.validate()?;
    data.require_k_max(spec.k_max)?;
    SetTrial::prepare(data, spec, scorer, seed, options)?.run(spec, scorer)
}

struct Aggregate {
    summaries: Vec<TargetSummary>,
    range: Option<(f64, f64)>,
    loss: Option<f64>,
    excess: Option<f64>,
    size: Option<f64>,
    component_count: Option<f64>,
}

fn summarize(rows: &[TrialReport], targets: &[f64], trivial_from: f64) -> Aggregate {
    let mut summaries = Vec::with_capacity(targets.len());
    for &target in targets {
        let group: Vec<&TrialReport> = rows.iter().filter(|r| r.target == target).collect();
        let active: Vec<&TrialReport> = group.iter().copied().filter(|r| !r.abstained).collect();
        let collect = |f: fn(&TrialReport) -> Option<f64>| -> Option<MeanStd> {
            let values: Vec<f64> = active.iter().filter_map(|r| f(r)).collect();
            MeanStd::of(&values)
        };
        let violations = active
            .iter()
            .filter(|r| r.mean_loss.is_some_and(|l| l > target))
            .count();
        let trivial = target >= trivial_from;
        summaries.push(TargetSummary {
            target,
            trials: group.len(),
            abstentions: group.len() - active.len(),
            loss: collect(|r| r.mean_loss),
            excess: collect(|r| r.mean_excess),
            size_normalized: collect(|r| r.mean_size_normalized),
            component_count: collect(|r| r.mean_component_count),
            recall: collect(|r| r.mean_recall),
            violations,
            violation_rate: (!active.is_empty()).then(|| violations as f64 / active.len() as f64),
            trivial,
            in_auc: !trivial && !active.is_empty(),
        });
    }

    let included: Vec<&TargetSummary> = summaries.iter().filter(|s| s.in_auc).collect();
    let auc = |f: fn(&TargetSummary) -> Option<MeanStd>| -> Option<f64> {
        let points: Vec<(f64, f64)> = included
            .iter()
            .map(|s| f(s).map(|m| (s.target, m.mean)))
            .collect::<Option<_>>()?;
        normalized_auc(&points)
    };
    let lo = included
        .iter()
        .map(|s| s.target)
        .fold(f64::INFINITY, f64::min);
    let hi = included
        .iter()
        .map(|s| s.target)
        .fold(f64::NEG_INFINITY, f64::max);
    Aggregate {
        range: (lo < hi).then_some((lo, hi)),
        loss: auc(|s| s.loss),
        excess: auc(|s| s.excess),
        size: auc(|s| s.size_normalized),
        component_count: auc(|s| s.component_count),
        summaries,
    }
}

/// Runs `trials` trials at every epsilon and aggregates them.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    data: &Dataset,
    epsilons: &[f64],
    template: &RiskSpec,
    scorer: ScorerKind,
    trials: usize,
    master_seed: u64,
    options: &TrialOptions,
) -> Result<SweepReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    validate_targets(epsilons, "epsilon")?;
    template.validate()?;
    let band = achievable_epsilon_band(data, template.k_max)?;

    let per_trial: Vec<Vec<TrialReport>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(master_seed, t as u64);
            let mut trial = SetTrial::prepare(data, template, scorer, seed, options)?;
            epsilons
                .iter()
                .map(|&epsilon| {
                    let spec = RiskSpec {
                        epsilon,
                        ..*template
                    };
                    let mut row = trial.run(&spec, scorer)?;
                    row.trial = t;
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let rows = order_rows(per_trial, epsilons.len());
    let agg = summarize(&rows, epsilons, band.1);
    Ok(SweepReport {
        kind: SweepKind::Set,
        scorer: Some(scorer),
        trials,
        master_seed,
        delta: template.delta,
        k_max: template.k_max,
        achievable_band: band,
        summaries: agg.summaries,
        auc_range: agg.range,
        auc_loss: agg.loss,
        auc_excess: agg.excess,
        auc_size: agg.size,
        auc_component_count: None,
        rows,
    })
}

/// Rows ordered by target (input order), then trial.
fn order_rows(per_trial: Vec<Vec<TrialReport>>, n_targets: usize) -> Vec<TrialReport> {
    let mut rows = Vec::with_capacity(per_trial.len() * n_targets);
    for target in 0..n_targets {
        rows.extend(
            per_trial
                .iter()
                .map(|trial_rows| trial_rows[target].clone()),
        );
    }
    rows
}

fn require_components(data: &Dataset, k_max: usize) -> Result<()> {
    for record in data.iter() {
        if let Some(s) = record
            .samples
            .iter()
            .take(k_max)
            .position(|s| s.components.is_none())
        {
            return Err(Error::MissingComponents {
                id: record.id.clone(),
                sample: s,
            });
        }
    }
    Ok(())
}

/// Any-false-positive rate when every component of the first `k_max` samples is kept.
pub fn take_all_false_positive_rate(data: &Dataset, k_max: usize) -> Result<f64> {
    let mut failures = 0;
    for record in data.iter() {
        if calibration_selection(record, f64::NEG_INFINITY, k_max)?.has_false_positive(record) {
            failures += 1;
        }
    }
    Ok(failures as f64 / data.len() as f64)
}

fn component_row(
    test: &Dataset,
    spec: &GammaSpec,
    gamma: Option<f64>,
    seed: u64,
) -> Result<TrialReport> {
    let mut row = TrialReport {
        kind: SweepKind::Component,
        scorer: None,
        target: spec.alpha,
        trial: 0,
        trial_seed: seed,
        abstained: gamma.is_none(),
        mean_loss: None,
        mean_excess: None,
        mean_size_normalized: None,
        mean_component_count: None,
        mean_recall: None,
        n_test: test.len(),
        test_without_admissible: test
            .iter()
            .filter(|r| r.first_admissible(spec.k_max).is_none())
            .count(),
        selected: gamma.map(ext_float::display),
    };
    let Some(gamma) = gamma else {
        return Ok(row);
    };
    let n = test.len() as f64;
    let mut false_positive = 0usize;
    let mut count = 0usize;
    let mut recall = Vec::new();
    for record in test.iter() {
        let set = calibration_selection(record, gamma, spec.k_max)?;
        false_positive += usize::from(set.has_false_positive(record));
        count += set.len();
        if let Some(reference) = record.reference_components.filter(|&r| r > 0) {
            recall.push((set.admissible_count(record) as f64 / f64::from(reference)).min(1.0));
        }
    }
    row.mean_loss = Some(false_positive as f64 / n);
    row.mean_component_count = Some(count as f64 / n);
    row.mean_recall = MeanStd::of(&recall).map(|m| m.mean);
    Ok(row)
}

/// Component-selection sweep over `alphas`.
///
/// γ is calibrated on the calibration split with a grid taken from the
/// optimization split, then applied at test time to the first `k_max`
/// samples of each test prompt: the largest set the sampler can return, so
/// the measured false-positive rate bounds that of any smaller set.
pub fn component_sweep(
    data: &Dataset,
    alphas: &[f64],
    template: &GammaSpec,
    trials: usize,
    master_seed: u64,
    options: &TrialOptions,
) -> Result<SweepReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    validate_targets(alphas, "alpha")?;
    template.validate()?;
    data.require_k_max(template.k_max)?;
    require_components(data, template.k_max)?;
    let band = (0.0, take_all_false_positive_rate(data, template.k_max)?);

    let per_trial: Vec<Vec<TrialReport>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(master_seed, t as u64);
            let (opt, cal, test) = split_dataset(data, options.fractions, seed)?;
            audit_disjoint(&opt, &cal, &test)?;
            let grid = gamma_grid(&opt, template.k_max, options.grid_levels)?;
            alphas
                .iter()
                .map(|&alpha| {
                    let spec = GammaSpec { alpha, ..*template };
                    let result = calibrate_gamma(&cal, &grid, &spec)?;
                    let mut row = component_row(&test, &spec, result.selected, seed)?;
                    row.trial = t;
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let rows = order_rows(per_trial, alphas.len());
    let agg = summarize(&rows, alphas, band.1);
    Ok(SweepReport {
        kind: SweepKind::Component,
        scorer: None,
        trials,
        master_seed,
        delta: template.delta,
        k_max: template.k_max,
        achievable_band: band,
        summaries: agg.summaries,
        auc_range: agg.range,
        auc_loss: agg.loss,
        auc_excess: None,
        auc_size: None,
        auc_component_count: agg.component_count,
        rows,
    })
}

/// Checks that `conservative` equals `data` except for admissions, which may only go 1 → 0.
pub fn check_conservative(data: &Dataset, conservative: &Dataset) -> Result<()> {
    let fail = |message: String| Err(Error::NotConservative(message));
    if data.len() != conservative.len() {
        return fail(format!("{} records vs {}", data.len(), conservative.len()));
    }
    for (a, c) in data.iter().zip(conservative.iter()) {
        if a.id != c.id || a.samples.len() != c.samples.len() || a.similarity != c.similarity {
            return fail(format!("record {:?} differs beyond admissions", a.id));
        }
        for (i, (sa, sc)) in a.samples.iter().zip(&c.samples).enumerate() {
            if sa.quality != sc.quality || sa.text != sc.text {
                return fail(format!(
                    "record {:?} sample {i} differs beyond admissions",
                    a.id
                ));
            }
            if sc.admission && !sa.admission {
                return fail(format!(
                    "record {:?} sample {i}: conservative label 1 where true label 0",
                    a.id
                ));
            }
            let (ca, cc) = (
                sa.components.as_deref().unwrap_or(&[]),
                sc.components.as_deref().unwrap_or(&[]),
            );
            if ca.len() != cc.len() {
                return fail(format!(
                    "record {:?} sample {i}: component lists differ",
                    a.id
                ));
            }
            for (j, (x, y)) in ca.iter().zip(cc).enumerate() {
                if x.confidence != y.confidence || (y.admission && !x.admission) {
                    return fail(format!(
                        "record {:?} sample {i} component {j} is not conservative",
                        a.id
                    ));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeTrial {
    pub trial: usize,
    pub trial_seed: u64,
    pub abstained: bool,
    /// Test risk under the true admissions.
    pub risk_true: Option<f64>,
    /// Test risk under the conservative admissions used for calibration.
    pub risk_conservative: Option<f64>,
    /// Per-prompt loss dominance held on every test prompt.
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeReport {
    pub epsilon: f64,
    pub trials: Vec<ConservativeTrial>,
    pub abstentions: usize,
    pub all_dominated: bool,
}

/// Calibrates on conservative labels and checks that risk under the true
/// labels never exceeds risk under the conservative ones.
#[allow(clippy::too_many_arguments)]
pub fn conservative_admission_check(
    data: &Dataset,
    conservative: &Dataset,
    spec: &RiskSpec,
    scorer: ScorerKind,
    trials: usize,
    master_seed: u64,
    options: &TrialOptions,
) -> Result<ConservativeReport> {
    spec.validate()?;
    check_conservative(data, conservative)?;
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let rows: Vec<ConservativeTrial> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(master_seed, t as u64);
            let (opt, cal, test_cons) = split_dataset(conservative, options.fractions, seed)?;
            let (_, _, test_true) = split_dataset(data, options.fractions, seed)?;
            audit_disjoint(&opt, &cal, &test_cons)?;
            let grid = lambda_grid(&opt, scorer, spec.k_max, options.grid_levels)?;
            let result = LambdaCalibrator::new(&opt, &cal, &grid, spec)?
                .calibrate(spec.epsilon, spec.delta)?;
            let Some(config) = result.selected else {
                return Ok(ConservativeTrial {
                    trial: t,
                    trial_seed: seed,
                    abstained: true,
                    risk_true: None,
                    risk_conservative: None,
                    dominated: true,
                });
            };
            let mut losses_true = 0usize;
            let mut losses_cons = 0usize;
            let mut dominated = true;
            for (r_true, r_cons) in test_true.iter().zip(test_cons.iter()) {
                let o_true = replay(r_true, &config, spec.k_max)?;
                let o_cons = replay(r_cons, &config, spec.k_max)?;
                debug_assert_eq!(o_true.accepted_indices, o_cons.accepted_indices);
                dominated &= o_true.loss <= o_cons.loss;
                losses_true += usize::from(o_true.loss);
                losses_cons += usize::from(o_cons.loss);
            }
            let n = test_true.len() as f64;
            Ok(ConservativeTrial {
                trial: t,
                trial_seed: seed,
                abstained: false,
                risk_true: Some(losses_true as f64 / n),
                risk_conservative: Some(losses_cons as f64 / n),
                dominated: dominated && losses_true <= losses_cons,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConservativeReport {
        epsilon: spec.epsilon,
        abstentions: rows.iter().filter(|r| r.abstained).count(),
        all_dominated: rows.iter().all(|r| r.dominated),
        trials: rows,
    })
}
