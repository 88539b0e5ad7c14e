//! Synthetic generation logs with known ground truth.
//!
//! Each sample carries a latent standard normal `u`. It is admissible when
//! `u > z`, where `z = Φ⁻¹(1 - p)`, so admissions are i.i.d. Bernoulli(`p`)
//! within a prompt. Its quality is `Φ(r·u + √(1-r²)·e)` with independent
//! noise `e ~ N(0, 1)` and `r` the informativeness knob (a Gaussian copula).
//! At `r = 0` quality is independent of admission. At `r = 1` it is a
//! monotone function of `u`, so sorting by quality separates admissible
//! from inadmissible samples exactly. Components use the same construction
//! with their own admission rate and coupling.
//!
//! Every prompt draws from its own ChaCha stream seeded by
//! [`derive_seed`]`(seed, prompt index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::records::{ComponentRecord, Dataset, PromptRecord, SampleRecord};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Difficulty {
    FixedP { p: f64 },
    PerPromptBeta { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub per_sample: usize,
    /// Marginal probability that a component is admissible.
    pub admission_p: f64,
    /// Copula coupling between confidence and admission, in `[0, 1]`.
    pub coupling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_prompts: usize,
    /// Samples recorded per prompt.
    pub k_max: usize,
    pub difficulty: Difficulty,
    pub quality_informativeness: f64,
    pub components: Option<ComponentModel>,
    /// Probability that a sample (after the first) clones an earlier one.
    pub duplicate_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn fixed_p(n_prompts: usize, k_max: usize, p: f64, seed: u64) -> Self {
        Self {
            n_prompts,
            k_max,
            difficulty: Difficulty::FixedP { p },
            quality_informativeness: 0.0,
            components: None,
            duplicate_rate: 0.0,
            seed,
        }
    }

    pub fn with_informativeness(mut self, r: f64) -> Self {
        self.quality_informativeness = r;
        self
    }

    pub fn with_components(mut self, model: ComponentModel) -> Self {
        self.components = Some(model);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} not in [0, 1]")))
            }
        };
        if self.n_prompts == 0 || self.k_max == 0 {
            return Err(Error::invalid("n_prompts and k_max must be positive"));
        }
        match self.difficulty {
            Difficulty::FixedP { p } => unit("p", p)?,
            Difficulty::PerPromptBeta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::invalid(format!(
                        "beta shape ({a}, {b}) must be positive"
                    )));
                }
            }
        }
        unit("quality_informativeness", self.quality_informativeness)?;
        unit("duplicate_rate", self.duplicate_rate)?;
        if let Some(c) = &self.components {
            unit("component admission_p", c.admission_p)?;
            unit("component coupling", c.coupling)?;
        }
        Ok(())
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Latent cut-off `z` with `P(u > z) = p`.
fn admission_cutoff(normal: &Normal, p: f64) -> f64 {
    if p >= 1.0 {
        f64::NEG_INFINITY
    } else if p <= 0.0 {
        f64::INFINITY
    } else {
        normal.inverse_cdf(1.0 - p)
    }
}

/// Draws `(admission, score)` with score coupled to the admission latent.
fn coupled_draw<R: Rng>(rng: &mut R, normal: &Normal, cutoff: f64, coupling: f64) -> (bool, f64) {
    let u: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(StandardNormal);
    let w = coupling * u + (1.0 - coupling * coupling).max(0.0).sqrt() * e;
    (u > cutoff, normal.cdf(w))
}

fn similarity_between(rows: &[Vec<f64>], a: usize, b: usize) -> f64 {
    match a.cmp(&b) {
        std::cmp::Ordering::Greater => rows[a][b],
        std::cmp::Ordering::Less => rows[b][a],
        std::cmp::Ordering::Equal => 1.0,
    }
}

fn generate_prompt(spec: &SynthSpec, index: usize, normal: &Normal) -> Result<PromptRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let p = match spec.difficulty {
        Difficulty::FixedP { p } => p,
        Difficulty::PerPromptBeta { a, b } => Beta::new(a, b)
            .map_err(|e| Error::invalid(format!("beta({a}, {b}): {e}")))?
            .sample(&mut rng),
    };
    let cutoff = admission_cutoff(normal, p);
    let component_cutoff = spec
        .components
        .map(|c| admission_cutoff(normal, c.admission_p));

    let mut samples: Vec<SampleRecord> = Vec::with_capacity(spec.k_max);
    let mut similarity: Vec<Vec<f64>> = Vec::with_capacity(spec.k_max);
    for k in 0..spec.k_max {
        if k > 0 && spec.duplicate_rate > 0.0 && rng.random::<f64>() < spec.duplicate_rate {
            let source = rng.random_range(0..k);
            let row = (0..k)
                .map(|m| similarity_between(&similarity, source, m))
                .collect();
            samples.push(samples[source].clone());
            similarity.push(row);
            continue;
        }
        let (admission, quality) =
            coupled_draw(&mut rng, normal, cutoff, spec.quality_informativeness);
        let components = match (spec.components, component_cutoff) {
            (Some(model), Some(c_cut)) => Some(
                (0..model.per_sample)
                    .map(|_| {
                        let (admission, confidence) =
                            coupled_draw(&mut rng, normal, c_cut, model.coupling);
                        ComponentRecord {
                            text: None,
                            confidence,
                            admission,
                        }
                    })
                    .collect(),
            ),
            _ => None,
        };
        samples.push(SampleRecord {
            text: None,
            quality,
            admission,
            components,
        });
        similarity.push(vec![0.0; k]);
    }
    Ok(PromptRecord {
        id: format!("synth-{index:06}"),
        samples,
        similarity: Some(similarity),
        reference_components: None,
    })
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let normal = standard_normal();
    let records = (0..spec.n_prompts)
        .map(|i| generate_prompt(spec, i, &normal))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

/// `⌈ln ε / ln(1 - p)⌉`: draws needed for first-k coverage under i.i.d. success `p`.
pub fn expected_firstk_threshold(epsilon: f64, p: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} and p = {p} must both lie in (0, 1)"
        )));
    }
    let ratio = epsilon.ln() / (1.0 - p).ln();
    // Exact powers such as ε = 0.25, p = 0.5 can land a hair above an integer.
    Ok((ratio - 1e-12).ceil().max(1.0) as usize)
}

/// Flips each admissible label to inadmissible with probability `flip_rate`.
///
/// The result is a conservative labelling: never 0 → 1. Component labels
/// are degraded the same way.
pub fn degrade_admissions(data: &Dataset, flip_rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::invalid(format!(
            "flip rate {flip_rate} not in [0, 1]"
        )));
    }
    let records = data
        .iter()
        .enumerate()
        .map(|(i, record)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut degraded = record.clone();
            for sample in &mut degraded.samples {
                if sample.admission && rng.random::<f64>() < flip_rate {
                    sample.admission = false;
                }
                for component in sample.components.iter_mut().flatten() {
                    if component.admission && rng.random::<f64>() < flip_rate {
                        component.admission = false;
                    }
                }
            }
            degraded
        })
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(expected_firstk_threshold(0.5, 0.5).unwrap(), 1);
        assert_eq!(expected_firstk_threshold(0.1, 0.5).unwrap(), 4);
        assert_eq!(expected_firstk_threshold(0.01, 0.1).unwrap(), 44);
        assert_eq!(expected_firstk_threshold(0.25, 0.5).unwrap(), 2);
        assert!(expected_firstk_threshold(0.0, 0.5).is_err());
        assert!(expected_firstk_threshold(0.5, 1.0).is_err());
    }

    #[test]
    fn certain_success() {
        let data = generate(&SynthSpec::fixed_p(50, 5, 1.0, 3)).unwrap();
        assert!(data.iter().all(|r| r.samples.iter().all(|s| s.admission)));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::fixed_p(20, 4, 0.4, 11).with_informativeness(0.5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 12, ..spec };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn perfect_informativeness_separates() {
        let data =
            generate(&SynthSpec::fixed_p(200, 10, 0.4, 5).with_informativeness(1.0)).unwrap();
        for r in data.iter() {
            let worst_good = r
                .samples
                .iter()
                .filter(|s| s.admission)
                .map(|s| s.quality)
                .fold(f64::INFINITY, f64::min);
            let best_bad = r
                .samples
                .iter()
                .filter(|s| !s.admission)
                .map(|s| s.quality)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst_good > best_bad || worst_good.is_infinite() || best_bad.is_infinite());
        }
    }

    #[test]
    fn duplicates_have_unit_similarity() {
        let spec = SynthSpec {
            duplicate_rate: 0.5,
            ..SynthSpec::fixed_p(30, 8, 0.5, 9)
        };
        let data = generate(&spec).unwrap();
        let mut found = 0;
        for r in data.iter() {
            let rows = r.similarity.as_ref().unwrap();
            for (k, row) in rows.iter().enumerate() {
                for (j, &s) in row.iter().enumerate() {
                    if s == 1.0 {
                        found += 1;
                        assert_eq!(r.samples[k], r.samples[j]);
                    }
                }
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn beta_difficulty_and_components() {
        let spec = SynthSpec {
            difficulty: Difficulty::PerPromptBeta { a: 2.0, b: 3.0 },
            ..SynthSpec::fixed_p(40, 5, 0.5, 1)
        }
        .with_components(ComponentModel {
            per_sample: 3,
            admission_p: 0.7,
            coupling: 0.8,
        });
        let data = generate(&spec).unwrap();
        assert!(data.iter().all(|r| r
            .samples
            .iter()
            .all(|s| s.components.as_ref().is_some_and(|c| c.len() == 3))));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec::fixed_p(10, 5, 1.5, 0)).is_err());
        assert!(generate(&SynthSpec::fixed_p(0, 5, 0.5, 0)).is_err());
        let bad_beta = SynthSpec {
            difficulty: Difficulty::PerPromptBeta { a: 0.0, b: 1.0 },
            ..SynthSpec::fixed_p(10, 5, 0.5, 0)
        };
        assert!(generate(&bad_beta).is_err());
    }

    #[test]
    fn degrade_extremes() {
        let data = generate(&SynthSpec::fixed_p(50, 5, 0.5, 2)).unwrap();
        assert_eq!(degrade_admissions(&data, 0.0, 1).unwrap(), data);
        let zeroed = degrade_admissions(&data, 1.0, 1).unwrap();
        assert!(zeroed
            .iter()
            .all(|r| r.samples.iter().all(|s| !s.admission)));
        assert!(degrade_admissions(&data, 1.5, 1).is_err());
    }
}
