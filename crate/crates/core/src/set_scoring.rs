//! Set-confidence functions evaluated on a growing candidate set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Score = number of draws; no rejection.
    FirstK,
    /// Score = number of draws; duplicate/quality rejection enabled.
    FirstKReject,
    /// Score = best accepted quality.
    Max,
    /// Score = sum of accepted qualities.
    Sum,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 4] = [
        ScorerKind::FirstK,
        ScorerKind::FirstKReject,
        ScorerKind::Max,
        ScorerKind::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::FirstK => "first-k",
            ScorerKind::FirstKReject => "first-k-reject",
            ScorerKind::Max => "max",
            ScorerKind::Sum => "sum",
        }
    }

    pub fn is_count_based(self) -> bool {
        matches!(self, ScorerKind::FirstK | ScorerKind::FirstKReject)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scorer {s:?}")))
    }
}

/// The argument of `F`: qualities of accepted samples plus the draw count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SetState {
    pub accepted_qualities: Vec<f64>,
    pub draws_so_far: usize,
}

pub fn set_score(kind: ScorerKind, state: &SetState) -> f64 {
    match kind {
        ScorerKind::FirstK | ScorerKind::FirstKReject => state.draws_so_far as f64,
        ScorerKind::Max => state
            .accepted_qualities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        ScorerKind::Sum => state.accepted_qualities.iter().fold(0.0, |acc, q| acc + q),
    }
}

/// Whether replay applies the similarity/quality rejection thresholds.
pub fn uses_rejection(kind: ScorerKind) -> bool {
    kind != ScorerKind::FirstK
}

/// Incremental form of [`set_score`] used by replay.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RunningScore {
    kind: ScorerKind,
    acc: f64,
}

impl RunningScore {
    pub(crate) fn new(kind: ScorerKind) -> Self {
        let acc = match kind {
            ScorerKind::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        Self { kind, acc }
    }

    pub(crate) fn accept(&mut self, quality: f64) {
        match self.kind {
            ScorerKind::Max => self.acc = self.acc.max(quality),
            ScorerKind::Sum => self.acc += quality,
            ScorerKind::FirstK | ScorerKind::FirstKReject => {}
        }
    }

    pub(crate) fn value(&self, draws: usize) -> f64 {
        if self.kind.is_count_based() {
            draws as f64
        } else {
            self.acc
        }
    }
}
