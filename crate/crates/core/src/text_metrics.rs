//! ROUGE-L similarity and length-normalized likelihoods.
//!
//! Tokenization is frozen because it affects reproducibility of every
//! similarity value: text is lowercased, every character that is neither
//! alphanumeric nor whitespace is removed, and the remainder is split on
//! Unicode whitespace.

use crate::error::{Error, Result};
use crate::records::PromptRecord;

/// Upper bound on tokens per sequence; bounds the LCS table.
pub const MAX_TOKENS: usize = 4096;

/// Tolerance when checking a precomputed similarity matrix against ROUGE-L.
const SIMILARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Wraps pre-tokenized input. Empty-string tokens are dropped.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() > MAX_TOKENS {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                limit: MAX_TOKENS,
            });
        }
        Ok(Self { tokens })
    }

    pub fn tokenize(text: &str) -> Result<Self> {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric() || c.is_whitespace())
            .collect();
        Self::new(cleaned.split_whitespace())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut curr = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[short.len()]
}

/// LCS-based F1 between two token sequences. Zero when either is empty.
pub fn rouge_l(a: &TokenSequence, b: &TokenSequence) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&a.tokens, &b.tokens);
    if lcs == 0 {
        return 0.0;
    }
    // F1 = 2PR / (P + R) with P = L/|a|, R = L/|b| reduces to 2L / (|a| + |b|).
    2.0 * lcs as f64 / (a.len() + b.len()) as f64
}

/// `exp(log_prob / lp)` with `lp = (5 + length)^0.6 / 6^0.6`.
pub fn length_normalized_quality(log_prob: f64, length: usize) -> Result<f64> {
    if length < 1 {
        return Err(Error::invalid("length must be at least 1"));
    }
    if !log_prob.is_finite() || log_prob > 0.0 {
        return Err(Error::invalid(format!(
            "log probability must be finite and <= 0, got {log_prob}"
        )));
    }
    let penalty = ((5.0 + length as f64) / 6.0).powf(0.6);
    Ok((log_prob / penalty).exp())
}

/// Returns a copy of `record` with its similarity matrix populated by ROUGE-L.
///
/// An existing matrix is checked against recomputed values and kept as-is.
pub fn fill_similarity(record: &PromptRecord) -> Result<PromptRecord> {
    let computed = compute_similarity(record)?;
    if let Some(stored) = &record.similarity {
        for (i, (stored_row, computed_row)) in stored.iter().zip(&computed).enumerate() {
            for (j, (&s, &c)) in stored_row.iter().zip(computed_row).enumerate() {
                if (s - c).abs() > SIMILARITY_TOLERANCE {
                    return Err(Error::InconsistentSimilarity {
                        id: record.id.clone(),
                        i,
                        j,
                        stored: s,
                        computed: c,
                    });
                }
            }
        }
        return Ok(record.clone());
    }
    let mut filled = record.clone();
    filled.similarity = Some(computed);
    Ok(filled)
}

/// Strict-lower-triangular ROUGE-L matrix over the record's sample texts.
pub fn compute_similarity(record: &PromptRecord) -> Result<Vec<Vec<f64>>> {
    let sequences = record
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let text = s.text.as_deref().ok_or_else(|| Error::MissingText {
                id: record.id.clone(),
                sample: i,
            })?;
            TokenSequence::tokenize(text)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..sequences.len())
        .map(|i| {
            (0..i)
                .map(|j| rouge_l(&sequences[i], &sequences[j]))
                .collect()
        })
        .collect())
}
