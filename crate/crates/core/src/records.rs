//! Generation-log data model and JSONL ingestion.
//!
//! One line per prompt:
//!
//! ```text
//! {"id": str,
//!  "samples": [{"text": str?, "quality": num, "admission": 0|1,
//!               "components": [{"text": str?, "confidence": num, "admission": 0|1}]?}],
//!  "similarity": [[num]...]?,
//!  "reference_components": int?}
//! ```
//!
//! `similarity` is strict-lower-triangular: row `i` holds `S(y_i, y_j)` for
//! every `j < i`, so row 0 is empty. Admission labels and component
//! confidences are inputs produced upstream; nothing here computes them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

const RECORD_KEYS: &[&str] = &["id", "samples", "similarity", "reference_components"];
const SAMPLE_KEYS: &[&str] = &["text", "quality", "admission", "components"];
const COMPONENT_KEYS: &[&str] = &["text", "confidence", "admission"];

/// Serializes a binary admission label as the integers `0` / `1`.
mod admission_flag {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<bool, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!(
                "admission must be 0 or 1, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub confidence: f64,
    #[serde(with = "admission_flag")]
    pub admission: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub quality: f64,
    #[serde(with = "admission_flag")]
    pub admission: bool,
    /// `None` when the line omits the key; `Some(vec![])` when it is present but empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    /// Samples in the order the generator produced them.
    pub samples: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Vec<Vec<f64>>>,
    /// Number of admissible reference components, used for component recall.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_components: Option<u32>,
}

impl SampleRecord {
    pub fn new(quality: f64, admission: bool) -> Self {
        Self {
            text: None,
            quality,
            admission,
            components: None,
        }
    }
}

impl PromptRecord {
    /// `S(y_i, y_j)` for `j < i`, if a matrix is present.
    pub fn similarity_at(&self, i: usize, j: usize) -> Option<f64> {
        debug_assert!(j < i);
        self.similarity.as_ref().map(|rows| rows[i][j])
    }

    /// 1-based index of the first admissible sample among the first `k_max`.
    pub fn first_admissible(&self, k_max: usize) -> Option<usize> {
        self.samples
            .iter()
            .take(k_max)
            .position(|s| s.admission)
            .map(|p| p + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        if self.samples.is_empty() {
            return Err(invalid("samples is empty".into()));
        }
        for (i, sample) in self.samples.iter().enumerate() {
            if !sample.quality.is_finite() {
                return Err(invalid(format!("sample {i} has non-finite quality")));
            }
            for (c, component) in sample.components.iter().flatten().enumerate() {
                if !component.confidence.is_finite() {
                    return Err(invalid(format!(
                        "sample {i} component {c} has non-finite confidence"
                    )));
                }
            }
        }
        match &self.similarity {
            Some(rows) => {
                let shape = |message: String| Error::SimilarityShape {
                    id: self.id.clone(),
                    message,
                };
                if rows.len() != self.samples.len() {
                    return Err(shape(format!(
                        "{} rows for {} samples",
                        rows.len(),
                        self.samples.len()
                    )));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != i {
                        return Err(shape(format!(
                            "row {i} has {} entries, expected {i}",
                            row.len()
                        )));
                    }
                    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                        return Err(shape(format!("row {i} has entry {v} outside [0, 1]")));
                    }
                }
            }
            None => {
                if let Some(i) = self.samples.iter().position(|s| s.text.is_none()) {
                    return Err(Error::MissingText {
                        id: self.id.clone(),
                        sample: i,
                    });
                }
            }
        }
        Ok(())
    }

    fn has_components(&self) -> bool {
        self.samples
            .iter()
            .any(|s| s.components.as_ref().is_some_and(|c| !c.is_empty()))
    }
}

/// A validated, immutable collection of prompt records.
///
/// Records are reference-counted so that splits and trial subsets share them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Arc<PromptRecord>>,
    min_samples: usize,
}

impl Dataset {
    pub fn new(records: Vec<PromptRecord>) -> Result<Self> {
        Self::from_shared(records.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(records: Vec<Arc<PromptRecord>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (line, record) in records.iter().enumerate() {
            record.validate()?;
            if !seen.insert(record.id.as_str()) {
                return Err(Error::DuplicateId {
                    line: line + 1,
                    id: record.id.clone(),
                });
            }
        }
        let min_samples = records.iter().map(|r| r.samples.len()).min().unwrap_or(0);
        Ok(Self {
            records,
            min_samples,
        })
    }

    pub fn records(&self) -> &[Arc<PromptRecord>] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptRecord> {
        self.records.iter().map(|r| r.as_ref())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices
            .iter()
            .map(|&i| {
                self.records.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: self.records.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_shared(records)
    }

    pub fn require_k_max(&self, k_max: usize) -> Result<()> {
        if k_max == 0 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        if k_max > self.min_samples {
            let short = self
                .iter()
                .find(|r| r.samples.len() < k_max)
                .expect("min_samples below k_max");
            return Err(Error::InsufficientSamples {
                id: short.id.clone(),
                available: short.samples.len(),
                k_max,
            });
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut writer, record.as_ref())?;
            writer.write_all(b"\n").map_err(|source| Error::Io {
                path: "<writer>".into(),
                source,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub require_components: bool,
    /// Reject unknown keys instead of warning about them.
    pub strict: bool,
}

pub fn load_dataset(path: &Path, require_components: bool) -> Result<Dataset> {
    load_dataset_with(
        path,
        LoadOptions {
            require_components,
            strict: false,
        },
    )
}

pub fn load_dataset_with(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    read_dataset(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => io_err(source),
        other => other,
    })
}

pub fn read_dataset<R: BufRead>(reader: R, options: LoadOptions) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        check_keys(&value, line_no, options.strict)?;
        let record: PromptRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        record.validate()?;
        if options.require_components {
            if let Some(i) = record.samples.iter().position(|s| s.components.is_none()) {
                return Err(Error::MissingComponents {
                    id: record.id.clone(),
                    sample: i,
                });
            }
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(Arc::new(record));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if options.require_components && !records.iter().any(|r| r.has_components()) {
        return Err(Error::invalid(
            "no record carries a non-empty component list",
        ));
    }
    Dataset::from_shared(records)
}

fn check_keys(value: &Value, line: usize, strict: bool) -> Result<()> {
    let mut unknown = Vec::new();
    collect_unknown(value, RECORD_KEYS, "", &mut unknown);
    if let Some(samples) = value.get("samples").and_then(Value::as_array) {
        for (i, sample) in samples.iter().enumerate() {
            collect_unknown(sample, SAMPLE_KEYS, &format!("samples[{i}]."), &mut unknown);
            if let Some(components) = sample.get("components").and_then(Value::as_array) {
                for (c, component) in components.iter().enumerate() {
                    collect_unknown(
                        component,
                        COMPONENT_KEYS,
                        &format!("samples[{i}].components[{c}]."),
                        &mut unknown,
                    );
                }
            }
        }
    }
    if unknown.is_empty() {
        return Ok(());
    }
    if strict {
        return Err(Error::MalformedLine {
            line,
            message: format!("unknown keys: {}", unknown.join(", ")),
        });
    }
    log::warn!("line {line}: ignoring unknown keys: {}", unknown.join(", "));
    Ok(())
}

fn collect_unknown(value: &Value, known: &[&str], prefix: &str, out: &mut Vec<String>) {
    if let Some(object) = value.as_object() {
        out.extend(
            object
                .keys()
                .filter(|k| !known.contains(&k.as_str()))
                .map(|k| format!("{prefix}{k}")),
        );
    }
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    data.write_jsonl(&mut writer)?;
    writer.flush().map_err(io_err)
}

/// Fractions for the (optimization, calibration, test) split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub opt: f64,
    pub cal: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            opt: 0.1,
            cal: 0.2,
            test: 0.7,
        }
    }
}

impl SplitFractions {
    pub fn new(opt: f64, cal: f64, test: f64) -> Result<Self> {
        let fractions = Self { opt, cal, test };
        fractions.validate()?;
        Ok(fractions)
    }

    pub fn validate(&self) -> Result<()> {
        for f in [self.opt, self.cal, self.test] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!("split fraction {f} not in (0, 1)")));
            }
        }
        let sum = self.opt + self.cal + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Part sizes for `n` records: floors for opt and cal, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The slack absorbs products like 0.29 * 100 = 28.999999999999996.
        let part = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let n_opt = part(self.opt);
        let n_cal = part(self.cal);
        (n_opt, n_cal, n - n_opt - n_cal)
    }
}

/// Shuffles and partitions into (opt, cal, test). Deterministic given `seed`.
pub fn split_dataset(
    data: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    fractions.validate()?;
    let n = data.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "cannot split {n} records into three parts"
        )));
    }
    let (n_opt, n_cal, n_test) = fractions.sizes(n);
    if n_opt == 0 || n_cal == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "split of {n} records leaves an empty part ({n_opt}, {n_cal}, {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (opt, rest) = order.split_at(n_opt);
    let (cal, test) = rest.split_at(n_cal);
    Ok((data.subset(opt)?, data.subset(cal)?, data.subset(test)?))
}

/// Shuffles and partitions into (opt, cal) only, for calibrating on all data.
///
/// `opt_share` is the optimization part's share, e.g. `0.1 / (0.1 + 0.2)`.
pub fn split_pair(data: &Dataset, opt_share: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(opt_share > 0.0 && opt_share < 1.0) {
        return Err(Error::invalid(format!(
            "optimization share {opt_share} not in (0, 1)"
        )));
    }
    let n = data.len();
    let n_opt = ((opt_share * n as f64) + 1e-9).floor() as usize;
    if n_opt == 0 || n_opt == n {
        return Err(Error::invalid(format!(
            "split of {n} records leaves an empty part ({n_opt}, {})",
            n - n_opt
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (opt, cal) = order.split_at(n_opt);
    Ok((data.subset(opt)?, data.subset(cal)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), LoadOptions::default())
    }

    fn records(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| PromptRecord {
                    id: format!("r{i}"),
                    samples: vec![SampleRecord::new(0.5, i % 2 == 0)],
                    similarity: Some(vec![vec![]]),
                    reference_components: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pair_split_covers_everything() {
        let data = records(30);
        let (opt, cal) = split_pair(&data, 1.0 / 3.0, 5).unwrap();
        assert_eq!((opt.len(), cal.len()), (10, 20));
        let mut ids: Vec<&str> = opt.ids().chain(cal.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 30);
        assert!(split_pair(&records(2), 0.1, 5).is_err());
    }

    #[test]
    fn smallest_legal_file() {
        let data =
            read(r#"{"id": "a", "samples": [{"text": "hi", "quality": 0.3, "admission": 1}]}"#)
                .unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.min_samples(), 1);
    }

    #[test]
    fn similarity_row_of_wrong_length_names_record() {
        let line = r#"{"id": "bad", "samples": [{"quality": 0.1, "admission": 0}, {"quality": 0.2, "admission": 1}], "similarity": [[], [0.1, 0.2]]}"#;
        let err = read(line).unwrap_err();
        match err {
            Error::SimilarityShape { id, .. } => assert_eq!(id, "bad"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn similarity_out_of_range_rejected() {
        let line = r#"{"id": "x", "samples": [{"quality": 0.1, "admission": 0}, {"quality": 0.2, "admission": 1}], "similarity": [[], [1.5]]}"#;
        assert!(matches!(read(line), Err(Error::SimilarityShape { .. })));
    }

    #[test]
    fn missing_text_without_similarity() {
        let line = r#"{"id": "x", "samples": [{"quality": 0.1, "admission": 0}]}"#;
        assert!(matches!(
            read(line),
            Err(Error::MissingText { sample: 0, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\": \"a\", \"samples\": [{\"text\": \"x\", \"quality\": 0, \"admission\": 1}]}\n{not json\n";
        assert!(matches!(
            read(text),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn admission_must_be_binary() {
        let line = r#"{"id": "a", "samples": [{"text": "x", "quality": 0, "admission": 2}]}"#;
        assert!(matches!(
            read(line),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id": "a", "samples": [{"text": "x", "quality": 0, "admission": 1}]}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            read(&text),
            Err(Error::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(read("\n\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn empty_samples_rejected() {
        let line = r#"{"id": "a", "samples": []}"#;
        assert!(matches!(read(line), Err(Error::InvalidRecord { .. })));
    }

    #[test]
    fn unknown_keys_warn_or_reject() {
        let line = r#"{"id": "a", "extra": 1, "samples": [{"text": "x", "quality": 0, "admission": 1, "logprob": -1}]}"#;
        assert!(read(line).is_ok());
        let strict = LoadOptions {
            strict: true,
            ..Default::default()
        };
        let err = read_dataset(line.as_bytes(), strict).unwrap_err();
        let message = err.to_string();
        assert!(
            message.contains("extra") && message.contains("samples[0].logprob"),
            "{message}"
        );
    }

    #[test]
    fn require_components() {
        let opts = LoadOptions {
            require_components: true,
            strict: false,
        };
        let without = r#"{"id": "a", "samples": [{"text": "x", "quality": 0, "admission": 1}]}"#;
        assert!(matches!(
            read_dataset(without.as_bytes(), opts),
            Err(Error::MissingComponents { .. })
        ));
        let all_empty = r#"{"id": "a", "samples": [{"text": "x", "quality": 0, "admission": 1, "components": []}]}"#;
        assert!(read_dataset(all_empty.as_bytes(), opts).is_err());
        let with = r#"{"id": "a", "samples": [{"text": "x", "quality": 0, "admission": 1, "components": [{"confidence": 0.4, "admission": 1}]}]}"#;
        assert!(read_dataset(with.as_bytes(), opts).is_ok());
    }

    #[test]
    fn split_sizes_floor_with_remainder_to_test() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(10), (1, 2, 7));
        assert_eq!(f.sizes(15658), (1565, 3131, 10962));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let data = records(10);
        let f = SplitFractions::default();
        let (a1, b1, c1) = split_dataset(&data, f, 7).unwrap();
        let (a2, b2, c2) = split_dataset(&data, f, 7).unwrap();
        assert_eq!((a1.len(), b1.len(), c1.len()), (1, 2, 7));
        assert_eq!((&a1, &b1, &c1), (&a2, &b2, &c2));
        let mut ids: Vec<&str> = a1.ids().chain(b1.ids()).chain(c1.ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn split_rejects_tiny_datasets_and_bad_fractions() {
        assert!(split_dataset(&records(2), SplitFractions::default(), 0).is_err());
        assert!(SplitFractions::new(0.5, 0.5, 0.0).is_err());
        assert!(SplitFractions::new(0.2, 0.2, 0.2).is_err());
    }

    #[test]
    fn k_max_above_min_samples_is_an_error() {
        let data = records(3);
        assert!(data.require_k_max(1).is_ok());
        assert!(matches!(
            data.require_k_max(2),
            Err(Error::InsufficientSamples { k_max: 2, .. })
        ));
    }
}
