use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::windowing::{Label, SequenceSample};

/// One sample as stored on disk. `modality` is zero-based in memory and
/// 1-based in files.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub modality: usize,
    pub class: Option<i64>,
    pub label: Option<Label>,
    pub seq: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    modality: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    seq: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    dims: Vec<usize>,
}

/// Which classes count as positive for the binary classifier.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Task {
    /// Use the `label` stored with each record.
    #[default]
    FileLabels,
    /// Records whose class is in the set are `+1`, all others `-1`.
    Positive(BTreeSet<i64>),
}

impl Task {
    pub fn label_of(&self, record: &Record) -> Result<Label> {
        match self {
            Task::FileLabels => record.label.ok_or_else(|| {
                Error::invalid("record has no label and no positive class was given")
            }),
            Task::Positive(set) => {
                let class = record
                    .class
                    .ok_or_else(|| Error::invalid("record has no class id"))?;
                Ok(if set.contains(&class) {
                    Label::Positive
                } else {
                    Label::Negative
                })
            }
        }
    }
}

/// Samples of every modality, grouped modality-major. A sample's global index
/// is its position in `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    /// Instance dimension per modality.
    pub dims: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset, stably regrouping records by modality and checking
    /// dimensions and modality coverage.
    pub fn new(mut records: Vec<Record>, dims: Vec<usize>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        records.sort_by_key(|r| r.modality);
        for (i, r) in records.iter().enumerate() {
            let d = *dims.get(r.modality).ok_or_else(|| {
                Error::invalid(format!("record {i}: unknown modality {}", r.modality + 1))
            })?;
            if r.seq.is_empty() {
                return Err(Error::invalid(format!("record {i}: empty sequence")));
            }
            if r.seq.iter().any(|x| x.len() != d) {
                return Err(Error::invalid(format!(
                    "record {i}: instance dimension differs from modality {} dimension {d}",
                    r.modality + 1
                )));
            }
        }
        for j in 0..dims.len() {
            if !records.iter().any(|r| r.modality == j) {
                return Err(Error::invalid(format!("modality {} has no records", j + 1)));
            }
        }
        Ok(Dataset { records, dims })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.dims.len()
    }

    pub fn modality_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.dims.len()];
        for r in &self.records {
            sizes[r.modality] += 1;
        }
        sizes
    }

    /// Subset by global indices (kept in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records, self.dims.clone())
    }

    pub fn samples(&self, task: &Task) -> Result<Vec<SequenceSample>> {
        self.records
            .iter()
            .map(|r| {
                Ok(SequenceSample {
                    modality: r.modality,
                    label: task.label_of(r)?,
                    instances: r.seq.clone(),
                })
            })
            .collect()
    }

    /// `(modality, class)` tags for building class-based relevance.
    pub fn class_tags(&self) -> Result<Vec<(usize, i64)>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.class
                    .map(|c| (r.modality, c))
                    .ok_or_else(|| Error::invalid(format!("record {i} has no class id")))
            })
            .collect()
    }

    pub fn classes(&self) -> BTreeSet<i64> {
        self.records.iter().filter_map(|r| r.class).collect()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Dataset> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut declared: Option<Vec<usize>> = None;
        let mut inferred: Vec<Option<usize>> = Vec::new();
        let mut records = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let value: Value =
                serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
            if value.get("dims").is_some() {
                if declared.is_some() || !records.is_empty() {
                    return Err(err(
                        line_no,
                        "header must precede all records and appear once".into(),
                    ));
                }
                let header: HeaderLine =
                    serde_json::from_value(value).map_err(|e| err(line_no, e.to_string()))?;
                if header.dims.is_empty() || header.dims.contains(&0) {
                    return Err(err(line_no, "dims must be non-empty and positive".into()));
                }
                declared = Some(header.dims);
                continue;
            }
            let rec: RecordLine =
                serde_json::from_value(value).map_err(|e| err(line_no, e.to_string()))?;
            if rec.modality == 0 {
                return Err(err(line_no, "modality ids start at 1".into()));
            }
            let j = rec.modality - 1;
            let expected = match &declared {
                Some(dims) => *dims
                    .get(j)
                    .ok_or_else(|| err(line_no, format!("unknown modality {}", rec.modality)))?,
                None => {
                    if inferred.len() <= j {
                        inferred.resize(j + 1, None);
                    }
                    let first = rec.seq.first().map_or(0, Vec::len);
                    *inferred[j].get_or_insert(first)
                }
            };
            if rec.seq.is_empty() {
                return Err(err(line_no, "empty sequence".into()));
            }
            if let Some(pos) = rec.seq.iter().position(|x| x.len() != expected) {
                return Err(err(
                    line_no,
                    format!(
                        "instance {pos} has length {}, modality {} declares dimension {expected}",
                        rec.seq[pos].len(),
                        rec.modality
                    ),
                ));
            }
            if expected == 0 {
                return Err(err(line_no, "instance vectors must be non-empty".into()));
            }
            records.push(Record {
                modality: j,
                class: rec.class,
                label: rec.label,
                seq: rec.seq,
            });
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dims = match declared {
            Some(d) => d,
            None => inferred
                .iter()
                .enumerate()
                .map(|(j, d)| {
                    d.ok_or_else(|| Error::Parse {
                        path: origin.to_path_buf(),
                        line: 0,
                        message: format!(
                            "modality ids must be contiguous; modality {} is missing",
                            j + 1
                        ),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Dataset::new(records, dims)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        Dataset::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header = HeaderLine {
            dims: self.dims.clone(),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("serializable")
        )
        .unwrap();
        for r in &self.records {
            let line = RecordLine {
                modality: r.modality + 1,
                class: r.class,
                label: r.label,
                seq: r.seq.clone(),
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string(&line).expect("finite values")
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
