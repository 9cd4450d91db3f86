//! Labeled examples and datasets.

use std::path::Path;

use crate::error::{Error, Result};

/// Target value of one example: a real for regression, a class index for
/// classification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Real(f64),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Label,
}

/// An ordered collection of examples. Order is part of the contract: loss
/// and gradient reductions run in dataset order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn push(&mut self, example: LabeledExample) {
        self.examples.push(example);
    }

    pub fn extend(&mut self, other: Dataset) {
        self.examples.extend(other.examples);
    }

    /// Feature dimension of the first example, or 0 when empty.
    pub fn feature_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    /// Number of distinct class labels assuming labels are `Class(0..C)`.
    /// Returns 0 for regression datasets.
    pub fn class_count(&self) -> usize {
        self.examples
            .iter()
            .filter_map(|e| match e.label {
                Label::Class(c) => Some(c + 1),
                Label::Real(_) => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// CSV schema: how many feature columns precede the final label column and
/// how the label is interpreted.
#[derive(Clone, Copy, Debug)]
pub struct CsvSchema {
    pub feature_count: usize,
    pub label_kind: LabelKind,
    pub skip_header: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Class,
}

/// Load a comma-separated file: one example per row, label in the last
/// column, no header unless `skip_header` is set. Row order is preserved.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut rows = text.lines().enumerate();
    if schema.skip_header {
        rows.next();
    }
    for (idx, line) in rows {
        let row = idx + 1; // 1-based, counting the header if present
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != schema.feature_count + 1 {
            return Err(Error::CsvRow {
                row,
                msg: format!(
                    "expected {} fields, got {}",
                    schema.feature_count + 1,
                    fields.len()
                ),
            });
        }
        let mut features = Vec::with_capacity(schema.feature_count);
        for field in &fields[..schema.feature_count] {
            let value: f64 = field.parse().map_err(|_| Error::CsvRow {
                row,
                msg: format!("non-numeric field '{field}'"),
            })?;
            features.push(value);
        }
        let label_field = fields[schema.feature_count];
        let label = match schema.label_kind {
            LabelKind::Real => Label::Real(label_field.parse().map_err(|_| Error::CsvRow {
                row,
                msg: format!("non-numeric label '{label_field}'"),
            })?),
            LabelKind::Class => Label::Class(label_field.parse().map_err(|_| Error::CsvRow {
                row,
                msg: format!("non-integer class label '{label_field}'"),
            })?),
        };
        examples.push(LabeledExample { features, label });
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(examples))
}
