use std::fmt::Write;

use thiserror::Error;

use super::TriangleMesh;

/// Gingiva plus fourteen teeth.
pub const DEFAULT_NUM_CLASSES: u32 = 15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("label file is not valid UTF-8")]
    Encoding,
    #[error("line {line}: `{token}` is not an integer")]
    NotInteger { line: usize, token: String },
    #[error("line {line}: negative label {value}")]
    Negative { line: usize, value: i64 },
    #[error("label JSON array is malformed: {0}")]
    Json(String),
    #[error("label {label} at face {face} is outside [0, {num_classes})")]
    OutOfRange {
        face: usize,
        label: u32,
        num_classes: u32,
    },
    #[error("{found} labels for a mesh with {expected} faces")]
    CountMismatch { expected: usize, found: usize },
}

/// Reads a per-face integer sidecar: one integer per line, or a JSON array
/// of integers. Blank lines are skipped.
pub fn read_labels(bytes: &[u8]) -> Result<Vec<u32>, LabelError> {
    let text = std::str::from_utf8(bytes).map_err(|_| LabelError::Encoding)?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<i64> =
            serde_json::from_str(trimmed).map_err(|e| LabelError::Json(e.to_string()))?;
        return values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                u32::try_from(v).map_err(|_| LabelError::Negative {
                    line: i + 1,
                    value: v,
                })
            })
            .collect();
    }
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let value: i64 = token.parse().map_err(|_| LabelError::NotInteger {
            line: idx + 1,
            token: token.to_string(),
        })?;
        let label = u32::try_from(value).map_err(|_| LabelError::Negative {
            line: idx + 1,
            value,
        })?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[u32]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    out
}

/// Per-face ground-truth classes for one arch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceLabels {
    labels: Vec<u32>,
    num_classes: u32,
}

impl FaceLabels {
    pub fn new(labels: Vec<u32>, num_classes: u32) -> Result<Self, LabelError> {
        if let Some((face, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(LabelError::OutOfRange {
                face,
                label,
                num_classes,
            });
        }
        Ok(FaceLabels {
            labels,
            num_classes,
        })
    }

    pub fn parse(bytes: &[u8], num_classes: u32) -> Result<Self, LabelError> {
        FaceLabels::new(read_labels(bytes)?, num_classes)
    }

    /// Checks that these labels line up with the mesh's faces.
    pub fn check_attach(&self, mesh: &TriangleMesh) -> Result<(), LabelError> {
        if self.labels.len() != mesh.face_count() {
            return Err(LabelError::CountMismatch {
                expected: mesh.face_count(),
                found: self.labels.len(),
            });
        }
        Ok(())
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
