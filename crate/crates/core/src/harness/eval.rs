//! Per-arch Dice similarity and evaluation reports.

use rayon::prelude::*;

use super::{HarnessError, LabeledArch};
use crate::mesh_io::FaceLabels;
use crate::model::{forward, ModelParams};
use crate::preprocess::extract_features;

/// Macro Dice over the classes present in the truth or the prediction.
pub fn dsc(pred: &[u32], truth: &FaceLabels) -> Result<f64, HarnessError> {
    let t = truth.labels();
    if pred.len() != t.len() {
        return Err(HarnessError::InvalidDataset(format!(
            "{} predicted labels for {} faces",
            pred.len(),
            t.len()
        )));
    }
    if t.is_empty() {
        return Err(HarnessError::InvalidDataset("no faces to score".into()));
    }
    let c = truth.num_classes() as usize;
    let mut inter = vec![0usize; c];
    let mut p_count = vec![0usize; c];
    let mut g_count = vec![0usize; c];
    for (&p, &g) in pred.iter().zip(t) {
        if p as usize >= c {
            return Err(HarnessError::InvalidDataset(format!(
                "predicted class {p} outside 0..{c}"
            )));
        }
        p_count[p as usize] += 1;
        g_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let scores: Vec<f64> = (0..c)
        .filter(|&k| p_count[k] + g_count[k] > 0)
        .map(|k| 2.0 * inter[k] as f64 / (p_count[k] + g_count[k]) as f64)
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub arch: String,
    pub missing_teeth: bool,
    pub dsc: f64,
}

/// Per-arch DSC with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len() as f64;
        let (mean, std) = if rows.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = rows.iter().map(|r| r.dsc).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.dsc - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        EvalReport { rows, mean, std }
    }

    /// `arch,missing_teeth,dsc` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arch,missing_teeth,dsc\n");
        for r in &self.rows {
            out += &format!("{},{},{}\n", r.arch, r.missing_teeth, r.dsc);
        }
        out
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.arch.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!("{:<width$}  missing  dsc\n", "arch");
        for r in &self.rows {
            let flag = if r.missing_teeth { "yes" } else { "no" };
            out += &format!("{:<width$}  {flag:<7}  {:.4}\n", r.arch, r.dsc);
        }
        out += &format!(
            "{:<width$}           {:.4} ± {:.4}\n",
            "mean", self.mean, self.std
        );
        out
    }
}

/// Scores each arch from its unaugmented features.
pub fn evaluate(params: &ModelParams, test: &[LabeledArch]) -> Result<EvalReport, HarnessError> {
    let rows = test
        .par_iter()
        .map(|arch| {
            if arch.labels.num_classes() as usize != params.dims.classes {
                return Err(HarnessError::InvalidDataset(format!(
                    "{}: {} classes, model predicts {}",
                    arch.name,
                    arch.labels.num_classes(),
                    params.dims.classes
                )));
            }
            let feats = extract_features(&arch.mesh);
            let pred = forward(params, feats.view())?.argmax();
            Ok(EvalRow {
                arch: arch.name.clone(),
                missing_teeth: arch.missing_teeth,
                dsc: dsc(&pred, &arch.labels)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(EvalReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(l: &[u32], c: u32) -> FaceLabels {
        FaceLabels::new(l.to_vec(), c).unwrap()
    }

    #[test]
    fn dsc_examples() {
        assert_eq!(dsc(&[0, 1, 1], &labels(&[0, 1, 1], 2)).unwrap(), 1.0);
        assert_eq!(dsc(&[1, 1], &labels(&[0, 0], 2)).unwrap(), 0.0);
        let v = dsc(&[0, 1, 1, 1], &labels(&[0, 0, 1, 1], 2)).unwrap();
        assert!((v - 11.0 / 15.0).abs() < 1e-15);
        assert!(dsc(&[0], &labels(&[0, 0], 2)).is_err());
    }

    #[test]
    fn report_mean_and_std() {
        let row = |d| EvalRow {
            arch: "a".into(),
            missing_teeth: false,
            dsc: d,
        };
        let r = EvalReport::from_rows(vec![row(0.6), row(0.8)]);
        assert!((r.mean - 0.7).abs() < 1e-12);
        assert!((r.std - 0.1).abs() < 1e-12);
        assert!(r
            .to_csv()
            .starts_with("arch,missing_teeth,dsc\na,false,0.6\n"));
    }
}
