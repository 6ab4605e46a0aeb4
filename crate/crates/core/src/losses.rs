//! Generalized dice loss, pairwise contrastive loss and their weighted sum,
//! each returning an analytic gradient alongside the value.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::ClusterAssignment;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("face {face} has label {label}, but only {classes} classes exist")]
    LabelOutOfRange {
        face: usize,
        label: u32,
        classes: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("only one component present, negative pairs cannot be sampled")]
    SingleComponent,
    #[error("joint loss needs at least one part")]
    NoParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLossConfig {
    pub lambda: f64,
    pub margin: f64,
    pub pairs_per_step: usize,
    pub dice_epsilon: f64,
    pub seed: u64,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        JointLossConfig {
            lambda: 10.0,
            margin: 1.0,
            pairs_per_step: 4096,
            dice_epsilon: 1e-6,
            seed: 0,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |m: String| Err(LossError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be a finite value >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if self.pairs_per_step < 2 {
            return bad(format!(
                "pairs_per_step must be at least 2, got {}",
                self.pairs_per_step
            ));
        }
        if !(self.dice_epsilon > 0.0) {
            return bad(format!(
                "dice_epsilon must be positive, got {}",
                self.dice_epsilon
            ));
        }
        Ok(())
    }
}

/// Network output for one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per-face class distribution, `n x C`.
    pub probs: Array2<f64>,
    /// Per-face embedding, `n x E`.
    pub embed: Array2<f64>,
}

impl Prediction {
    /// Most probable class per face; ties go to the lower class id.
    pub fn argmax(&self) -> Vec<u32> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (c, &p) in r.iter().enumerate() {
                    if p > r[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Value and gradient of a loss.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Generalized dice loss with class weights `w_c = 1 / (G_c + eps)^2`,
/// where `G_c` is the number of faces labeled `c`. A class with no faces
/// takes the largest weight of the classes that have some.
///
/// With `I = sum_c w_c sum_i p_ic g_ic` and `U = sum_c w_c sum_i (p_ic + g_ic)`
/// the loss is `1 - (2 I + eps) / (U + eps)`, which is 0 for a perfect
/// one-hot prediction and stays within `[0, 1]`.
pub fn generalized_dice_loss(
    probs: ArrayView2<f64>,
    labels: &[u32],
    eps: f64,
) -> Result<LossGrad, LossError> {
    let (n, classes) = probs.dim();
    if labels.len() != n {
        return Err(LossError::Shape(format!(
            "{n} prediction rows but {} labels",
            labels.len()
        )));
    }
    let mut counts = vec![0.0f64; classes];
    for (face, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(LossError::LabelOutOfRange {
                face,
                label: l,
                classes,
            });
        }
        counts[l as usize] += 1.0;
    }
    // classes absent from the batch borrow the largest present weight
    let present_max = counts
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|g| 1.0 / ((g + eps) * (g + eps)))
        .fold(0.0, f64::max);
    let w: Vec<f64> = counts
        .iter()
        .map(|&g| {
            if g > 0.0 {
                1.0 / ((g + eps) * (g + eps))
            } else {
                present_max
            }
        })
        .collect();

    let mut inter = 0.0;
    let mut union = 0.0;
    for c in 0..classes {
        let mut col_sum = 0.0;
        let mut col_hit = 0.0;
        for i in 0..n {
            col_sum += probs[[i, c]];
            if labels[i] as usize == c {
                col_hit += probs[[i, c]];
            }
        }
        inter += w[c] * col_hit;
        union += w[c] * (col_sum + counts[c]);
    }
    let num = 2.0 * inter + eps;
    let den = union + eps;
    let value = 1.0 - num / den;
    let den2 = den * den;
    let grad = Array2::from_shape_fn((n, classes), |(i, c)| {
        let g = if labels[i] as usize == c { 1.0 } else { 0.0 };
        -w[c] * (2.0 * g * den - num) / den2
    });
    Ok(LossGrad { value, grad })
}

/// One sampled face pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub positive: bool,
}

/// Faces grouped by component so that a same-component or
/// different-component partner can be drawn in constant time.
struct ComponentIndex {
    /// Face ids sorted by component.
    order: Vec<usize>,
    /// `start[c]..start[c + 1]` is component `c`'s slice of `order`.
    start: Vec<usize>,
    /// Faces whose component has at least two members.
    pairable: Vec<usize>,
}

impl ComponentIndex {
    fn new(components: &[u32], k: usize) -> Self {
        let mut start = vec![0usize; k + 1];
        for &c in components {
            start[c as usize + 1] += 1;
        }
        for c in 0..k {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0; components.len()];
        for (f, &c) in components.iter().enumerate() {
            order[fill[c as usize]] = f;
            fill[c as usize] += 1;
        }
        let pairable = (0..components.len())
            .filter(|&f| {
                let c = components[f] as usize;
                start[c + 1] - start[c] >= 2
            })
            .collect();
        ComponentIndex {
            order,
            start,
            pairable,
        }
    }

    fn range(&self, c: usize) -> (usize, usize) {
        (self.start[c], self.start[c + 1])
    }
}

/// Draws `count` pairs, half with both faces in one component and half
/// across components. When no component has two faces every pair is
/// negative.
pub fn sample_pairs(
    components: &ClusterAssignment,
    count: usize,
    seed: u64,
) -> Result<Vec<Pair>, LossError> {
    let comp = &components.component;
    let n = comp.len();
    if let Some((face, &c)) = comp
        .iter()
        .enumerate()
        .find(|(_, &c)| c as usize >= components.k)
    {
        return Err(LossError::LabelOutOfRange {
            face,
            label: c,
            classes: components.k,
        });
    }
    let index = ComponentIndex::new(comp, components.k);
    let distinct = (0..components.k)
        .filter(|&c| index.range(c).1 > index.range(c).0)
        .count();
    if distinct < 2 {
        return Err(LossError::SingleComponent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = if index.pairable.is_empty() {
        0
    } else {
        count / 2
    };
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..positives {
        let i = index.pairable[rng.random_range(0..index.pairable.len())];
        let (lo, hi) = index.range(comp[i] as usize);
        // uniform over the other members of the component
        let mut slot = lo + rng.random_range(0..hi - lo - 1);
        if index.order[slot] == i {
            slot = hi - 1;
        }
        pairs.push(Pair {
            i,
            j: index.order[slot],
            positive: true,
        });
    }
    for _ in positives..count {
        let i = rng.random_range(0..n);
        let (lo, hi) = index.range(comp[i] as usize);
        let r = rng.random_range(0..n - (hi - lo));
        let slot = if r < lo { r } else { r + (hi - lo) };
        pairs.push(Pair {
            i,
            j: index.order[slot],
            positive: false,
        });
    }
    Ok(pairs)
}

/// Loss term of one pair at embedding distance `d`: `d^2 / 2` for a
/// positive pair, `max(0, margin - d)^2 / 2` for a negative one.
pub fn pair_term(d: f64, positive: bool, margin: f64) -> f64 {
    if positive {
        0.5 * d * d
    } else {
        let h = (margin - d).max(0.0);
        0.5 * h * h
    }
}

/// Mean pair term over `pairs`, with its gradient w.r.t. `embed`.
pub fn contrastive_loss_on_pairs(embed: ArrayView2<f64>, pairs: &[Pair], margin: f64) -> LossGrad {
    let mut grad = Array2::zeros(embed.dim());
    let mut total = 0.0;
    let scale = 1.0 / pairs.len().max(1) as f64;
    for p in pairs {
        let diff = &embed.row(p.i) - &embed.row(p.j);
        let d = diff.dot(&diff).sqrt();
        total += pair_term(d, p.positive, margin);
        // coefficient of (e_i - e_j) in d(term)/d(e_i)
        let coef = if p.positive {
            1.0
        } else if d < margin && d > 0.0 {
            -(margin - d) / d
        } else {
            0.0
        };
        if coef != 0.0 {
            grad.row_mut(p.i).scaled_add(coef * scale, &diff);
            grad.row_mut(p.j).scaled_add(-coef * scale, &diff);
        }
    }
    LossGrad {
        value: total * scale,
        grad,
    }
}

/// Pairwise contrastive loss over `cfg.pairs_per_step` pairs sampled with
/// `cfg.seed`.
pub fn contrastive_loss(
    embed: ArrayView2<f64>,
    components: &ClusterAssignment,
    cfg: &JointLossConfig,
) -> Result<LossGrad, LossError> {
    if embed.nrows() != components.component.len() {
        return Err(LossError::Shape(format!(
            "{} embedding rows but {} component ids",
            embed.nrows(),
            components.component.len()
        )));
    }
    let pairs = sample_pairs(components, cfg.pairs_per_step, cfg.seed)?;
    Ok(contrastive_loss_on_pairs(embed, &pairs, cfg.margin))
}

/// `L = L_sup + lambda * L_self`, an absent part counting as 0.
pub fn joint_loss(sup: Option<f64>, self_sup: Option<f64>, lambda: f64) -> Result<f64, LossError> {
    match (sup, self_sup) {
        (None, None) => Err(LossError::NoParts),
        (s, u) => Ok(s.unwrap_or(0.0) + lambda * u.unwrap_or(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn assignment(ids: &[u32], k: usize) -> ClusterAssignment {
        ClusterAssignment {
            component: ids.to_vec(),
            k,
        }
    }

    #[test]
    fn perfect_prediction_has_zero_dice_loss() {
        let probs = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let l = generalized_dice_loss(probs.view(), &[0, 1, 1], 1e-6).unwrap();
        assert!(l.value.abs() <= 2e-6, "{}", l.value);
    }

    #[test]
    fn total_mismatch_dice_loss_is_one() {
        let probs = array![[0.0, 1.0], [1.0, 0.0]];
        let l = generalized_dice_loss(probs.view(), &[0, 1], 1e-6).unwrap();
        assert!((l.value - 1.0).abs() < 1e-5, "{}", l.value);
    }

    #[test]
    fn dice_label_out_of_range() {
        let probs = array![[0.5, 0.5]];
        assert_eq!(
            generalized_dice_loss(probs.view(), &[2], 1e-6).unwrap_err(),
            LossError::LabelOutOfRange {
                face: 0,
                label: 2,
                classes: 2
            }
        );
    }

    #[test]
    fn identical_embeddings_positive_pairs() {
        let e = Array2::from_elem((4, 3), 0.25);
        let pairs = [
            Pair {
                i: 0,
                j: 1,
                positive: true,
            },
            Pair {
                i: 2,
                j: 3,
                positive: true,
            },
        ];
        let l = contrastive_loss_on_pairs(e.view(), &pairs, 1.0);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pair_terms() {
        assert_eq!(pair_term(1.0, true, 1.0), 0.5);
        assert_eq!(pair_term(1.0, false, 1.0), 0.0);
        assert_eq!(pair_term(2.5, false, 1.0), 0.0);
        assert_eq!(pair_term(0.5, false, 1.0), 0.125);
    }

    #[test]
    fn joint_loss_arithmetic() {
        assert!((joint_loss(Some(0.2), Some(0.05), 10.0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(joint_loss(None, Some(0.3), 10.0).unwrap(), 3.0);
        assert_eq!(joint_loss(Some(0.2), Some(123.0), 0.0).unwrap(), 0.2);
        assert_eq!(joint_loss(None, None, 10.0), Err(LossError::NoParts));
    }

    #[test]
    fn pairs_are_stratified() {
        let comp = assignment(&[0, 0, 0, 1, 1, 2, 2, 2, 2, 3], 4);
        let pairs = sample_pairs(&comp, 1000, 5).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.positive).count(), 500);
        for p in &pairs {
            assert_ne!(p.i, p.j);
            assert_eq!(comp.component[p.i] == comp.component[p.j], p.positive);
        }
        assert_eq!(pairs, sample_pairs(&comp, 1000, 5).unwrap());
    }

    #[test]
    fn singleton_components_give_only_negatives() {
        let comp = assignment(&[0, 1, 2], 3);
        let pairs = sample_pairs(&comp, 10, 1).unwrap();
        assert!(pairs.iter().all(|p| !p.positive));
    }

    #[test]
    fn single_component_is_an_error() {
        let comp = assignment(&[0, 0, 0], 1);
        assert_eq!(
            sample_pairs(&comp, 10, 1).unwrap_err(),
            LossError::SingleComponent
        );
    }

    #[test]
    fn config_validation() {
        assert!(JointLossConfig::default().validate().is_ok());
        let bad = JointLossConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = JointLossConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
