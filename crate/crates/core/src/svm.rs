//! Linear binary SVM via dual coordinate descent.
//!
//! Minimizes `||v||^2 + C * sum_i max(0, 1 - l_i (v.x_i + b))`. The bias is
//! an augmented constant feature of value 1 (so it is lightly regularized),
//! and examples are visited in their given order, making training
//! deterministic.

use crate::error::{Error, Result};
use crate::linalg;

const MAX_EPOCHS: usize = 1000;
const OBJ_TOL: f64 = 1e-8;
/// KKT violation threshold on the projected dual gradient.
const PG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub cost: f64,
}

impl SvmModel {
    /// `v.x + b`
    pub fn confidence(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "feature dim {} vs model dim {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(linalg::dot(&self.weights, x) + self.bias)
    }

    /// Primal objective on a training set.
    pub fn objective(&self, examples: &[(Vec<f64>, i8)]) -> f64 {
        let reg = linalg::dot(&self.weights, &self.weights) + self.bias * self.bias;
        let hinge: f64 = examples
            .iter()
            .map(|(x, l)| {
                let f = linalg::dot(&self.weights, x) + self.bias;
                (1.0 - *l as f64 * f).max(0.0)
            })
            .sum();
        reg + self.cost * hinge
    }
}

/// Train on `(feature, label)` pairs with labels in {-1, +1}.
pub fn svm_train(examples: &[(Vec<f64>, i8)], cost: f64) -> Result<SvmModel> {
    let n = examples.len();
    if n == 0 {
        return Err(Error::Degenerate("no training examples".into()));
    }
    let dim = examples[0].0.len();
    if examples.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Dimension("inconsistent feature dimensions".into()));
    }
    let pos = examples.iter().filter(|(_, l)| *l > 0).count();
    if pos == 0 || pos == n {
        return Err(Error::Degenerate("training data contains a single class".into()));
    }

    // The conventional dual solves 0.5||w||^2 + C'*hinge; our objective is
    // twice that with C' = C/2.
    let c_dual = cost / 2.0;
    // w covers the augmented feature [x; 1]; its last entry is the bias.
    let mut w = vec![0.0f64; dim + 1];
    let mut alpha = vec![0.0f64; n];
    let q_diag: Vec<f64> = examples
        .iter()
        .map(|(x, _)| linalg::dot(x, x) + 1.0)
        .collect();

    let primal = |w: &[f64]| -> f64 {
        let reg = linalg::dot(w, w);
        let hinge: f64 = examples
            .iter()
            .map(|(x, l)| {
                let f = linalg::dot(&w[..dim], x) + w[dim];
                (1.0 - *l as f64 * f).max(0.0)
            })
            .sum();
        reg + cost * hinge
    };

    let mut prev_obj = primal(&w);
    for _ in 0..MAX_EPOCHS {
        let mut max_pg = 0.0f64;
        for i in 0..n {
            let (x, l) = &examples[i];
            let y = *l as f64;
            let g = y * (linalg::dot(&w[..dim], x) + w[dim]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c_dual {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, c_dual);
                let delta = (alpha[i] - old) * y;
                if delta != 0.0 {
                    linalg::axpy(delta, x, &mut w[..dim]);
                    w[dim] += delta;
                }
            }
        }
        let obj = primal(&w);
        let rel = (prev_obj - obj).abs() / prev_obj.abs().max(1.0);
        if max_pg < PG_TOL || rel < OBJ_TOL {
            prev_obj = obj;
            break;
        }
        prev_obj = obj;
    }
    let _ = prev_obj;

    let bias = w[dim];
    w.truncate(dim);
    Ok(SvmModel { weights: w, bias, cost })
}

/// One independent binary model per category over a shared feature matrix.
/// `labels[c][i]` is the label of example i for category c.
pub fn one_vs_rest_train(
    features: &[Vec<f64>],
    labels: &[Vec<i8>],
    cost: f64,
) -> Result<Vec<SvmModel>> {
    labels
        .iter()
        .map(|cat_labels| {
            if cat_labels.len() != features.len() {
                return Err(Error::Dimension(format!(
                    "{} labels for {} examples",
                    cat_labels.len(),
                    features.len()
                )));
            }
            let examples: Vec<(Vec<f64>, i8)> = features
                .iter()
                .cloned()
                .zip(cat_labels.iter().copied())
                .collect();
            svm_train(&examples, cost)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_pair() -> Vec<(Vec<f64>, i8)> {
        vec![(vec![1.0, 0.0], 1), (vec![-1.0, 0.0], -1)]
    }

    #[test]
    fn max_margin_two_points() {
        let model = svm_train(&symmetric_pair(), 100.0).unwrap();
        assert!((model.weights[0] - 1.0).abs() < 1e-4, "v = {:?}", model.weights);
        assert!(model.weights[1].abs() < 1e-6);
        assert!(model.bias.abs() < 1e-6);
        let obj = model.objective(&symmetric_pair());
        assert!((obj - 1.0).abs() < 1e-3, "objective {}", obj);
    }

    #[test]
    fn duplicated_data_same_model() {
        let single = svm_train(&symmetric_pair(), 10.0).unwrap();
        let mut doubled = symmetric_pair();
        doubled.extend(symmetric_pair());
        let dup = svm_train(&doubled, 10.0).unwrap();
        for (a, b) in single.weights.iter().zip(&dup.weights) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn separable_data_classified() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut examples = Vec::new();
        for _ in 0..40 {
            let x = vec![rng.random::<f64>() + 1.5, rng.random::<f64>()];
            examples.push((x, 1i8));
            let x = vec![-rng.random::<f64>() - 1.5, rng.random::<f64>()];
            examples.push((x, -1i8));
        }
        let model = svm_train(&examples, 10.0).unwrap();
        for (x, l) in &examples {
            let f = model.confidence(x).unwrap();
            assert!(f * *l as f64 > 0.0, "misclassified {:?}", x);
        }
    }

    #[test]
    fn single_class_rejected() {
        let ex = vec![(vec![1.0], 1i8), (vec![2.0], 1i8)];
        assert!(matches!(svm_train(&ex, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn confidence_contract() {
        let model = SvmModel { weights: vec![0.5, -1.0, 2.0], bias: 0.25, cost: 1.0 };
        assert_eq!(model.confidence(&[0.0, 0.0, 0.0]).unwrap(), 0.25);
        // manual dot product
        let f = model.confidence(&[2.0, 1.0, 0.5]).unwrap();
        assert!((f - (1.0 - 1.0 + 1.0 + 0.25)).abs() < 1e-12);
        // linearity
        let a = model.confidence(&[1.0, 2.0, 3.0]).unwrap();
        let b = model.confidence(&[2.0, 4.0, 6.0]).unwrap();
        assert!(((b - model.bias) - 2.0 * (a - model.bias)).abs() < 1e-12);
        assert!(model.confidence(&[1.0]).is_err());
    }

    #[test]
    fn objective_no_worse_than_zero_model() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let examples: Vec<(Vec<f64>, i8)> = (0..30)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
                (x, if i % 2 == 0 { 1 } else { -1 })
            })
            .collect();
        let model = svm_train(&examples, 5.0).unwrap();
        let zero = SvmModel { weights: vec![0.0; 4], bias: 0.0, cost: 5.0 };
        assert!(model.objective(&examples) <= zero.objective(&examples) + 1e-9);
    }

    #[test]
    fn label_flip_antisymmetry() {
        let examples = vec![
            (vec![1.0, 0.3], 1i8),
            (vec![-0.5, 1.0], -1),
            (vec![0.2, -0.8], 1),
            (vec![-1.2, 0.1], -1),
        ];
        let flipped: Vec<(Vec<f64>, i8)> =
            examples.iter().map(|(x, l)| (x.clone(), -l)).collect();
        let a = svm_train(&examples, 3.0).unwrap();
        let b = svm_train(&flipped, 3.0).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!((a.bias + b.bias).abs() < 1e-12);
    }

    #[test]
    fn complementary_slackness() {
        // re-derive duals from the trained model's margins
        let examples = vec![
            (vec![2.0, 0.1], 1i8),
            (vec![1.5, -0.3], 1),
            (vec![-1.8, 0.4], -1),
            (vec![-2.2, -0.2], -1),
            (vec![0.1, 0.05], 1),
        ];
        let model = svm_train(&examples, 4.0).unwrap();
        for (x, l) in &examples {
            let margin = *l as f64 * model.confidence(x).unwrap();
            // margin > 1 examples must not be support vectors: given the
            // stationarity w = sum alpha_i y_i x_i, checking KKT reduces to
            // the margin conditions below.
            assert!(margin > 1.0 - 1e-5 || margin <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn one_vs_rest_reduces_to_binary() {
        let features = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let labels = vec![vec![1i8, -1]];
        let models = one_vs_rest_train(&features, &labels, 100.0).unwrap();
        assert_eq!(models.len(), 1);
        let direct =
            svm_train(&[(vec![1.0, 0.0], 1), (vec![-1.0, 0.0], -1)], 100.0).unwrap();
        assert_eq!(models[0], direct);
    }

    #[test]
    fn one_vs_rest_three_clusters() {
        let mut features = Vec::new();
        let mut labels = vec![Vec::new(), Vec::new(), Vec::new()];
        let centers = [[4.0, 0.0], [0.0, 4.0], [-4.0, -4.0]];
        for (c, center) in centers.iter().enumerate() {
            for i in 0..6 {
                let jitter = i as f64 * 0.05;
                features.push(vec![center[0] + jitter, center[1] - jitter]);
                for (lc, lab) in labels.iter_mut().enumerate() {
                    lab.push(if lc == c { 1 } else { -1 });
                }
            }
        }
        let models = one_vs_rest_train(&features, &labels, 50.0).unwrap();
        for (c, model) in models.iter().enumerate() {
            for (i, x) in features.iter().enumerate() {
                let f = model.confidence(x).unwrap();
                let expected = labels[c][i] as f64;
                assert!(f * expected > 0.0, "category {} example {}", c, i);
            }
        }
    }
}
