//! Logistic regression baseline: full-batch gradient descent on log-loss
//! with L2, over features standardized by train-split mean and stddev.
//! Zero-variance columns are dropped (their weight stays 0).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with nonzero train variance; others are ignored at predict
    /// time and keep weight 0.
    pub active: Vec<bool>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LrModel {
    pub fn train(rows: &[(Vec<f64>, bool)], params: &LrParams) -> Result<Self, String> {
        let n = rows.len();
        if n == 0 {
            return Err("empty training set".into());
        }
        let dim = rows[0].0.len();
        if rows.iter().any(|(x, _)| x.len() != dim) {
            return Err("inconsistent feature dimensions".into());
        }

        let mut means = vec![0.0; dim];
        for (x, _) in rows {
            for (m, v) in means.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut vars = vec![0.0; dim];
        for (x, _) in rows {
            for j in 0..dim {
                let d = x[j] - means[j];
                vars[j] += d * d;
            }
        }
        let stds: Vec<f64> = vars.iter().map(|v| (v / n as f64).sqrt()).collect();
        let active: Vec<bool> = stds.iter().map(|s| *s > 0.0).collect();

        // Standardized design matrix, inactive columns zeroed.
        let design: Vec<Vec<f64>> = rows
            .iter()
            .map(|(x, _)| {
                (0..dim)
                    .map(|j| if active[j] { (x[j] - means[j]) / stds[j] } else { 0.0 })
                    .collect()
            })
            .collect();
        let targets: Vec<f64> = rows.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();

        let mut weights = vec![0.0; dim];
        let mut bias = 0.0;
        for _ in 0..params.epochs {
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for (x, y) in design.iter().zip(&targets) {
                let p = sigmoid(bias + dot(&weights, x));
                let err = p - y;
                for j in 0..dim {
                    grad_w[j] += err * x[j];
                }
                grad_b += err;
            }
            for j in 0..dim {
                if active[j] {
                    let g = grad_w[j] / n as f64 + params.l2 * weights[j];
                    weights[j] -= params.learning_rate * g;
                }
            }
            bias -= params.learning_rate * grad_b / n as f64;
        }

        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err("training diverged to non-finite coefficients".into());
        }
        Ok(Self {
            means,
            stds,
            active,
            weights,
            bias,
        })
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, String> {
        if features.len() != self.weights.len() {
            return Err(format!(
                "feature dimension {} does not match model dimension {}",
                features.len(),
                self.weights.len()
            ));
        }
        let mut z = self.bias;
        for j in 0..features.len() {
            if self.active[j] {
                z += self.weights[j] * (features[j] - self.means[j]) / self.stds[j];
            }
        }
        Ok(sigmoid(z))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_set() -> Vec<(Vec<f64>, bool)> {
        // Label is sign(sr - 0.5); linearly separable in one dimension.
        (0..40)
            .map(|i| {
                let sr = i as f64 / 40.0;
                (vec![sr], sr > 0.5)
            })
            .collect()
    }

    #[test]
    fn reaches_train_accuracy_one_on_separable_data() {
        let rows = separable_set();
        let model = LrModel::train(&rows, &LrParams::default()).unwrap();
        let correct = rows
            .iter()
            .filter(|(x, y)| (model.predict_proba(x).unwrap() >= 0.5) == *y)
            .count();
        assert_eq!(correct, rows.len());
    }

    #[test]
    fn zero_variance_column_keeps_zero_weight() {
        let rows: Vec<(Vec<f64>, bool)> = (0..40)
            .map(|i| {
                let sr = i as f64 / 40.0;
                (vec![sr, 7.0], sr > 0.5) // second column constant
            })
            .collect();
        let model = LrModel::train(&rows, &LrParams::default()).unwrap();
        assert_eq!(model.weights[1], 0.0);
        assert!(!model.active[1]);
        assert!(model.weights[0].abs() > 0.0);
    }

    #[test]
    fn zero_weights_predict_half() {
        let model = LrModel {
            means: vec![0.0],
            stds: vec![1.0],
            active: vec![true],
            weights: vec![0.0],
            bias: 0.0,
        };
        assert_eq!(model.predict_proba(&[123.0]).unwrap(), 0.5);
        assert_eq!(model.predict_proba(&[-5.0]).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let rows = separable_set();
        let model = LrModel::train(&rows, &LrParams::default()).unwrap();
        assert!(model.predict_proba(&[0.1, 0.2]).is_err());
    }
}
