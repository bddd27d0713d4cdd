//! Softmax classifier with an optional rectified-linear hidden layer, trained
//! by mini-batch SGD with momentum and weight decay.
//!
//! Parameters live in one flat vector. Layout for `hidden_width == 0`:
//! `[W (K x C, row-major), b (C)]`. With a hidden layer of width `H`:
//! `[W1 (K x H), b1 (H), W2 (H x C), b2 (C)]`.

use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Lower clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

const FORMAT_TAG: &str = "qactor-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least 1 feature")]
    NoFeatures,
    #[error("expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("non-finite input feature at position {0}")]
    NonFiniteInput(usize),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(&'static str),
    #[error("parameters diverged (non-finite) in epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("snapshot shape (K={0}, H={1}, C={2}) does not match model")]
    ShapeMismatch(usize, usize, usize),
    #[error("malformed model dump: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainingHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 1,
            minibatch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TrainingHyperparams {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ClassifierError::Hyperparams("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ClassifierError::Hyperparams("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ClassifierError::Hyperparams("weight_decay must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(ClassifierError::Hyperparams("epochs must be at least 1"));
        }
        if self.minibatch_size == 0 {
            return Err(ClassifierError::Hyperparams("minibatch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Deep copy of parameters and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    shape: (usize, usize, usize),
    params: Vec<f64>,
    velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    num_features: usize,
    num_classes: usize,
    hidden_width: usize,
    params: Vec<f64>,
    velocity: Vec<f64>,
}

/// Forward-pass intermediates for one input.
struct Activations {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierModel {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases and momentum zero.
    pub fn new(num_features: usize, num_classes: usize, hidden_width: usize, rng_seed: u64) -> Result<Self, ClassifierError> {
        let mut model = Self::zeros(num_features, num_classes, hidden_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for (range, fan_in) in model.weight_ranges() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut model.params[range] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(num_features: usize, num_classes: usize, hidden_width: usize) -> Result<Self, ClassifierError> {
        if num_classes < 2 {
            return Err(ClassifierError::TooFewClasses(num_classes));
        }
        if num_features == 0 {
            return Err(ClassifierError::NoFeatures);
        }
        let n = param_count(num_features, num_classes, hidden_width);
        Ok(Self {
            num_features,
            num_classes,
            hidden_width,
            params: vec![0.0; n],
            velocity: vec![0.0; n],
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// `(range, fan_in)` of every weight matrix in the flat layout.
    fn weight_ranges(&self) -> Vec<(Range<usize>, usize)> {
        let (k, h, c) = (self.num_features, self.hidden_width, self.num_classes);
        if h == 0 {
            vec![(0..k * c, k)]
        } else {
            let w2 = k * h + h;
            vec![(0..k * h, k), (w2..w2 + h * c, h)]
        }
    }

    fn is_decayed(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for (range, _) in self.weight_ranges() {
            mask[range].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    fn check_input(&self, features: &[f64]) -> Result<(), ClassifierError> {
        if features.len() != self.num_features {
            return Err(ClassifierError::FeatureLength {
                expected: self.num_features,
                got: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(ClassifierError::NonFiniteInput(i));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let (k, h, c) = (self.num_features, self.hidden_width, self.num_classes);
        let p = &self.params;
        let mut hidden_pre = Vec::new();
        let mut hidden = Vec::new();
        let (input, w_out, b_out): (&[f64], usize, usize) = if h == 0 {
            (x, 0, k * c)
        } else {
            hidden_pre = p[k * h..k * h + h].to_vec();
            for (i, xi) in x.iter().enumerate() {
                let row = &p[i * h..(i + 1) * h];
                for (z, w) in hidden_pre.iter_mut().zip(row) {
                    *z += xi * w;
                }
            }
            hidden = hidden_pre.iter().map(|z| z.max(0.0)).collect();
            let w2 = k * h + h;
            (&hidden, w2, w2 + h * c)
        };
        let mut logits = p[b_out..b_out + c].to_vec();
        for (i, xi) in input.iter().enumerate() {
            let row = &p[w_out + i * c..w_out + (i + 1) * c];
            for (z, w) in logits.iter_mut().zip(row) {
                *z += xi * w;
            }
        }
        Activations {
            hidden_pre,
            hidden,
            probs: softmax(&logits),
        }
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(features)?;
        Ok(self.forward(features).probs)
    }

    /// Argmax of the class probabilities, lowest index on ties.
    pub fn predict(&self, features: &[f64]) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.predict_proba(features)?))
    }

    /// Accumulates `scale * d(CE)/d(params)` for one example into `grad`.
    fn backprop(&self, x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let (k, h, c) = (self.num_features, self.hidden_width, self.num_classes);
        let act = self.forward(x);
        let loss = cross_entropy(&act.probs, label);
        let mut delta = act.probs;
        delta[label] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= scale);

        let (input, w_out, b_out): (&[f64], usize, usize) = if h == 0 {
            (x, 0, k * c)
        } else {
            let w2 = k * h + h;
            (&act.hidden, w2, w2 + h * c)
        };
        for (g, d) in grad[b_out..b_out + c].iter_mut().zip(&delta) {
            *g += d;
        }
        for (i, xi) in input.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (g, d) in grad[w_out + i * c..w_out + (i + 1) * c].iter_mut().zip(&delta) {
                *g += xi * d;
            }
        }
        if h > 0 {
            let p = &self.params;
            let mut dh = vec![0.0; h];
            for (j, dhj) in dh.iter_mut().enumerate() {
                if act.hidden_pre[j] > 0.0 {
                    let row = &p[w_out + j * c..w_out + (j + 1) * c];
                    *dhj = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
            }
            for (g, d) in grad[k * h..k * h + h].iter_mut().zip(&dh) {
                *g += d;
            }
            for (i, xi) in x.iter().enumerate() {
                for (g, d) in grad[i * h..(i + 1) * h].iter_mut().zip(&dh) {
                    *g += xi * d;
                }
            }
        }
        loss
    }

    fn check_example(&self, features: &[f64], label: usize) -> Result<(), ClassifierError> {
        self.check_input(features)?;
        if label >= self.num_classes {
            return Err(ClassifierError::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy over `data` and its gradient (without weight decay).
    pub fn loss_and_gradient(&self, data: &[(&[f64], usize)]) -> Result<(f64, Vec<f64>), ClassifierError> {
        if data.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / data.len() as f64;
        let mut loss = 0.0;
        for &(x, y) in data {
            self.check_example(x, y)?;
            loss += self.backprop(x, y, scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    pub fn mean_loss(&self, data: &[(&[f64], usize)]) -> Result<f64, ClassifierError> {
        if data.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        let mut total = 0.0;
        for &(x, y) in data {
            self.check_example(x, y)?;
            total += cross_entropy(&self.forward(x).probs, y);
        }
        Ok(total / data.len() as f64)
    }

    /// Runs `hyper.epochs` shuffled passes of momentum SGD over `data`,
    /// continuing from the current parameters and momentum.
    ///
    /// Update: `v <- momentum * v - lr * (grad + weight_decay * w)`, `w <- w + v`.
    /// Biases are not decayed.
    pub fn train_epochs(&mut self, data: &[(&[f64], usize)], hyper: &TrainingHyperparams) -> Result<(), ClassifierError> {
        hyper.validate()?;
        if data.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        for &(x, y) in data {
            self.check_example(x, y)?;
        }
        let decay = self.is_decayed();
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.rng_seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad = vec![0.0; self.params.len()];
        for epoch in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for (step, chunk) in order.chunks(hyper.minibatch_size).enumerate() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let (x, y) = data[i];
                    self.backprop(x, y, scale, &mut grad);
                }
                for (((w, v), g), &d) in self.params.iter_mut().zip(&mut self.velocity).zip(&grad).zip(&decay) {
                    let g = if d { g + hyper.weight_decay * *w } else { *g };
                    *v = hyper.momentum * *v - hyper.learning_rate * g;
                    *w += *v;
                }
                if self.params.iter().chain(&self.velocity).any(|w| !w.is_finite()) {
                    return Err(ClassifierError::Diverged { epoch, step });
                }
            }
        }
        Ok(())
    }

    /// Fraction of `samples` whose prediction equals `label_of(sample)`.
    pub fn accuracy<'a, T: 'a>(
        &self,
        samples: impl IntoIterator<Item = &'a T>,
        features_of: impl Fn(&T) -> &[f64],
        label_of: impl Fn(&T) -> usize,
    ) -> Result<f64, ClassifierError> {
        let (mut hits, mut n) = (0usize, 0usize);
        for s in samples {
            n += 1;
            if self.predict(features_of(s))? == label_of(s) {
                hits += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { hits as f64 / n as f64 })
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            shape: (self.num_features, self.hidden_width, self.num_classes),
            params: self.params.clone(),
            velocity: self.velocity.clone(),
        }
    }

    pub fn restore(&mut self, snapshot: &ModelSnapshot) -> Result<(), ClassifierError> {
        let (k, h, c) = snapshot.shape;
        if (k, h, c) != (self.num_features, self.hidden_width, self.num_classes) {
            return Err(ClassifierError::ShapeMismatch(k, h, c));
        }
        self.params.copy_from_slice(&snapshot.params);
        self.velocity.copy_from_slice(&snapshot.velocity);
        Ok(())
    }

    /// Text dump: a version line, a shape line, then one parameter per line
    /// followed by one momentum value per line. Values round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FORMAT_TAG} {FORMAT_VERSION}\nshape {} {} {}\n",
            self.num_features, self.hidden_width, self.num_classes
        );
        for v in self.params.iter().chain(&self.velocity) {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ClassifierError> {
        let fmt_err = |m: &str| ClassifierError::Format(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt_err("empty input"))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [tag, ver] if *tag == FORMAT_TAG => {
                if ver.parse::<u32>().ok() != Some(FORMAT_VERSION) {
                    return Err(fmt_err(&format!("unsupported version {ver}")));
                }
            }
            _ => return Err(fmt_err("missing header")),
        }
        let shape = lines.next().ok_or_else(|| fmt_err("missing shape line"))?;
        let dims: Vec<usize> = shape
            .strip_prefix("shape ")
            .ok_or_else(|| fmt_err("missing shape line"))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| fmt_err("bad shape")))
            .collect::<Result<_, _>>()?;
        let [k, h, c] = dims[..] else {
            return Err(fmt_err("shape needs three dimensions"));
        };
        let mut model = Self::zeros(k, c, h)?;
        let n = model.params.len();
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| fmt_err(&format!("bad value `{l}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != 2 * n {
            return Err(fmt_err(&format!("expected {} values, found {}", 2 * n, values.len())));
        }
        model.params.copy_from_slice(&values[..n]);
        model.velocity.copy_from_slice(&values[n..]);
        Ok(model)
    }
}

pub fn param_count(num_features: usize, num_classes: usize, hidden_width: usize) -> usize {
    if hidden_width == 0 {
        num_features * num_classes + num_classes
    } else {
        num_features * hidden_width + hidden_width + hidden_width * num_classes + num_classes
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `-ln(max(probs[label], LOG_EPS))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(LOG_EPS).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn init_is_deterministic() {
        let a = ClassifierModel::new(4, 3, 0, 7).unwrap();
        let b = ClassifierModel::new(4, 3, 0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ClassifierModel::new(4, 3, 0, 8).unwrap());
        assert!(a.params()[12..].iter().all(|&b| b == 0.0));
        assert!(a.velocity().iter().all(|&v| v == 0.0));
        assert!(a.params()[..12].iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ClassifierModel::new(4, 3, 0, 1).unwrap().params().len(), 4 * 3 + 3);
        assert_eq!(ClassifierModel::new(2, 2, 8, 1).unwrap().params().len(), 42);
        assert_eq!(ClassifierModel::new(2, 1, 0, 1), Err(ClassifierError::TooFewClasses(1)));
    }

    #[test]
    fn zero_weights_are_uniform() {
        let m = ClassifierModel::zeros(3, 4, 0).unwrap();
        let p = m.predict_proba(&[1.0, -2.0, 5.0]).unwrap();
        assert!(p.iter().all(|&q| close(q, 0.25, 1e-15)));
        assert_eq!(m.predict(&[1.0, -2.0, 5.0]).unwrap(), 0);
    }

    #[test]
    fn closed_form_softmax() {
        let mut m = ClassifierModel::zeros(1, 2, 0).unwrap();
        m.params_mut()[1] = 3f64.ln();
        let p = m.predict_proba(&[1.0]).unwrap();
        assert!(close(p[0], 0.25, 1e-12) && close(p[1], 0.75, 1e-12));
        assert_eq!(m.predict(&[1.0]).unwrap(), 1);
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = [0.3, -1.2, 4.0, 2.5];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!(close(*a, b, 1e-12));
        }
        let big = softmax(&[1000.0, 999.0]);
        assert!(big.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn argmax_ties() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1), 0.0);
        assert!(close(cross_entropy(&[0.1; 10], 4), 10f64.ln(), 1e-12));
        assert!(close(cross_entropy(&[1.0, 0.0], 1), 27.631021115928547, 1e-9));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = ClassifierModel::zeros(2, 2, 0).unwrap();
        assert_eq!(m.predict_proba(&[f64::NAN, 0.0]), Err(ClassifierError::NonFiniteInput(0)));
        assert!(matches!(m.predict_proba(&[0.0]), Err(ClassifierError::FeatureLength { .. })));
    }

    #[test]
    fn zero_gradient_fixed_point() {
        // Saturated, correct predictions give a gradient far below 1e-9.
        let mut m = ClassifierModel::zeros(1, 2, 0).unwrap();
        m.params_mut()[0] = -40.0;
        m.params_mut()[1] = 40.0;
        let xs = [[1.0], [2.0], [0.5]];
        let data: Vec<(&[f64], usize)> = xs.iter().map(|x| (&x[..], 1)).collect();
        let hyper = TrainingHyperparams {
            weight_decay: 0.0,
            epochs: 3,
            minibatch_size: 1,
            ..Default::default()
        };
        let before = m.params().to_vec();
        m.train_epochs(&data, &hyper).unwrap();
        for (a, b) in before.iter().zip(m.params()) {
            assert!((a - b).abs() < 1e-9 * 9.0);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut m = ClassifierModel::new(3, 3, 4, 5).unwrap();
        let fresh = m.snapshot();
        assert_eq!(fresh, ClassifierModel::new(3, 3, 4, 5).unwrap().snapshot());
        let xs = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [0.0, 2.0, 1.0]];
        let data: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (&x[..], i)).collect();
        let hyper = TrainingHyperparams {
            epochs: 5,
            ..Default::default()
        };
        m.train_epochs(&data, &hyper).unwrap();
        assert_ne!(m.snapshot(), fresh);
        m.restore(&fresh).unwrap();
        assert_eq!(m.snapshot(), fresh);
        m.restore(&fresh).unwrap();
        assert_eq!(m, ClassifierModel::new(3, 3, 4, 5).unwrap());
        let other = ClassifierModel::new(3, 2, 4, 5).unwrap().snapshot();
        assert!(matches!(m.restore(&other), Err(ClassifierError::ShapeMismatch(..))));
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = ClassifierModel::new(1, 2, 0, 3).unwrap();
        let xs = [[1e200], [-1e200]];
        let data: Vec<(&[f64], usize)> = vec![(&xs[0][..], 0), (&xs[1][..], 1)];
        let hyper = TrainingHyperparams {
            learning_rate: 1e200,
            epochs: 4,
            ..Default::default()
        };
        assert!(matches!(m.train_epochs(&data, &hyper), Err(ClassifierError::Diverged { .. })));
    }

    #[test]
    fn hyperparams_validated() {
        let mut m = ClassifierModel::new(1, 2, 0, 3).unwrap();
        let x = [1.0];
        let data: Vec<(&[f64], usize)> = vec![(&x[..], 0)];
        for bad in [
            TrainingHyperparams { learning_rate: 0.0, ..Default::default() },
            TrainingHyperparams { momentum: 1.0, ..Default::default() },
            TrainingHyperparams { epochs: 0, ..Default::default() },
            TrainingHyperparams { minibatch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(m.train_epochs(&data, &bad), Err(ClassifierError::Hyperparams(_))));
        }
        assert_eq!(m.train_epochs(&[], &TrainingHyperparams::default()), Err(ClassifierError::EmptyTrainingSet));
        let bad_label: Vec<(&[f64], usize)> = vec![(&x[..], 2)];
        assert!(matches!(
            m.train_epochs(&bad_label, &TrainingHyperparams::default()),
            Err(ClassifierError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn text_dump_round_trip() {
        let mut m = ClassifierModel::new(3, 4, 2, 9).unwrap();
        m.velocity[0] = 1.0 / 3.0;
        let back = ClassifierModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(ClassifierModel::from_text("qactor-model 2\nshape 1 0 2\n").is_err());
        assert!(ClassifierModel::from_text("qactor-model 1\nshape 1 0 2\n0.0\n").is_err());
    }
}
