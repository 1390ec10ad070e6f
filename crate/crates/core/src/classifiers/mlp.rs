//! One-hidden-layer perceptron: standardised inputs, logistic hidden units,
//! softmax output, cross-entropy loss, mini-batch gradient descent.
//!
//! Parameters are flattened as `[w1 (hidden x inputs), b1, w2 (classes x hidden), b2]`
//! for gradient checking.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MultibandRaster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 16,
            learning_rate: 0.5,
            epochs: 300,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub classes: Vec<String>,
    pub inputs: usize,
    pub hidden: usize,
    /// Inputs are standardised as `(x - offset) / scale` before the first layer.
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub config: MlpConfig,
    pub history: Vec<EpochStats>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Forward {
    z: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    /// Natural log of each output probability.
    log_probs: Vec<f64>,
}

impl Mlp {
    /// All weights and biases zero, identity standardisation.
    pub fn zeros(inputs: usize, hidden: usize, classes: Vec<String>) -> Self {
        let c = classes.len();
        Mlp {
            classes,
            inputs,
            hidden,
            input_offset: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; c * hidden],
            b2: vec![0.0; c],
            config: MlpConfig {
                hidden,
                ..MlpConfig::default()
            },
            history: Vec::new(),
        }
    }

    /// Weights and biases drawn uniformly from (-0.5, 0.5) in flattened order.
    pub fn seeded(inputs: usize, hidden: usize, classes: Vec<String>, seed: u64) -> Self {
        let mut m = Mlp::zeros(inputs, hidden, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        m
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (n1, n2, n3) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < n1 {
            &mut self.w1[i]
        } else if i < n1 + n2 {
            &mut self.b1[i - n1]
        } else if i < n1 + n2 + n3 {
            &mut self.w2[i - n1 - n2]
        } else {
            &mut self.b2[i - n1 - n2 - n3]
        }
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let z: Vec<f64> = x
            .iter()
            .zip(self.input_offset.iter().zip(&self.input_scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                sigmoid(self.b1[j] + row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes.len())
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_norm).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Forward {
            z,
            hidden,
            probs,
            log_probs,
        }
    }

    /// Class probabilities for one input vector.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    pub fn loss(&self, x: &[f64], target: usize) -> f64 {
        -self.forward(x).log_probs[target]
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Syntax {
            line: 0,
            column: 0,
            message: e.to_string(),
        })
    }

    pub fn training_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for e in &self.history {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.train_acc));
        }
        out
    }
}

/// Cross-entropy loss of one sample and its gradient in flattened parameter order.
pub fn loss_and_gradient(model: &Mlp, x: &[f64], target: usize) -> (f64, Vec<f64>) {
    let f = model.forward(x);
    let (d, h, c) = (model.inputs, model.hidden, model.classes.len());
    let mut grad = vec![0.0; model.parameter_count()];
    let (w1_off, b1_off, w2_off, b2_off) = (0, h * d, h * d + h, h * d + h + c * h);

    let d_logits: Vec<f64> = (0..c).map(|k| f.probs[k] - if k == target { 1.0 } else { 0.0 }).collect();
    for k in 0..c {
        grad[b2_off + k] = d_logits[k];
        for j in 0..h {
            grad[w2_off + k * h + j] = d_logits[k] * f.hidden[j];
        }
    }
    for j in 0..h {
        let back: f64 = (0..c).map(|k| model.w2[k * h + j] * d_logits[k]).sum();
        let d_pre = back * f.hidden[j] * (1.0 - f.hidden[j]);
        grad[b1_off + j] = d_pre;
        for i in 0..d {
            grad[w1_off + j * d + i] = d_pre * f.z[i];
        }
    }
    (-f.log_probs[target], grad)
}

const FD_STEP: f64 = 1e-5;

/// Like [`mlp_gradient_check`], but lets the caller tamper with the
/// backpropagated gradient before comparison.
pub fn gradient_check_with(model: &Mlp, x: &[f64], target: usize, tamper: impl FnOnce(&mut [f64])) -> f64 {
    let (_, mut analytic) = loss_and_gradient(model, x, target);
    tamper(&mut analytic);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &g_bp) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + FD_STEP;
        let plus = probe.loss(x, target);
        *probe.param_mut(i) = original - FD_STEP;
        let minus = probe.loss(x, target);
        *probe.param_mut(i) = original;
        let g_fd = (plus - minus) / (2.0 * FD_STEP);
        let rel = (g_bp - g_fd).abs() / g_bp.abs().max(g_fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

/// Max relative error between backpropagated and central-difference gradients.
pub fn mlp_gradient_check(model: &Mlp, x: &[f64], target: usize) -> f64 {
    gradient_check_with(model, x, target, |_| {})
}

fn evaluate(model: &Mlp, samples: &SampleSet, targets: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &t) in samples.features.iter().zip(targets) {
        let f = model.forward(x);
        loss -= f.log_probs[t];
        if argmax(&f.probs) == t {
            correct += 1;
        }
    }
    let n = targets.len() as f64;
    (loss / n, correct as f64 / n)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn mlp_train(samples: &SampleSet, config: &MlpConfig) -> Result<Mlp> {
    samples.check_non_empty()?;
    if config.hidden == 0 {
        return Err(Error::invalid("hidden layer needs at least one unit"));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", config.learning_rate)));
    }
    if config.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let classes = samples.classes();
    if classes.len() < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    let d = samples.schema.len();
    let targets: Vec<usize> = samples
        .labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label drawn from the class list"))
        .collect();

    let mut model = Mlp::seeded(d, config.hidden, classes, config.seed);
    model.config = *config;
    let n = samples.len() as f64;
    for i in 0..d {
        let mean = samples.features.iter().map(|x| x[i]).sum::<f64>() / n;
        let var = samples.features.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / n;
        model.input_offset[i] = mean;
        model.input_scale[i] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad_sum = vec![0.0; model.parameter_count()];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch) {
            grad_sum.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (_, g) = loss_and_gradient(&model, &samples.features[i], targets[i]);
                for (acc, v) in grad_sum.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().zip(&grad_sum) {
                *p -= step * g;
            }
        }
        let (loss, train_acc) = evaluate(&model, samples, &targets);
        model.history.push(EpochStats { epoch, loss, train_acc });
    }
    Ok(model)
}

/// Per-pixel argmax over the model's classes; ties go to the lowest class id.
/// `legend` maps class ids to the model's class names.
pub fn mlp_predict(model: &Mlp, raster: &MultibandRaster, legend: &BTreeMap<u32, String>) -> Result<LabelRaster> {
    if model.inputs != 4 {
        return Err(Error::invalid(format!("model expects {} inputs, pixels carry 4", model.inputs)));
    }
    let bands = raster.spectral_bands()?;
    let mut by_id: Vec<(u32, usize)> = Vec::with_capacity(model.classes.len());
    for (k, name) in model.classes.iter().enumerate() {
        let id = legend
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(id, _)| *id)
            .ok_or_else(|| Error::invalid(format!("model class `{name}` is missing from the legend")))?;
        by_id.push((id, k));
    }
    by_id.sort();
    let labels = (0..raster.len())
        .map(|p| {
            let x = [bands[0][p] as f64, bands[1][p] as f64, bands[2][p] as f64, bands[3][p] as f64];
            let probs = model.probabilities(&x);
            let mut best = by_id[0];
            for &(id, k) in &by_id[1..] {
                if probs[k] > probs[best.1] {
                    best = (id, k);
                }
            }
            best.0
        })
        .collect();
    LabelRaster::new(raster.width(), raster.height(), labels, legend.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BandRole;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn softmax_sums_to_one() {
        let m = Mlp::seeded(4, 6, names(5), 3);
        let p = m.probabilities(&[0.3, -1.2, 2.0, 0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.loss(&[0.3, -1.2, 2.0, 0.1], 2) >= 0.0);
    }

    #[test]
    fn zero_epochs_keep_initialisation() {
        let mut s = SampleSet::new(names(4));
        s.push(vec![1.0, 2.0, 3.0, 4.0], "a").unwrap();
        s.push(vec![4.0, 3.0, 2.0, 1.0], "b").unwrap();
        let cfg = MlpConfig {
            epochs: 0,
            seed: 11,
            ..MlpConfig::default()
        };
        let m = mlp_train(&s, &cfg).unwrap();
        let init = Mlp::seeded(4, cfg.hidden, vec!["a".into(), "b".into()], 11);
        assert_eq!((m.w1, m.b1, m.w2, m.b2), (init.w1, init.b1, init.w2, init.b2));
    }

    #[test]
    fn zero_input_zero_weights_gradients() {
        let m = Mlp::zeros(4, 3, names(2));
        let (_, g) = loss_and_gradient(&m, &[0.0; 4], 1);
        assert!(g[..12].iter().all(|v| *v == 0.0));
        assert!(mlp_gradient_check(&m, &[0.0; 4], 1) < 1e-4);
    }

    #[test]
    fn corrupted_gradient_detected() {
        let m = Mlp::seeded(4, 5, names(3), 9);
        let x = [0.5, -0.25, 1.5, 0.75];
        assert!(mlp_gradient_check(&m, &x, 0) < 1e-4);
        let err = gradient_check_with(&m, &x, 0, |g| g[7] *= 2.0);
        assert!(err > 0.3, "{err}");
    }

    #[test]
    fn invalid_hyperparameters() {
        let mut s = SampleSet::new(names(4));
        s.push(vec![0.0; 4], "a").unwrap();
        s.push(vec![1.0; 4], "b").unwrap();
        for cfg in [
            MlpConfig { hidden: 0, ..MlpConfig::default() },
            MlpConfig { learning_rate: 0.0, ..MlpConfig::default() },
            MlpConfig { batch: 0, ..MlpConfig::default() },
        ] {
            assert!(mlp_train(&s, &cfg).is_err());
        }
    }

    #[test]
    fn zero_model_predicts_lowest_id() {
        let m = Mlp::zeros(4, 2, vec!["Road".into(), "Water".into()]);
        let r = MultibandRaster::new(
            2,
            2,
            BandRole::SPECTRAL.iter().map(|&b| (b, vec![100.0; 4])).collect(),
        )
        .unwrap();
        let legend = BTreeMap::from([(2, "Water".to_string()), (3, "Road".to_string())]);
        let l = mlp_predict(&m, &r, &legend).unwrap();
        assert!(l.labels().iter().all(|&v| v == 2));
    }

    #[test]
    fn deterministic_training() {
        let mut s = SampleSet::new(names(4));
        for i in 0..40 {
            let v = i as f64;
            s.push(vec![v, 40.0 - v, v * 0.5, 1.0], if i < 20 { "a" } else { "b" }).unwrap();
        }
        let cfg = MlpConfig {
            epochs: 20,
            batch: 8,
            seed: 5,
            ..MlpConfig::default()
        };
        assert_eq!(mlp_train(&s, &cfg).unwrap(), mlp_train(&s, &cfg).unwrap());
    }
}
