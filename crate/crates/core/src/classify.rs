//! Classifiers and evaluation for extracted feature vectors.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("feature vectors have mixed dimensions: {0} vs {1}")]
    MixedDimensions(usize, usize),
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("class `{0}` has fewer than 2 samples")]
    TinyClass(String),
    #[error("k must satisfy 1 <= k <= train size, got k={k} with {n} samples")]
    BadK { k: usize, n: usize },
    #[error("empty feature set")]
    Empty,
    #[error("training set has a single class; nothing to discriminate")]
    SingleClass,
    #[error("feature csv line {line}: {message}")]
    BadCsv { line: usize, message: String },
}

/// Fixed-dimension feature vectors with string labels. The label set keeps
/// first-appearance order; ties in classifiers resolve to the earliest
/// label in it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    samples: Vec<(Vec<f64>, String)>,
    label_set: Vec<String>,
    dim: usize,
}

impl FeatureSet {
    pub fn new(samples: Vec<(Vec<f64>, String)>) -> Result<Self, ClassifyError> {
        if samples.is_empty() {
            return Err(ClassifyError::Empty);
        }
        let dim = samples[0].0.len();
        let mut label_set = Vec::new();
        for (v, label) in &samples {
            if v.len() != dim {
                return Err(ClassifyError::MixedDimensions(dim, v.len()));
            }
            if !label_set.contains(label) {
                label_set.push(label.clone());
            }
        }
        Ok(FeatureSet {
            samples,
            label_set,
            dim,
        })
    }

    /// Like [`FeatureSet::new`] but with an explicit label order.
    pub fn with_label_set(
        samples: Vec<(Vec<f64>, String)>,
        label_set: Vec<String>,
    ) -> Result<Self, ClassifyError> {
        let set = Self::new(samples)?;
        for l in &set.label_set {
            if !label_set.contains(l) {
                return Err(ClassifyError::UnknownLabel(l.clone()));
            }
        }
        Ok(FeatureSet {
            label_set,
            ..set
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[(Vec<f64>, String)] {
        &self.samples
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn label_index(&self, label: &str) -> Result<usize, ClassifyError> {
        self.label_set
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ClassifyError::UnknownLabel(label.to_string()))
    }

    /// The subset at `indices`, preserving this set's label order.
    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            label_set: self.label_set.clone(),
            dim: self.dim,
        }
    }

    /// One `v1,...,vD,label` row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (v, label) in &self.samples {
            for x in v {
                write!(out, "{},", x)?;
            }
            writeln!(out, "{}", label)?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, ClassifyError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields: Vec<&str> = line.split(',').collect();
            let label = fields.pop().unwrap().to_string();
            let values: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse()).collect();
            match values {
                Ok(v) => samples.push((v, label)),
                Err(e) => {
                    return Err(ClassifyError::BadCsv {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Self::new(samples)
    }
}

/// Index split of a labeled sample list, stratified by label: each class
/// contributes round(count · test_fraction) samples (clamped so both sides
/// stay nonempty) to the test side. Deterministic in `seed`.
pub fn split_indices(
    labels: &[&str],
    label_set: &[String],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ClassifyError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ClassifyError::BadFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in label_set {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| *l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(ClassifyError::TinyClass(class.clone()));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize)
            .clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified train/test split of a feature set.
pub fn split(
    features: &FeatureSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureSet, FeatureSet), ClassifyError> {
    let labels: Vec<&str> = features.samples.iter().map(|(_, l)| l.as_str()).collect();
    let (train, test) = split_indices(&labels, &features.label_set, test_fraction, seed)?;
    Ok((features.subset(&train), features.subset(&test)))
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the k nearest training samples in Euclidean
/// distance. Distance ties break toward the lower sample index; vote ties
/// toward the earliest label in the label set.
pub fn knn_predict(train: &FeatureSet, query: &[f64], k: usize) -> Result<String, ClassifyError> {
    if train.is_empty() {
        return Err(ClassifyError::Empty);
    }
    if k == 0 || k > train.len() {
        return Err(ClassifyError::BadK { k, n: train.len() });
    }
    let mut order: Vec<(f64, usize)> = train
        .samples
        .iter()
        .enumerate()
        .map(|(i, (v, _))| (sq_distance(v, query), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0usize; train.label_set.len()];
    for (_, i) in order.iter().take(k) {
        let label = &train.samples[*i].1;
        votes[train.label_index(label)?] += 1;
    }
    let mut best = 0usize;
    for j in 1..votes.len() {
        if votes[j] > votes[best] {
            best = j;
        }
    }
    Ok(train.label_set[best].clone())
}

/// A trained multinomial logistic model over standardized features.
#[derive(Debug, Clone)]
pub struct LinearModel {
    label_set: Vec<String>,
    /// K×D weights on standardized inputs.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearModel {
    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Argmax of the affine scores; ties to the earliest label.
    pub fn predict(&self, x: &[f64]) -> String {
        let z = self.standardize(x);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (j, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let score: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + b;
            if score > best_score {
                best = j;
                best_score = score;
            }
        }
        self.label_set[best].clone()
    }
}

/// Mean cross-entropy of the multinomial logistic model on `(xs, ys)`.
pub fn logistic_loss(
    weights: &[Vec<f64>],
    biases: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let scores: Vec<f64> = weights
            .iter()
            .zip(biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logsum = max
            + scores
                .iter()
                .map(|s| (s - max).exp())
                .sum::<f64>()
                .ln();
        total += logsum - scores[y];
    }
    total / xs.len() as f64
}

/// Gradient of [`logistic_loss`] in (weights, biases).
pub fn logistic_gradient(
    weights: &[Vec<f64>],
    biases: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = weights.len();
    let d = weights[0].len();
    let mut gw = vec![vec![0.0; d]; k];
    let mut gb = vec![0.0; k];
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let scores: Vec<f64> = weights
            .iter()
            .zip(biases)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..k {
            let mut g = exps[j] / z;
            if j == y {
                g -= 1.0;
            }
            for (gi, xi) in gw[j].iter_mut().zip(x) {
                *gi += g * xi / n;
            }
            gb[j] += g / n;
        }
    }
    (gw, gb)
}

/// Trains a multinomial logistic classifier by seeded stochastic gradient
/// descent over internally standardized features.
pub fn linear_train(
    train: &FeatureSet,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<LinearModel, ClassifyError> {
    if train.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let distinct = train
        .samples
        .iter()
        .map(|(_, l)| l)
        .collect::<std::collections::HashSet<_>>()
        .len();
    if distinct < 2 {
        return Err(ClassifyError::SingleClass);
    }
    let d = train.dim;
    let n = train.len();
    let k = train.label_set.len();

    let mut mean = vec![0.0; d];
    for (v, _) in &train.samples {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for (v, _) in &train.samples {
        for (s, (x, m)) in scale.iter_mut().zip(v.iter().zip(&mean)) {
            *s += (x - m) * (x - m) / n as f64;
        }
    }
    for s in &mut scale {
        *s = s.sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }

    let xs: Vec<Vec<f64>> = train
        .samples
        .iter()
        .map(|(v, _)| {
            v.iter()
                .zip(mean.iter().zip(&scale))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<usize> = train
        .samples
        .iter()
        .map(|(_, l)| train.label_index(l))
        .collect::<Result<_, _>>()?;

    let mut weights = vec![vec![0.0; d]; k];
    let mut biases = vec![0.0; k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &xs[i];
            let scores: Vec<f64> = weights
                .iter()
                .zip(&biases)
                .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..k {
                let mut g = exps[j] / z;
                if j == ys[i] {
                    g -= 1.0;
                }
                for (w, xi) in weights[j].iter_mut().zip(x) {
                    *w -= learning_rate * g * xi;
                }
                biases[j] -= learning_rate * g;
            }
        }
    }
    Ok(LinearModel {
        label_set: train.label_set.clone(),
        weights,
        biases,
        mean,
        scale,
    })
}

/// Confusion matrix (rows = true, columns = predicted) with accuracy and
/// macro-averaged precision / recall / F1.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label_set: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Scores (true, predicted) label pairs against `label_set`.
pub fn evaluate(
    predictions: &[(String, String)],
    label_set: &[String],
) -> Result<EvalReport, ClassifyError> {
    if predictions.is_empty() {
        return Err(ClassifyError::Empty);
    }
    let k = label_set.len();
    let index = |l: &str| -> Result<usize, ClassifyError> {
        label_set
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| ClassifyError::UnknownLabel(l.to_string()))
    };
    let mut confusion = vec![vec![0usize; k]; k];
    for (truth, pred) in predictions {
        confusion[index(truth)?][index(pred)?] += 1;
    }
    let total: usize = predictions.len();
    let diag: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = diag as f64 / total as f64;

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for j in 0..k {
        let col: usize = (0..k).map(|i| confusion[i][j]).sum();
        let row: usize = confusion[j].iter().sum();
        let p = if col == 0 {
            0.0
        } else {
            confusion[j][j] as f64 / col as f64
        };
        let r = if row == 0 {
            0.0
        } else {
            confusion[j][j] as f64 / row as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        precision_sum += p;
        recall_sum += r;
        f1_sum += f1;
    }
    Ok(EvalReport {
        label_set: label_set.to_vec(),
        confusion,
        accuracy,
        macro_precision: precision_sum / k as f64,
        macro_recall: recall_sum / k as f64,
        macro_f1: f1_sum / k as f64,
    })
}

impl EvalReport {
    /// Human-readable block: confusion matrix then the metric lines.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "confusion matrix (rows = true, columns = predicted)")?;
        write!(out, "{:>12}", "")?;
        for l in &self.label_set {
            write!(out, " {:>10}", l)?;
        }
        writeln!(out)?;
        for (l, row) in self.label_set.iter().zip(&self.confusion) {
            write!(out, "{:>12}", l)?;
            for v in row {
                write!(out, " {:>10}", v)?;
            }
            writeln!(out)?;
        }
        writeln!(out, "accuracy = {}", self.accuracy)?;
        writeln!(out, "macro_precision = {}", self.macro_precision)?;
        writeln!(out, "macro_recall = {}", self.macro_recall)?;
        writeln!(out, "macro_f1 = {}", self.macro_f1)?;
        Ok(())
    }

    /// Machine-readable rows: `metric,value` lines then
    /// `confusion,true,predicted,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "accuracy,{}", self.accuracy)?;
        writeln!(out, "macro_precision,{}", self.macro_precision)?;
        writeln!(out, "macro_recall,{}", self.macro_recall)?;
        writeln!(out, "macro_f1,{}", self.macro_f1)?;
        for (i, row) in self.confusion.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(
                    out,
                    "confusion,{},{},{}",
                    self.label_set[i], self.label_set[j], v
                )?;
            }
        }
        Ok(())
    }
}
