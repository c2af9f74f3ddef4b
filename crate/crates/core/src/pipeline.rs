//! Sample-to-feature pipelines and the factor-model-vs-PCA comparison.
//!
//! Each recording is fitted independently; the temporal factors of the
//! selected (or fixed) decomposition are pooled into a fixed-length vector
//! per channel, channels concatenated. The comparison runs two feature
//! arms over one identical stratified split.

use thiserror::Error;

use crate::classify::{
    evaluate, knn_predict, linear_train, split_indices, ClassifyError, EvalReport, FeatureSet,
};
use crate::data::{ChannelKind, DataMatrix};
use crate::hdfm::{
    pool_factor_rows, remove_factors, select_factor_count, FactorError, FactorFit,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("sample {0} has no channels")]
    NoChannels(usize),
    #[error("samples disagree on which channels are present")]
    ChannelMismatch,
    #[error("no samples")]
    Empty,
}

/// One labeled recording, as matrices per channel.
#[derive(Debug, Clone)]
pub struct PipelineSample {
    pub label: String,
    pub amplitude: Option<DataMatrix>,
    pub calibrated_phase: Option<DataMatrix>,
}

/// How to turn one channel matrix into factor features.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Select p per sample by Marchenko-Pastur conformance; pad the pooled
    /// features with zeros to feature_cap·pool_length.
    MpSelected {
        p_max: usize,
        spike_margin: f64,
        feature_cap: usize,
    },
    /// Always remove a fixed p (the PCA baseline).
    FixedP { p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub extractor: Extractor,
    pub pool_length: usize,
}

/// Diagnostics of one factor fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub p: usize,
    pub spikes: usize,
    pub ks: Option<f64>,
    pub sigma2_hat: f64,
}

impl FitSummary {
    fn from_fit(fit: &FactorFit) -> Self {
        FitSummary {
            p: fit.p,
            spikes: fit.spike_count(),
            ks: fit.ks_distance(),
            sigma2_hat: fit.sigma2_hat,
        }
    }
}

/// Per-channel selection diagnostics for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDiagnostics {
    pub kind: ChannelKind,
    pub p_used: usize,
    pub converged: bool,
    pub per_p: Vec<FitSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDiagnostics {
    pub label: String,
    pub channels: Vec<ChannelDiagnostics>,
}

fn channel_features(
    matrix: &DataMatrix,
    kind: ChannelKind,
    config: &FeatureConfig,
) -> Result<(Vec<f64>, ChannelDiagnostics), PipelineError> {
    match &config.extractor {
        Extractor::FixedP { p } => {
            let fit = remove_factors(matrix, *p, crate::mp::DEFAULT_SPIKE_MARGIN)?;
            let features = pool_factor_rows(&fit, config.pool_length)?;
            Ok((
                features,
                ChannelDiagnostics {
                    kind,
                    p_used: *p,
                    converged: true,
                    per_p: vec![FitSummary::from_fit(&fit)],
                },
            ))
        }
        Extractor::MpSelected {
            p_max,
            spike_margin,
            feature_cap,
        } => {
            let sel = select_factor_count(matrix, *p_max, *spike_margin)?;
            let fit = sel.fits.last().expect("selection returns at least p = 0");
            let mut features = if sel.p_star == 0 {
                Vec::new()
            } else {
                pool_factor_rows(fit, config.pool_length)?
            };
            features.resize(feature_cap * config.pool_length, 0.0);
            Ok((
                features,
                ChannelDiagnostics {
                    kind,
                    p_used: sel.p_star,
                    converged: sel.converged,
                    per_p: sel.fits.iter().map(FitSummary::from_fit).collect(),
                },
            ))
        }
    }
}

/// Extracts one feature vector per sample (channels concatenated) plus the
/// per-sample fit diagnostics.
pub fn build_features(
    samples: &[PipelineSample],
    config: &FeatureConfig,
) -> Result<(FeatureSet, Vec<SampleDiagnostics>), PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::Empty);
    }
    let shape = (
        samples[0].amplitude.is_some(),
        samples[0].calibrated_phase.is_some(),
    );
    let mut rows = Vec::with_capacity(samples.len());
    let mut diagnostics = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        if (sample.amplitude.is_some(), sample.calibrated_phase.is_some()) != shape {
            return Err(PipelineError::ChannelMismatch);
        }
        let mut vector = Vec::new();
        let mut channels = Vec::new();
        let mut any = false;
        if let Some(m) = &sample.amplitude {
            let (f, d) = channel_features(m, ChannelKind::Amplitude, config)?;
            vector.extend(f);
            channels.push(d);
            any = true;
        }
        if let Some(m) = &sample.calibrated_phase {
            let (f, d) = channel_features(m, ChannelKind::CalibratedPhase, config)?;
            vector.extend(f);
            channels.push(d);
            any = true;
        }
        if !any {
            return Err(PipelineError::NoChannels(i));
        }
        rows.push((vector, sample.label.clone()));
        diagnostics.push(SampleDiagnostics {
            label: sample.label.clone(),
            channels,
        });
    }
    Ok((FeatureSet::new(rows)?, diagnostics))
}

/// The classifier to run on extracted features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierSpec {
    Knn { k: usize },
    Linear { epochs: usize, learning_rate: f64 },
}

/// Trains on `train`, predicts `test`, and scores the predictions.
pub fn run_classifier(
    train: &FeatureSet,
    test: &FeatureSet,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<(EvalReport, Vec<(String, String)>), ClassifyError> {
    let mut predictions = Vec::with_capacity(test.len());
    match spec {
        ClassifierSpec::Knn { k } => {
            for (v, truth) in test.samples() {
                predictions.push((truth.clone(), knn_predict(train, v, *k)?));
            }
        }
        ClassifierSpec::Linear {
            epochs,
            learning_rate,
        } => {
            let model = linear_train(train, *epochs, *learning_rate, seed)?;
            for (v, truth) in test.samples() {
                predictions.push((truth.clone(), model.predict(v)));
            }
        }
    }
    let report = evaluate(&predictions, train.label_set())?;
    Ok((report, predictions))
}

/// One arm of the comparison.
#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub features: FeatureSet,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub report: EvalReport,
    pub predictions: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub selected: ArmOutcome,
    pub baseline: ArmOutcome,
    /// selected accuracy − baseline accuracy.
    pub accuracy_delta: f64,
}

/// Runs the full pipeline twice — M-P-selected features and fixed-p PCA
/// features — on one identical stratified split, and reports both.
pub fn compare_pipelines(
    samples: &[PipelineSample],
    selected_config: &FeatureConfig,
    baseline_config: &FeatureConfig,
    classifier: &ClassifierSpec,
    test_fraction: f64,
    seed: u64,
) -> Result<ComparisonReport, PipelineError> {
    let (features_sel, diag_sel) = build_features(samples, selected_config)?;
    let (features_base, diag_base) = build_features(samples, baseline_config)?;

    let labels: Vec<&str> = samples.iter().map(|s| s.label.as_str()).collect();
    let (train_idx, test_idx) =
        split_indices(&labels, features_sel.label_set(), test_fraction, seed)?;

    let run = |features: &FeatureSet,
               diagnostics: Vec<SampleDiagnostics>|
     -> Result<ArmOutcome, PipelineError> {
        let train = features.subset(&train_idx);
        let test = features.subset(&test_idx);
        let (report, predictions) = run_classifier(&train, &test, classifier, seed)?;
        Ok(ArmOutcome {
            features: features.clone(),
            diagnostics,
            report,
            predictions,
        })
    };
    let selected = run(&features_sel, diag_sel)?;
    let baseline = run(&features_base, diag_base)?;
    let accuracy_delta = selected.report.accuracy - baseline.report.accuracy;
    Ok(ComparisonReport {
        selected,
        baseline,
        accuracy_delta,
    })
}
