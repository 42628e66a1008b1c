//! Optimization loop and experiment protocols: adaptive-moment training with
//! step-decayed learning rate, k-fold cross-validation, the γ on/off
//! comparison, the 8-cell component ablation grid, and paired one-tailed
//! t-tests for fold-level significance.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arch::{ConfigError, MsaUnet3p, NetworkConfig};
use crate::data::{augment, collate, kfold_split, AugmentConfig, DataError, SegmentationSample};
use crate::losses::{total_loss, ContrastiveConfig, LossError, LossWeights};
use crate::metrics::{evaluate_sample, AggregateMetrics, Mask, MeanStd, MetricsError, MetricsReport};
use crate::rng::{stream, Domain};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training fold has no samples")]
    EmptyFold,
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (first sample id: {first_id})")]
    NanLoss { epoch: usize, batch: usize, first_id: String },
    #[error("invalid train config: {0}")]
    InvalidConfig(&'static str),
    #[error("paired test needs at least two paired values")]
    DegenerateTest,
    #[error("ablation arms disagree on fold structure")]
    FoldMismatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Epoch fractions at which the learning rate decays.
    pub lr_milestones: Vec<f64>,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub contrastive: ContrastiveConfig,
    pub augment: AugmentConfig,
    /// Train with the contrastive terms (γ as configured); off forces γ=0.
    pub use_spcl: bool,
    /// Route skip connections through attention fusion.
    pub use_cafm: bool,
    /// Use the dilated multi-scale bottleneck.
    pub use_msd: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 5,
            lr: 1e-4,
            lr_decay_factor: 0.1,
            lr_milestones: vec![0.6, 0.8],
            seed: 0,
            loss_weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
            augment: AugmentConfig::default(),
            use_spcl: true,
            use_cafm: true,
            use_msd: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be positive and finite"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(TrainError::InvalidConfig("lr_decay_factor must be in (0, 1]"));
        }
        let mut prev = 0.0;
        for &m in &self.lr_milestones {
            if m <= prev || m >= 1.0 {
                return Err(TrainError::InvalidConfig(
                    "lr_milestones must be strictly increasing within (0, 1)",
                ));
            }
            prev = m;
        }
        Ok(())
    }

    /// Milestone epoch indices: `floor(fraction * epochs)`.
    pub fn milestone_epochs(&self) -> Vec<usize> {
        self.lr_milestones
            .iter()
            .map(|f| (f * self.epochs as f64).floor() as usize)
            .collect()
    }

    /// Piecewise-constant learning rate: `lr * factor^(milestones passed)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestone_epochs().iter().filter(|&&m| epoch >= m).count() as i32;
        if self.lr_decay_factor == 0.1 {
            // Dividing by an exact power of ten keeps decimal learning
            // rates exact; multiplying by the inexact 0.1 would drift.
            self.lr / 10f64.powi(passed)
        } else {
            self.lr * self.lr_decay_factor.powi(passed)
        }
    }

    /// Loss weights actually used: disabling the contrastive path zeroes γ.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        if !self.use_spcl {
            w.gamma = 0.0;
        }
        w
    }

    /// Network config with this run's ablation flags applied.
    pub fn apply_flags(&self, base: &NetworkConfig) -> NetworkConfig {
        let mut cfg = *base;
        cfg.use_cafm = self.use_cafm;
        cfg.use_msd = self.use_msd;
        cfg
    }
}

/// Adaptive moment estimation with bias correction; weight decay is zero.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(param_sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over `(value, grad)` tensor pairs, in registration order.
    pub fn step(&mut self, params: &mut [(String, &mut crate::nn::Param<f32>)], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((_, p), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let grads = p.grad.data();
            debug_assert_eq!(grads.len(), m.len());
            for i in 0..m.len() {
                let g = grads[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                let w = p.value.data_mut();
                w[i] -= update as f32;
            }
        }
    }
}

/// Per-epoch mean loss components over training batches.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub bce: f64,
    pub dice: f64,
    pub sce: f64,
    pub pcl: f64,
    pub total: f64,
    /// Batches where the supervised contrastive term was skipped.
    pub sce_skipped: usize,
    /// Batches where the prototypical contrastive term was skipped.
    pub pcl_skipped: usize,
    pub batches: usize,
    pub val_dice: Option<f64>,
}

/// Everything recorded about one trained fold.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub epoch_logs: Vec<EpochLog>,
    /// Per-sample validation metrics of the retained (best) checkpoint.
    pub val_report: MetricsReport,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub wall_secs: f64,
    pub checkpoint_path: Option<String>,
}

/// A trained fold: its record plus the model at the retained checkpoint.
pub struct FoldOutcome {
    pub record: RunRecord,
    pub model: MsaUnet3p<f32>,
}

/// Logits to probabilities.
pub fn sigmoid_probs(logits: &Tensor<f32>) -> Tensor<f32> {
    logits.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Threshold a model's predictions for every sample and score them.
pub fn evaluate_model(
    model: &mut MsaUnet3p<f32>,
    samples: &[&SegmentationSample],
    batch_size: usize,
    threshold: f64,
) -> Result<MetricsReport, TrainError> {
    let mut report = MetricsReport::default();
    let mut index = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let (images, _) = collate(chunk);
        let out = model.forward(&images, false)?;
        let probs = sigmoid_probs(&out.logits);
        for (b, sample) in chunk.iter().enumerate() {
            let pred = Mask::from_probs(&probs, b, threshold);
            report.push(evaluate_sample(index, &pred, &sample.mask)?);
            index += 1;
        }
    }
    Ok(report)
}

fn snapshot_params(model: &mut MsaUnet3p<f32>) -> Vec<Tensor<f32>> {
    model.named_params().iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore_params(model: &mut MsaUnet3p<f32>, snapshot: &[Tensor<f32>]) {
    for ((_, p), saved) in model.named_params().iter_mut().zip(snapshot.iter()) {
        p.value = saved.clone();
    }
}

/// Train one fold to completion, retaining the best-validation-Dice weights.
pub fn train_fold(
    model_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    train: &[&SegmentationSample],
    val: &[&SegmentationSample],
) -> Result<FoldOutcome, TrainError> {
    train_cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyFold);
    }
    let started = Instant::now();
    let net_cfg = train_cfg.apply_flags(model_cfg);
    let weights = train_cfg.effective_weights();
    let mut init_rng = stream(train_cfg.seed, Domain::Init, 0);
    let mut model = MsaUnet3p::<f32>::new(net_cfg, &mut init_rng)?;
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, p)| p.value.data().len()).collect();
    let mut adam = Adam::new(&sizes);

    let mut epoch_logs = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;

    for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut order_rng = stream(train_cfg.seed, Domain::DataOrder, epoch as u64);
            order.shuffle(&mut order_rng);
        }
        let mut aug_rng = stream(train_cfg.seed, Domain::Augment, epoch as u64);
        let mut loss_rng = stream(train_cfg.seed, Domain::LossSubsample, epoch as u64);

        let mut sums = [0.0f64; 5];
        let (mut sce_skipped, mut pcl_skipped, mut batches) = (0usize, 0usize, 0usize);
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let augmented: Vec<SegmentationSample> = chunk
                .iter()
                .map(|&i| augment(train[i], &train_cfg.augment, &mut aug_rng))
                .collect();
            let refs: Vec<&SegmentationSample> = augmented.iter().collect();
            let (images, masks) = collate(&refs);
            let out = model.forward(&images, true)?;
            let result = total_loss(
                &out.logits,
                &masks,
                &out.embeddings,
                &weights,
                &train_cfg.contrastive,
                &mut loss_rng,
            )?;
            let b = &result.breakdown;
            if !b.total.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    batch: batch_idx,
                    first_id: augmented[0].id.clone(),
                });
            }
            model.zero_grad();
            model.backward(&result.grad_logits, &result.grad_embeddings);
            let mut params = model.named_params();
            adam.step(&mut params, lr);

            sums[0] += b.bce as f64;
            sums[1] += b.dice as f64;
            sums[2] += b.sce as f64;
            sums[3] += b.pcl as f64;
            sums[4] += b.total as f64;
            sce_skipped += usize::from(b.sce_skipped);
            pcl_skipped += usize::from(b.pcl_skipped);
            batches += 1;
        }

        let val_dice = if val.is_empty() {
            None
        } else {
            let report = evaluate_model(&mut model, val, train_cfg.batch_size, 0.5)?;
            Some(report.aggregate().dice.mean)
        };
        if let Some(d) = val_dice {
            if best.as_ref().map_or(true, |(bd, _, _)| d > *bd) {
                best = Some((d, epoch, snapshot_params(&mut model)));
            }
        }

        let n = batches as f64;
        epoch_logs.push(EpochLog {
            epoch,
            lr,
            bce: sums[0] / n,
            dice: sums[1] / n,
            sce: sums[2] / n,
            pcl: sums[3] / n,
            total: sums[4] / n,
            sce_skipped,
            pcl_skipped,
            batches,
            val_dice,
        });
    }

    let (best_val_dice, best_epoch) = match &best {
        Some((d, e, snapshot)) => {
            let (d, e) = (*d, *e);
            restore_params(&mut model, snapshot);
            (Some(d), e)
        }
        None => (None, train_cfg.epochs.saturating_sub(1)),
    };
    let val_report = if val.is_empty() {
        MetricsReport::default()
    } else {
        evaluate_model(&mut model, val, train_cfg.batch_size, 0.5)?
    };

    let record = RunRecord {
        network: net_cfg,
        train: train_cfg.clone(),
        epoch_logs,
        val_report,
        best_epoch,
        best_val_dice,
        wall_secs: started.elapsed().as_secs_f64(),
        checkpoint_path: None,
    };
    Ok(FoldOutcome { record, model })
}

/// Fold-level metric means (boundary metrics `None` when every sample of the
/// fold was excluded).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub dice: f64,
    pub recall: f64,
    pub f1: f64,
    pub asd: Option<f64>,
    pub acd: Option<f64>,
}

impl FoldSummary {
    fn from_report(fold: usize, report: &MetricsReport) -> Self {
        let agg = report.aggregate();
        let opt = |m: MeanStd| if m.count > 0 { Some(m.mean) } else { None };
        Self {
            fold,
            dice: agg.dice.mean,
            recall: agg.recall.mean,
            f1: agg.f1.mean,
            asd: opt(agg.asd),
            acd: opt(agg.acd),
        }
    }
}

fn aggregate_folds(folds: &[FoldSummary]) -> AggregateMetrics {
    let collect = |f: &dyn Fn(&FoldSummary) -> Option<f64>| -> Vec<f64> {
        folds.iter().filter_map(|s| f(s)).collect()
    };
    AggregateMetrics {
        dice: MeanStd::from_values(&collect(&|s| Some(s.dice))),
        recall: MeanStd::from_values(&collect(&|s| Some(s.recall))),
        f1: MeanStd::from_values(&collect(&|s| Some(s.f1))),
        asd: MeanStd::from_values(&collect(&|s| s.asd)),
        acd: MeanStd::from_values(&collect(&|s| s.acd)),
    }
}

/// Result of k-fold cross-validation under one configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValOutcome {
    pub records: Vec<RunRecord>,
    pub fold_summaries: Vec<FoldSummary>,
    /// Mean ± std over fold-level values.
    pub aggregate: AggregateMetrics,
    /// Per-fold summaries on a held-out test set, when one was supplied.
    pub test_summaries: Option<Vec<FoldSummary>>,
    pub test_aggregate: Option<AggregateMetrics>,
}

/// Train and evaluate each of `k` folds with shared seeds.
pub fn cross_validate(
    model_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    dataset: &[SegmentationSample],
    k: usize,
    test: Option<&[SegmentationSample]>,
) -> Result<CrossValOutcome, TrainError> {
    let folds = kfold_split(dataset.len(), k, train_cfg.seed)?;
    let mut records = Vec::with_capacity(k);
    let mut fold_summaries = Vec::with_capacity(k);
    let mut test_summaries: Option<Vec<FoldSummary>> = test.map(|_| Vec::with_capacity(k));
    for (fold, (train_idx, val_idx)) in folds.iter().enumerate() {
        let train: Vec<&SegmentationSample> = train_idx.iter().map(|&i| &dataset[i]).collect();
        let val: Vec<&SegmentationSample> = val_idx.iter().map(|&i| &dataset[i]).collect();
        let mut outcome = train_fold(model_cfg, train_cfg, &train, &val)?;
        fold_summaries.push(FoldSummary::from_report(fold, &outcome.record.val_report));
        if let (Some(test_set), Some(list)) = (test, test_summaries.as_mut()) {
            let refs: Vec<&SegmentationSample> = test_set.iter().collect();
            let report =
                evaluate_model(&mut outcome.model, &refs, train_cfg.batch_size, 0.5)?;
            list.push(FoldSummary::from_report(fold, &report));
        }
        records.push(outcome.record);
    }
    let aggregate = aggregate_folds(&fold_summaries);
    let test_aggregate = test_summaries.as_ref().map(|s| aggregate_folds(s));
    Ok(CrossValOutcome { records, fold_summaries, aggregate, test_summaries, test_aggregate })
}

/// Closed-form paired one-tailed t-test on difference scores.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// One-tailed test of `mean(deltas) > 0`; deltas must be oriented so that
/// positive means improvement.
pub fn paired_t_one_tailed(deltas: &[f64]) -> Result<TTest, TrainError> {
    let n = deltas.len();
    if n < 2 {
        return Err(TrainError::DegenerateTest);
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    if sd == 0.0 {
        let (t, p) = if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(TTest { t, p, df });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid dof");
    let p = 1.0 - dist.cdf(t);
    Ok(TTest { t, p, df })
}

/// Four-threshold significance marker; the 0.1/0.2 levels are weak evidence.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "∇∇"
    } else if p < 0.05 {
        "∇"
    } else if p < 0.1 {
        "◇"
    } else if p < 0.2 {
        "◇◇"
    } else {
        ""
    }
}

/// One metric's row of the γ comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaRow {
    pub metric: String,
    pub baseline: MeanStd,
    pub with_spcl: MeanStd,
    /// Mean improvement, oriented so positive favors the γ=1 arm.
    pub delta: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub marker: String,
}

/// Paired γ=0 vs γ=1 comparison over shared folds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaAblation {
    pub baseline: CrossValOutcome,
    pub with_spcl: CrossValOutcome,
    pub rows: Vec<GammaRow>,
}

fn paired_row(
    metric: &str,
    a: &[FoldSummary],
    b: &[FoldSummary],
    value: &dyn Fn(&FoldSummary) -> Option<f64>,
    higher_is_better: bool,
) -> Result<GammaRow, TrainError> {
    let a_vals: Vec<f64> = a.iter().filter_map(|s| value(s)).collect();
    let b_vals: Vec<f64> = b.iter().filter_map(|s| value(s)).collect();
    // Pair per fold; both arms must define the metric on the same fold.
    let deltas: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .filter_map(|(fa, fb)| match (value(fa), value(fb)) {
            (Some(va), Some(vb)) => Some(if higher_is_better { vb - va } else { va - vb }),
            _ => None,
        })
        .collect();
    let test = if deltas.len() >= 2 { Some(paired_t_one_tailed(&deltas)?) } else { None };
    Ok(GammaRow {
        metric: metric.to_string(),
        baseline: MeanStd::from_values(&a_vals),
        with_spcl: MeanStd::from_values(&b_vals),
        delta: if deltas.is_empty() {
            None
        } else {
            Some(deltas.iter().sum::<f64>() / deltas.len() as f64)
        },
        t: test.map(|t| t.t),
        p: test.map(|t| t.p),
        marker: test.map_or(String::new(), |t| significance_marker(t.p).to_string()),
    })
}

/// Train both γ arms on identical folds/seeds and compare per metric.
pub fn gamma_ablation(
    model_cfg: &NetworkConfig,
    base_cfg: &TrainConfig,
    dataset: &[SegmentationSample],
    k: usize,
) -> Result<GammaAblation, TrainError> {
    let mut arm0 = base_cfg.clone();
    arm0.use_spcl = false;
    arm0.loss_weights.gamma = 0.0;
    let mut arm1 = base_cfg.clone();
    arm1.use_spcl = true;
    arm1.loss_weights.gamma = 1.0;

    let baseline = cross_validate(model_cfg, &arm0, dataset, k, None)?;
    let with_spcl = cross_validate(model_cfg, &arm1, dataset, k, None)?;
    if baseline.fold_summaries.len() != with_spcl.fold_summaries.len() {
        return Err(TrainError::FoldMismatch);
    }
    for (a, b) in baseline.fold_summaries.iter().zip(with_spcl.fold_summaries.iter()) {
        if a.fold != b.fold {
            return Err(TrainError::FoldMismatch);
        }
    }

    let a = &baseline.fold_summaries;
    let b = &with_spcl.fold_summaries;
    let rows = vec![
        paired_row("recall", a, b, &|s| Some(s.recall), true)?,
        paired_row("f1", a, b, &|s| Some(s.f1), true)?,
        paired_row("dice", a, b, &|s| Some(s.dice), true)?,
        paired_row("asd", a, b, &|s| s.asd, false)?,
        paired_row("acd", a, b, &|s| s.acd, false)?,
    ];
    Ok(GammaAblation { baseline, with_spcl, rows })
}

/// One configuration cell of the component ablation grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_spcl: bool,
    pub use_cafm: bool,
    pub use_msd: bool,
    pub param_count: usize,
    pub aggregate: AggregateMetrics,
    pub fold_summaries: Vec<FoldSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentAblation {
    pub rows: Vec<AblationRow>,
}

/// The full {SPCL}×{CAFM}×{MSD} grid, eight cells, shared seeds and folds.
/// Row 1 has every flag off; row 8 has every flag on; the SPCL flag varies
/// fastest.
pub fn component_ablation(
    model_cfg: &NetworkConfig,
    base_cfg: &TrainConfig,
    dataset: &[SegmentationSample],
    k: usize,
) -> Result<ComponentAblation, TrainError> {
    let mut rows = Vec::with_capacity(8);
    for use_msd in [false, true] {
        for use_cafm in [false, true] {
            for use_spcl in [false, true] {
                let mut cfg = base_cfg.clone();
                cfg.use_spcl = use_spcl;
                cfg.use_cafm = use_cafm;
                cfg.use_msd = use_msd;
                let outcome = cross_validate(model_cfg, &cfg, dataset, k, None)?;
                let net_cfg = cfg.apply_flags(model_cfg);
                let mut probe = MsaUnet3p::<f32>::new(net_cfg, &mut stream(cfg.seed, Domain::Init, 0))?;
                rows.push(AblationRow {
                    use_spcl,
                    use_cafm,
                    use_msd,
                    param_count: probe.param_count(),
                    aggregate: outcome.aggregate,
                    fold_summaries: outcome.fold_summaries,
                });
            }
        }
    }
    Ok(ComponentAblation { rows })
}
