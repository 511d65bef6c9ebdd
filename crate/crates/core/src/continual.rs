//! Private class-incremental learning.
//!
//! Classes arrive in stages and each stage's real data is visible only
//! while that stage runs. Two methods are implemented on the same stage
//! plan: sequential noisy fine-tuning of one full-width classifier (which
//! forgets earlier classes, since their data is gone) and distillation with
//! a growing synthetic replay pool (which retains them, since synthetic
//! sets are free to keep). The only artifacts allowed across a stage
//! boundary are model parameters and synthetic sets; raw partition data
//! never crosses.
//!
//! Stage partitions are disjoint, so one example is touched by exactly one
//! stage and the spends compose in parallel: the report carries the max
//! over stages as the primary figure and the sum as the conservative
//! sequential-composition alternative.

use crate::data::{poisson_batch, LabeledDataset, Provenance};
use crate::distill::{psg_train, DistillConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_accuracy, train_downstream, EvalConfig};
use crate::nn::{loss_and_grad, per_example_grads, Network, SgdMomentum};
use crate::privacy::{calibrate_sigma, default_orders, sanitize_mean, AccountantState};
use crate::rng::{derive_u64, stream_rng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinualMethod {
    /// Noisy gradient fine-tuning of one classifier on each stage's real
    /// data in turn, no replay.
    DpSgd,
    /// Distill each stage, keep every distilled set, retrain on the pool.
    PsgReplay,
}

/// Settings for the noisy fine-tuner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub epochs: usize,
    pub batch: usize,
    pub clip: f64,
    pub lr: f64,
}

impl DpSgdConfig {
    pub fn new() -> Self {
        DpSgdConfig { epochs: 10, batch: 256, clip: 1.0, lr: 0.1 }
    }
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        DpSgdConfig::new()
    }
}

/// Full configuration of a staged run. The distill template's sigma, delta
/// and master seed are overridden per stage; the eval settings train the
/// classifier used for scoring (and fix the architecture of the noisy
/// fine-tuner). An infinite per-stage epsilon runs every stage noiseless,
/// which carries no privacy guarantee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub method: ContinualMethod,
    /// Class groups, one per stage, disjoint, covering every class.
    pub stages: Vec<Vec<usize>>,
    pub epsilon_per_stage: f64,
    pub delta: f64,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub dpsgd: DpSgdConfig,
    pub master_seed: u64,
}

/// Evenly sized class groups `[0..k), [k..2k), ...`.
pub fn uniform_stages(classes: usize, stages: usize) -> Result<Vec<Vec<usize>>> {
    if stages == 0 || classes % stages != 0 {
        return Err(Error::InvalidArgument(format!(
            "{classes} classes do not split into {stages} equal stages"
        )));
    }
    let per = classes / stages;
    Ok((0..stages).map(|s| (s * per..(s + 1) * per).collect()).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: usize,
    /// Global classes introduced by this stage.
    pub classes: Vec<usize>,
    pub partition_examples: usize,
    /// Calibrated noise multiplier for this stage's releases; zero for a
    /// noiseless run.
    pub sigma: f64,
    pub steps: u64,
    /// Realized spend of this stage alone; none for a noiseless run.
    pub epsilon: Option<f64>,
    /// Values carried across the stage boundary: synthetic features plus
    /// labels for replay, model parameters for the fine-tuner.
    pub transferred_values: usize,
    /// Accuracy on the test split of each stage seen so far.
    pub accuracy: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualReport {
    pub method: ContinualMethod,
    pub epsilon_per_stage: f64,
    pub delta: f64,
    pub stages: Vec<StageOutcome>,
    pub final_average: f64,
    /// Max over stages; partitions are disjoint so stages compose in
    /// parallel. None when any stage ran noiseless.
    pub overall_epsilon: Option<f64>,
    /// Sum over stages: the conservative reading that ignores disjointness
    /// and composes sequentially.
    pub overall_epsilon_sum: Option<f64>,
    pub wall_seconds: f64,
}

/// Runs the staged protocol and scores every stage on all test splits seen
/// so far.
pub fn run_continual(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ContinualConfig,
) -> Result<ContinualReport> {
    let started = Instant::now();
    if train.provenance() != Provenance::RealTrain {
        return Err(Error::IsolationViolation(format!(
            "staged training consumes real training data, got {:?}",
            train.provenance()
        )));
    }
    if test.provenance() != Provenance::RealTest {
        return Err(Error::IsolationViolation(format!(
            "staged scoring consumes held-out data, got {:?}",
            test.provenance()
        )));
    }
    if !(cfg.epsilon_per_stage > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "per-stage epsilon must be > 0 (infinity for a noiseless run), got {}",
            cfg.epsilon_per_stage
        )));
    }
    let train_parts = train.class_split(&cfg.stages)?;
    let test_parts = test.class_split(&cfg.stages)?;

    // Order of first appearance defines the replay classifier's label
    // space. The fine-tuner keeps the full global space throughout.
    let appearance: Vec<usize> = cfg.stages.iter().flatten().copied().collect();
    let mut global_to_local = vec![usize::MAX; train.classes()];
    for (local, &global) in appearance.iter().enumerate() {
        global_to_local[global] = local;
    }

    let mut carried: Option<(Network, Vec<Tensor<f32>>)> = match cfg.method {
        ContinualMethod::DpSgd => {
            let net = cfg.eval.arch.build(
                train.feature_shape(),
                train.classes(),
                cfg.eval.conv_width,
                &cfg.eval.mlp_hidden,
            )?;
            let params = net.init_params(&mut stream_rng(cfg.master_seed, "dpsgd-init", 0));
            Some((net, params))
        }
        ContinualMethod::PsgReplay => None,
    };

    let mut pool: Vec<LabeledDataset> = Vec::new();
    let mut outcomes: Vec<StageOutcome> = Vec::new();
    for (s, group) in cfg.stages.iter().enumerate() {
        let part = &train_parts[s];
        debug_assert_eq!(part.partition(), Some(s));
        let n_seen: usize = cfg.stages[..=s].iter().map(|g| g.len()).sum();

        let (sigma, steps, epsilon, transferred_values, accuracy) = match cfg.method {
            ContinualMethod::PsgReplay => {
                let ((net, params), sigma, steps, epsilon, transferred) =
                    stage_replay(part, group, s, n_seen, &global_to_local, &mut pool, cfg)?;
                let mut accuracy = Vec::with_capacity(s + 1);
                for seen in test_parts.iter().take(s + 1) {
                    let local = seen.map_labels(n_seen, |g| global_to_local[g])?;
                    accuracy.push(evaluate_accuracy(&net, &params, &local)?);
                }
                (sigma, steps, epsilon, transferred, accuracy)
            }
            ContinualMethod::DpSgd => {
                let (net, params) = carried.as_mut().expect("fine-tuner state exists");
                let (sigma, steps, epsilon) = stage_dpsgd(part, s, net, params, cfg)?;
                let transferred = params.iter().map(Tensor::numel).sum();
                let mut accuracy = Vec::with_capacity(s + 1);
                for seen in test_parts.iter().take(s + 1) {
                    accuracy.push(evaluate_accuracy(net, params, seen)?);
                }
                (sigma, steps, epsilon, transferred, accuracy)
            }
        };

        let average = accuracy.iter().sum::<f64>() / accuracy.len() as f64;
        log::info!(
            "stage {s}: sigma {sigma:.4}, epsilon {epsilon:?}, average accuracy {average:.4}"
        );
        outcomes.push(StageOutcome {
            stage: s,
            classes: group.clone(),
            partition_examples: part.n(),
            sigma,
            steps,
            epsilon,
            transferred_values,
            accuracy,
            average,
        });
    }

    let spends: Option<Vec<f64>> = outcomes.iter().map(|o| o.epsilon).collect();
    Ok(ContinualReport {
        method: cfg.method,
        epsilon_per_stage: cfg.epsilon_per_stage,
        delta: cfg.delta,
        final_average: outcomes.last().map_or(0.0, |o| o.average),
        overall_epsilon: spends.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max)),
        overall_epsilon_sum: spends.as_ref().map(|e| e.iter().sum()),
        stages: outcomes,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

type TrainedNet = (Network, Vec<Tensor<f32>>);

/// Noise multiplier meeting the per-stage budget for the given schedule;
/// zero when the budget is infinite.
fn stage_sigma(cfg: &ContinualConfig, q: f64, steps: u64) -> Result<f64> {
    if !cfg.epsilon_per_stage.is_finite() {
        return Ok(0.0);
    }
    calibrate_sigma(cfg.epsilon_per_stage, cfg.delta, q, steps, &default_orders())
}

fn stage_replay(
    part: &LabeledDataset,
    group: &[usize],
    stage: usize,
    n_seen: usize,
    global_to_local: &[usize],
    pool: &mut Vec<LabeledDataset>,
    cfg: &ContinualConfig,
) -> Result<(TrainedNet, f64, u64, Option<f64>, usize)> {
    let mut distill = cfg.distill.clone();
    if distill.batch > part.n() {
        return Err(Error::InvalidArgument(format!(
            "distill batch {} exceeds stage {stage} partition size {}",
            distill.batch,
            part.n()
        )));
    }
    let q = distill.batch as f64 / part.n() as f64;
    let sigma = stage_sigma(cfg, q, distill.planned_steps())?;
    distill.sigma = sigma;
    distill.delta = cfg.delta;
    distill.epsilon_budget = cfg.epsilon_per_stage.is_finite().then_some(cfg.epsilon_per_stage);
    distill.master_seed = derive_u64(cfg.master_seed, "stage-distill", stage as u64);

    if group.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "stage {stage} introduces {} class; distillation needs at least 2 per stage",
            group.len()
        )));
    }
    // Distill in the stage's own label space, then lift back to global
    // labels before pooling.
    let pos = |g: usize| group.iter().position(|&c| c == g).unwrap();
    let local_real = part.map_labels(group.len(), pos)?;
    let (synth, report) = psg_train(&local_real, &distill)?;
    let global_synth = synth.to_dataset()?.map_labels(global_to_local.len(), |l| group[l])?;
    let transferred = global_synth.features().numel() + global_synth.labels().len();
    pool_push(pool, global_synth)?;

    let merged = LabeledDataset::concat(&pool.iter().collect::<Vec<_>>())?;
    let train_set = merged.map_labels(n_seen, |g| global_to_local[g])?;
    let mut eval_cfg = cfg.eval.clone();
    eval_cfg.seed = derive_u64(cfg.master_seed, "stage-eval", stage as u64);
    let trained = train_downstream(&train_set, &eval_cfg)?;

    Ok((trained, sigma, report.steps, report.final_epsilon, transferred))
}

/// The only writer of the replay pool: refuses anything not synthetic.
fn pool_push(pool: &mut Vec<LabeledDataset>, ds: LabeledDataset) -> Result<()> {
    if ds.provenance() != Provenance::Synthetic {
        return Err(Error::IsolationViolation(format!(
            "replay pool holds synthetic data only, got {:?}",
            ds.provenance()
        )));
    }
    pool.push(ds);
    Ok(())
}

fn stage_dpsgd(
    part: &LabeledDataset,
    stage: usize,
    net: &Network,
    params: &mut Vec<Tensor<f32>>,
    cfg: &ContinualConfig,
) -> Result<(f64, u64, Option<f64>)> {
    if cfg.dpsgd.batch == 0 || cfg.dpsgd.batch > part.n() {
        return Err(Error::InvalidArgument(format!(
            "noisy-trainer batch {} must lie in 1..={} (stage {stage} partition)",
            cfg.dpsgd.batch,
            part.n()
        )));
    }
    let q = cfg.dpsgd.batch as f64 / part.n() as f64;
    let steps_per_epoch = part.n().div_ceil(cfg.dpsgd.batch) as u64;
    let steps = cfg.dpsgd.epochs as u64 * steps_per_epoch;
    let sigma = stage_sigma(cfg, q, steps)?;

    let seed = derive_u64(cfg.master_seed, "stage-dpsgd", stage as u64);
    let accountant = dpsgd_train(part, net, params, &cfg.dpsgd, sigma, seed)?;
    let epsilon =
        if sigma > 0.0 { Some(accountant.epsilon(cfg.delta)?.0) } else { None };
    Ok((sigma, steps, epsilon))
}

/// Noisy minibatch training from the given parameters: every update is a
/// sanitized mean of clipped per-example gradients over a Poisson batch,
/// and with sigma > 0 every update is accounted. The returned accountant
/// holds the full spend of this call; sigma = 0 trains noiselessly and
/// leaves it empty.
pub fn dpsgd_train(
    data: &LabeledDataset,
    net: &Network,
    params: &mut Vec<Tensor<f32>>,
    cfg: &DpSgdConfig,
    sigma: f64,
    seed: u64,
) -> Result<AccountantState> {
    if data.provenance() != Provenance::RealTrain {
        return Err(Error::IsolationViolation(format!(
            "noisy training is for real training data, got {:?}; train plainly on anything else",
            data.provenance()
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noisy training needs a finite sigma >= 0, got {sigma}"
        )));
    }
    if cfg.epochs == 0 || cfg.batch == 0 || cfg.batch > data.n() {
        return Err(Error::InvalidArgument(
            "noisy training needs epochs >= 1 and batch in 1..=n".into(),
        ));
    }
    let q = cfg.batch as f64 / data.n() as f64;
    let shapes = net.param_shapes();
    for (p, s) in params.iter().zip(shapes.iter()) {
        if p.shape() != s.as_slice() {
            return Err(Error::ShapeMismatch {
                what: "fine-tuned parameters".into(),
                expected: s.clone(),
                got: p.shape().to_vec(),
            });
        }
    }
    let mut opt = SgdMomentum::new(&shapes, 0.0, 0.0);
    let mut sample_rng = stream_rng(seed, "dpsgd-sampling", 0);
    let mut noise_rng = stream_rng(seed, "dpsgd-noise", 0);
    let mut accountant = AccountantState::with_default_orders();

    let steps_per_epoch = data.n().div_ceil(cfg.batch);
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let rows = poisson_batch(data.n(), q, &mut sample_rng)?;
            let (bx, by) = data.batch(&rows);
            let per_example = per_example_grads(net, params, &bx, &by)?;
            let sanitized =
                sanitize_mean(&per_example, &shapes, cfg.clip, sigma, cfg.batch, &mut noise_rng)?;
            opt.step(params, &sanitized, cfg.lr as f32);
            if sigma > 0.0 {
                accountant.accumulate(q, sigma, 1)?;
            }
        }
        // The loss on sanitized updates is only a progress signal; guard
        // against divergence without spending extra privacy on it.
        let (loss, _) = loss_and_grad(net, params, data.features(), data.labels())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("noisy training epoch {epoch}")));
        }
    }
    Ok(accountant)
}
