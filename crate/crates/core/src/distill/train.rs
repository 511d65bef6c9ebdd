use crate::data::{poisson_batch, LabeledDataset, Provenance};
use crate::distill::cosine::matching_loss_and_grad;
use crate::distill::synthetic::SyntheticSet;
use crate::error::{Error, Result};
use crate::nn::{
    input_grad_tangent, loss_and_grad, per_example_grads, Arch, Network, SgdMomentum,
};
use crate::privacy::{sanitize_mean, AccountantState};
use crate::rng::{stream_rng, stream_seed_hex};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// Outer/inner schedule for a synthetic-set size: roughly one outer
/// iteration per example-per-class, with the product held near 500 network
/// updates. The anchors are the tuned settings for 1, 10, 20 and 50.
pub fn default_schedule(spc: usize) -> (usize, usize) {
    match spc {
        0 | 1 => (1, 1),
        10 => (10, 50),
        20 => (20, 25),
        50 => (50, 10),
        other => {
            let outer = other.clamp(2, 50);
            (outer, (500 / outer).max(1))
        }
    }
}

/// Full configuration for one distillation job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub arch: Arch,
    /// Channel width of the convnet blocks; ignored by other families.
    pub conv_width: usize,
    /// Hidden layer sizes of the mlp; ignored by other families.
    pub mlp_hidden: Vec<usize>,
    /// Synthetic examples per class.
    pub spc: usize,
    /// Model re-initializations.
    pub runs: usize,
    /// Outer iterations per run.
    pub outer: usize,
    /// Network updates on the synthetic set per outer iteration.
    pub inner: usize,
    /// Sanitized batches matched per outer iteration.
    pub batches: usize,
    /// Nominal batch size; the Poisson rate is batch / n.
    pub batch: usize,
    /// Per-example gradient clip bound.
    pub clip: f64,
    /// Noise multiplier. Zero disables noise and accounting; the result
    /// then carries no privacy guarantee.
    pub sigma: f64,
    pub delta: f64,
    /// Refuse to start a job whose planned steps would exceed this.
    pub epsilon_budget: Option<f64>,
    pub synth_lr: f64,
    pub synth_momentum: f64,
    pub theta_lr: f64,
    pub theta_momentum: f64,
    pub master_seed: u64,
}

impl DistillConfig {
    /// Tuned defaults for a family and synthetic-set size. Sigma starts at
    /// zero and must be set (or calibrated) before a private run.
    pub fn new(arch: Arch, spc: usize) -> Self {
        let (outer, inner) = default_schedule(spc);
        DistillConfig {
            arch,
            conv_width: 128,
            mlp_hidden: vec![128, 128],
            spc,
            runs: 1000,
            outer,
            inner,
            batches: 10,
            batch: 256,
            clip: 0.1,
            sigma: 0.0,
            delta: 1e-5,
            epsilon_budget: None,
            synth_lr: 0.1,
            synth_momentum: 0.5,
            theta_lr: 0.01,
            theta_momentum: 0.5,
            master_seed: 0,
        }
    }

    /// Total sanitized-batch releases the schedule will perform.
    pub fn planned_steps(&self) -> u64 {
        self.runs as u64 * self.outer as u64 * self.batches as u64
    }
}

/// Privacy spend after a given run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub run: usize,
    pub steps: u64,
    pub epsilon: f64,
    pub order: u32,
}

/// Everything a distillation job reports besides the synthetic set itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillReport {
    pub config: DistillConfig,
    /// Derived seeds for each named randomness stream, hex encoded.
    pub seed_streams: BTreeMap<String, String>,
    /// Poisson sampling rate actually used.
    pub sampling_rate: f64,
    /// Matching loss of every sanitized-batch step, in execution order.
    pub matching_loss: Vec<f64>,
    /// Privacy spend after each run; empty for non-private jobs.
    pub epsilon_trajectory: Vec<EpsilonPoint>,
    /// Final spend at the configured delta; none for non-private jobs.
    pub final_epsilon: Option<f64>,
    pub accountant: Option<AccountantState>,
    pub steps: u64,
    pub wall_seconds: f64,
}

/// Distills `real` into a small synthetic set by matching sanitized batch
/// gradients, re-initializing the network every run.
///
/// Each sanitized batch costs one subsampled-Gaussian release; nothing else
/// in the loop touches the real features, so the total spend is exactly
/// `runs * outer * batches` accountant steps. The synthetic set and its
/// optimizer state persist across runs.
pub fn psg_train(real: &LabeledDataset, config: &DistillConfig) -> Result<(SyntheticSet, DistillReport)> {
    let started = Instant::now();
    let net = validate(real, config)?;
    let q = config.batch as f64 / real.n() as f64;
    let shapes = net.param_shapes();

    let mut accountant = if config.sigma > 0.0 {
        let mut planned = AccountantState::with_default_orders();
        planned.accumulate(q, config.sigma, config.planned_steps())?;
        let (planned_eps, _) = planned.epsilon(config.delta)?;
        if let Some(budget) = config.epsilon_budget {
            if planned_eps > budget {
                return Err(Error::PrivacyInfeasible(format!(
                    "planned schedule spends epsilon {planned_eps:.4} > budget {budget:.4}"
                )));
            }
        }
        Some(AccountantState::with_default_orders())
    } else {
        None
    };

    let seed = config.master_seed;
    let mut synth = SyntheticSet::init(
        real.feature_shape(),
        real.classes(),
        config.spc,
        &mut stream_rng(seed, "synthetic-init", 0),
    )?;
    let mut sample_rng = stream_rng(seed, "sampling", 0);
    let mut noise_rng = stream_rng(seed, "noise", 0);
    let mut synth_opt = SgdMomentum::new(
        &[synth.features().shape().to_vec()],
        config.synth_momentum as f32,
        0.0,
    );

    let mut losses = Vec::with_capacity(config.planned_steps() as usize);
    let mut trajectory = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let mut params: Vec<Tensor<f32>> =
            net.init_params(&mut stream_rng(seed, "theta-init", run as u64));
        let mut theta_opt = SgdMomentum::new(&shapes, config.theta_momentum as f32, 0.0);
        for t in 0..config.outer {
            for k in 0..config.batches {
                let rows = poisson_batch(real.n(), q, &mut sample_rng)?;
                let (bx, by) = real.batch(&rows);
                let per_example = per_example_grads(&net, &params, &bx, &by)?;
                let sanitized = sanitize_mean(
                    &per_example,
                    &shapes,
                    config.clip,
                    config.sigma,
                    config.batch,
                    &mut noise_rng,
                )?;
                let (_, grad_synth) =
                    loss_and_grad(&net, &params, synth.features(), synth.labels())?;
                let (dist, direction) = matching_loss_and_grad(&sanitized, &grad_synth)?;
                if !dist.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "matching step (run {run}, outer {t}, batch {k})"
                    )));
                }
                losses.push(dist as f64);
                let feature_grad = input_grad_tangent(
                    &net,
                    &params,
                    &direction,
                    synth.features(),
                    synth.labels(),
                )?;
                synth_opt.step(
                    std::slice::from_mut(synth.features_mut()),
                    std::slice::from_ref(&feature_grad),
                    config.synth_lr as f32,
                );
                if let Some(acc) = accountant.as_mut() {
                    acc.accumulate(q, config.sigma, 1)?;
                }
            }
            for j in 0..config.inner {
                let (loss, grads) =
                    loss_and_grad(&net, &params, synth.features(), synth.labels())?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "network update (run {run}, outer {t}, step {j})"
                    )));
                }
                theta_opt.step(&mut params, &grads, config.theta_lr as f32);
            }
        }
        if let Some(acc) = accountant.as_ref() {
            let (epsilon, order) = acc.epsilon(config.delta)?;
            trajectory.push(EpsilonPoint { run: run + 1, steps: acc.steps(), epsilon, order });
        }
        if (run + 1) % 50 == 0 || run + 1 == config.runs {
            log::info!(
                "run {}/{}: matching loss {:.4}{}",
                run + 1,
                config.runs,
                losses.last().copied().unwrap_or(f64::NAN),
                trajectory
                    .last()
                    .map(|p| format!(", epsilon {:.4}", p.epsilon))
                    .unwrap_or_default()
            );
        }
    }

    if !synth.features().is_finite() {
        return Err(Error::NonFinite("distilled features".into()));
    }
    let report = DistillReport {
        config: config.clone(),
        seed_streams: seed_stream_table(seed),
        sampling_rate: q,
        matching_loss: losses,
        final_epsilon: trajectory.last().map(|p| p.epsilon),
        epsilon_trajectory: trajectory,
        steps: accountant.as_ref().map_or(0, |a| a.steps()),
        accountant,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((synth, report))
}

pub(crate) fn seed_stream_table(seed: u64) -> BTreeMap<String, String> {
    ["synthetic-init", "sampling", "noise", "theta-init"]
        .iter()
        .map(|name| (name.to_string(), stream_seed_hex(seed, name, 0)))
        .collect()
}

fn validate(real: &LabeledDataset, config: &DistillConfig) -> Result<Network> {
    if real.provenance() != Provenance::RealTrain {
        return Err(Error::IsolationViolation(format!(
            "distillation consumes real training data, got {:?}",
            real.provenance()
        )));
    }
    if config.runs == 0 || config.outer == 0 || config.batches == 0 {
        return Err(Error::InvalidArgument(
            "runs, outer and batches must all be >= 1".into(),
        ));
    }
    if config.batch == 0 || config.batch > real.n() {
        return Err(Error::InvalidArgument(format!(
            "nominal batch {} must lie in 1..={} (the dataset size)",
            config.batch,
            real.n()
        )));
    }
    if !(config.sigma >= 0.0) || !config.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {}",
            config.sigma
        )));
    }
    if config.sigma > 0.0 && !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {}",
            config.delta
        )));
    }
    config.arch.build(
        real.feature_shape(),
        real.classes(),
        config.conv_width,
        &config.mlp_hidden,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;

    fn tiny_config() -> DistillConfig {
        let mut cfg = DistillConfig::new(Arch::Mlp, 1);
        cfg.mlp_hidden = vec![8];
        cfg.runs = 2;
        cfg.outer = 1;
        cfg.inner = 1;
        cfg.batches = 2;
        cfg.batch = 8;
        cfg.sigma = 1.0;
        cfg.master_seed = 17;
        cfg
    }

    fn tiny_data() -> LabeledDataset {
        gaussian_blobs(2, 20, 4, 0.4, 5, 0, Provenance::RealTrain).unwrap()
    }

    #[test]
    fn smoke_run_accounts_every_batch() {
        let (synth, report) = psg_train(&tiny_data(), &tiny_config()).unwrap();
        assert_eq!(synth.n(), 2);
        assert_eq!(report.steps, 4);
        assert_eq!(report.matching_loss.len(), 4);
        assert_eq!(report.epsilon_trajectory.len(), 2);
        let eps = report.final_epsilon.unwrap();
        assert!(eps.is_finite() && eps > 0.0);
        assert!(report.epsilon_trajectory[0].epsilon < eps);
        assert!(synth.features().is_finite());
        assert_eq!(report.seed_streams.len(), 4);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = tiny_data();
        let cfg = tiny_config();
        let (a, ra) = psg_train(&data, &cfg).unwrap();
        let (b, rb) = psg_train(&data, &cfg).unwrap();
        let bits = |s: &SyntheticSet| {
            s.features().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra.matching_loss, rb.matching_loss);
        let mut cfg2 = cfg;
        cfg2.master_seed = 18;
        let (c, _) = psg_train(&data, &cfg2).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn zero_sigma_reports_no_privacy() {
        let mut cfg = tiny_config();
        cfg.sigma = 0.0;
        let (_, report) = psg_train(&tiny_data(), &cfg).unwrap();
        assert_eq!(report.final_epsilon, None);
        assert!(report.epsilon_trajectory.is_empty());
        assert_eq!(report.steps, 0);
        assert!(report.accountant.is_none());
    }

    #[test]
    fn budget_gate_rejects_overspending_plans() {
        let mut cfg = tiny_config();
        cfg.sigma = 0.5;
        cfg.epsilon_budget = Some(1e-6);
        assert!(matches!(
            psg_train(&tiny_data(), &cfg),
            Err(Error::PrivacyInfeasible(_))
        ));
    }

    #[test]
    fn rejects_wrong_provenance_and_bad_batch() {
        let test_tagged = gaussian_blobs(2, 20, 4, 0.4, 5, 1, Provenance::RealTest).unwrap();
        assert!(matches!(
            psg_train(&test_tagged, &tiny_config()),
            Err(Error::IsolationViolation(_))
        ));
        let mut cfg = tiny_config();
        cfg.batch = 1000;
        assert!(psg_train(&tiny_data(), &cfg).is_err());
    }

    #[test]
    fn schedule_anchors() {
        assert_eq!(default_schedule(1), (1, 1));
        assert_eq!(default_schedule(10), (10, 50));
        assert_eq!(default_schedule(20), (20, 25));
        assert_eq!(default_schedule(50), (50, 10));
        let (t, j) = default_schedule(5);
        assert!(t >= 2 && j >= 1);
    }
}
