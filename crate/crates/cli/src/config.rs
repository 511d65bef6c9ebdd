use psg_core::continual::{uniform_stages, ContinualConfig, ContinualMethod, DpSgdConfig};
use psg_core::data::{
    gaussian_blobs, load_csv, load_idx_pair, patterned_images, LabeledDataset, Normalization,
    Provenance,
};
use psg_core::distill::{DistillConfig, PriorConfig};
use psg_core::error::{Error, Result};
use psg_core::eval::EvalConfig;
use psg_core::nn::Arch;
use psg_core::privacy::{calibrate_sigma, default_orders};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Top-level distillation job file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub data: DataConfig,
    pub distill: DistillSection,
    /// Prior settings; only read by the prior variant.
    #[serde(default)]
    pub generator: Option<GeneratorSection>,
}

/// Top-level evaluation job file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJobConfig {
    pub data: DataConfig,
    pub eval: EvalSection,
}

/// Top-level staged-learning job file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualJobConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub method: ContinualMethod,
    /// Uniform stage count; mutually exclusive with `stage_classes`.
    #[serde(default)]
    pub stages: Option<usize>,
    /// Explicit class groups per stage.
    #[serde(default)]
    pub stage_classes: Option<Vec<Vec<usize>>>,
    pub epsilon_per_stage: f64,
    pub delta: f64,
    pub data: DataConfig,
    pub distill: DistillSection,
    pub eval: EvalSection,
    #[serde(default)]
    pub dpsgd: DpSgdSection,
}

/// Where the real data comes from. The toy formats generate procedural
/// datasets so jobs can run without any files on disk.
#[derive(Debug, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        classes: Option<usize>,
        #[serde(default)]
        normalize: bool,
    },
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default)]
        classes: Option<usize>,
        #[serde(default)]
        normalize: bool,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Patterns {
        classes: usize,
        per_class: usize,
        size: usize,
        noise: f64,
        seed: u64,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
}

/// Distillation settings as written in job files. Omitted fields fall back
/// to the tuned defaults for the chosen size.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub arch: Arch,
    pub spc: usize,
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub outer: Option<usize>,
    #[serde(default)]
    pub inner: Option<usize>,
    #[serde(default)]
    pub batches: Option<usize>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub clip: Option<f64>,
    /// Noise multiplier. Exactly one of `sigma` and `epsilon` must be set;
    /// zero means a run with no privacy guarantee.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Privacy target; the noise multiplier is calibrated to meet it over
    /// the planned schedule.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub synth_lr: Option<f64>,
    #[serde(default)]
    pub synth_momentum: Option<f64>,
    #[serde(default)]
    pub theta_lr: Option<f64>,
    #[serde(default)]
    pub theta_momentum: Option<f64>,
    #[serde(default)]
    pub conv_width: Option<usize>,
    #[serde(default)]
    pub mlp_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default)]
    pub latent: Option<usize>,
    #[serde(default)]
    pub base_channels: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub archs: Vec<Arch>,
    #[serde(default)]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub augment: Option<bool>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub conv_width: Option<usize>,
    #[serde(default)]
    pub mlp_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdSection {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub lr: Option<f64>,
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| {
        Error::InvalidArgument(format!("{}: {e}", path.display()))
    })
}

/// Loads the train split (and the test split when the source has one),
/// applying any requested normalization fitted on the train split.
pub fn load_data(cfg: &DataConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    match cfg {
        DataConfig::Idx { train_images, train_labels, test_images, test_labels, classes, normalize } => {
            let train = load_idx_pair(train_images, train_labels, *classes, Provenance::RealTrain)?;
            let test = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    Some(load_idx_pair(ti, tl, Some(train.classes()), Provenance::RealTest)?)
                }
                (None, None) => None,
                _ => {
                    return Err(Error::InvalidArgument(
                        "test_images and test_labels must be given together".into(),
                    ))
                }
            };
            Ok(normalized(train, test, *normalize)?)
        }
        DataConfig::Csv { train, test, classes, normalize } => {
            let train_ds = load_csv(train, *classes, Provenance::RealTrain)?;
            let test_ds = test
                .as_ref()
                .map(|p| load_csv(p, Some(train_ds.classes()), Provenance::RealTest))
                .transpose()?;
            Ok(normalized(train_ds, test_ds, *normalize)?)
        }
        DataConfig::Blobs { classes, per_class, dim, spread, seed, test_per_class } => {
            let train =
                gaussian_blobs(*classes, *per_class, *dim, *spread, *seed, 0, Provenance::RealTrain)?;
            let test = test_per_class
                .map(|tpc| {
                    gaussian_blobs(*classes, tpc, *dim, *spread, *seed, 1, Provenance::RealTest)
                })
                .transpose()?;
            Ok((train, test))
        }
        DataConfig::Patterns { classes, per_class, size, noise, seed, test_per_class } => {
            let train =
                patterned_images(*classes, *per_class, *size, *noise, *seed, 0, Provenance::RealTrain)?;
            let test = test_per_class
                .map(|tpc| {
                    patterned_images(*classes, tpc, *size, *noise, *seed, 1, Provenance::RealTest)
                })
                .transpose()?;
            Ok((train, test))
        }
    }
}

fn normalized(
    train: LabeledDataset,
    test: Option<LabeledDataset>,
    enable: bool,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    if !enable {
        return Ok((train, test));
    }
    let norm = Normalization::fit(train.features());
    let renorm = |ds: LabeledDataset| -> Result<LabeledDataset> {
        let mut features = ds.features().clone();
        norm.apply(&mut features);
        LabeledDataset::new(features, ds.labels().to_vec(), ds.classes(), ds.provenance())
    };
    let train = renorm(train)?;
    let test = test.map(renorm).transpose()?;
    Ok((train, test))
}

/// Turns a distill section into a runnable config, calibrating the noise
/// multiplier when a privacy target is given instead of sigma.
pub fn resolve_distill(
    section: &DistillSection,
    master_seed: u64,
    train_n: usize,
) -> Result<DistillConfig> {
    let mut cfg = base_distill(section, master_seed)?;
    match (section.sigma, section.epsilon) {
        (Some(sigma), None) => {
            cfg.sigma = sigma;
        }
        (None, Some(eps)) => {
            let q = batch_rate(cfg.batch, train_n)?;
            cfg.sigma =
                calibrate_sigma(eps, cfg.delta, q, cfg.planned_steps(), &default_orders())?;
            cfg.epsilon_budget = Some(eps);
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "set exactly one of distill.sigma and distill.epsilon (sigma = 0 for a \
                 run without privacy)"
                    .into(),
            ));
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "distill.sigma and distill.epsilon are mutually exclusive".into(),
            ));
        }
    }
    Ok(cfg)
}

/// Distill section resolution for staged jobs, where sigma is calibrated
/// per stage and must not appear in the file.
pub fn resolve_distill_template(section: &DistillSection, master_seed: u64) -> Result<DistillConfig> {
    if section.sigma.is_some() || section.epsilon.is_some() {
        return Err(Error::InvalidArgument(
            "staged jobs calibrate noise per stage; remove distill.sigma and distill.epsilon"
                .into(),
        ));
    }
    base_distill(section, master_seed)
}

fn base_distill(section: &DistillSection, master_seed: u64) -> Result<DistillConfig> {
    if section.spc == 0 {
        return Err(Error::InvalidArgument("distill.spc must be >= 1".into()));
    }
    let mut cfg = DistillConfig::new(section.arch, section.spc);
    cfg.master_seed = master_seed;
    set(&mut cfg.runs, section.runs);
    set(&mut cfg.outer, section.outer);
    set(&mut cfg.inner, section.inner);
    set(&mut cfg.batches, section.batches);
    set(&mut cfg.batch, section.batch);
    set(&mut cfg.clip, section.clip);
    set(&mut cfg.delta, section.delta);
    set(&mut cfg.synth_lr, section.synth_lr);
    set(&mut cfg.synth_momentum, section.synth_momentum);
    set(&mut cfg.theta_lr, section.theta_lr);
    set(&mut cfg.theta_momentum, section.theta_momentum);
    set(&mut cfg.conv_width, section.conv_width);
    if let Some(hidden) = &section.mlp_hidden {
        cfg.mlp_hidden = hidden.clone();
    }
    Ok(cfg)
}

pub fn resolve_prior(section: Option<&GeneratorSection>, base: DistillConfig) -> PriorConfig {
    let mut cfg = PriorConfig::new(base);
    if let Some(s) = section {
        set(&mut cfg.latent, s.latent);
        set(&mut cfg.base_channels, s.base_channels);
        set(&mut cfg.gen_lr, s.lr);
    }
    cfg
}

/// Base eval settings; the architecture field is overwritten per table row.
pub fn resolve_eval(section: &EvalSection) -> Result<(EvalConfig, Vec<Arch>, usize)> {
    if section.archs.is_empty() {
        return Err(Error::InvalidArgument("eval.archs must name at least one family".into()));
    }
    let mut cfg = EvalConfig::new(section.archs[0]);
    set(&mut cfg.epochs, section.epochs);
    set(&mut cfg.lr, section.lr);
    set(&mut cfg.momentum, section.momentum);
    set(&mut cfg.weight_decay, section.weight_decay);
    set(&mut cfg.batch, section.batch);
    set(&mut cfg.augment, section.augment);
    set(&mut cfg.seed, section.seed);
    set(&mut cfg.conv_width, section.conv_width);
    if let Some(hidden) = &section.mlp_hidden {
        cfg.mlp_hidden = hidden.clone();
    }
    Ok((cfg, section.archs.clone(), section.repeats.unwrap_or(1)))
}

pub fn resolve_continual(
    job: &ContinualJobConfig,
    train: &LabeledDataset,
) -> Result<ContinualConfig> {
    if !(job.epsilon_per_stage > 0.0) || !job.epsilon_per_stage.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon_per_stage must be a positive finite number, got {}",
            job.epsilon_per_stage
        )));
    }
    let stages = match (&job.stages, &job.stage_classes) {
        (Some(count), None) => uniform_stages(train.classes(), *count)?,
        (None, Some(groups)) => groups.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "set exactly one of stages and stage_classes".into(),
            ))
        }
    };
    let distill = resolve_distill_template(&job.distill, job.master_seed)?;
    let (eval, _, _) = resolve_eval(&job.eval)?;
    let mut dpsgd = DpSgdConfig::new();
    set(&mut dpsgd.epochs, job.dpsgd.epochs);
    set(&mut dpsgd.batch, job.dpsgd.batch);
    set(&mut dpsgd.clip, job.dpsgd.clip);
    set(&mut dpsgd.lr, job.dpsgd.lr);
    Ok(ContinualConfig {
        method: job.method,
        stages,
        epsilon_per_stage: job.epsilon_per_stage,
        delta: job.delta,
        distill,
        eval,
        dpsgd,
        master_seed: job.master_seed,
    })
}

pub fn batch_rate(batch: usize, n: usize) -> Result<f64> {
    if batch == 0 || batch > n {
        return Err(Error::InvalidArgument(format!(
            "batch {batch} must lie in 1..={n} (the dataset size)"
        )));
    }
    Ok(batch as f64 / n as f64)
}

fn set<T: Clone>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}
