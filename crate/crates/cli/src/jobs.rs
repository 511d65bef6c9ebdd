use crate::config::{
    batch_rate, load_data, parse_toml, resolve_continual, resolve_distill, resolve_eval,
    resolve_prior, ContinualJobConfig, EvalJobConfig, RunConfig,
};
use psg_core::continual::run_continual;
use psg_core::data::{export_image_grid, read_container};
use psg_core::distill::{psg_train, psg_train_with_prior, SyntheticSet};
use psg_core::error::{Error, Result};
use psg_core::eval::cross_arch_report;
use psg_core::privacy::{calibrate_sigma, default_orders, AccountantState};
use std::path::{Path, PathBuf};

pub const SYNTHETIC_FILE: &str = "synthetic.psgset";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CONTINUAL_REPORT_FILE: &str = "continual_report.json";

/// Output directory precedence: the flag, then PSG_OUTPUT_ROOT, then the
/// working directory.
pub fn output_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os("PSG_OUTPUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|source| Error::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub fn calibrate(
    epsilon: f64,
    delta: f64,
    q: Option<f64>,
    batch: Option<usize>,
    n: Option<usize>,
    steps: u64,
) -> Result<()> {
    let q = match (q, batch, n) {
        (Some(q), None, None) => q,
        (None, Some(batch), Some(n)) => batch_rate(batch, n)?,
        _ => {
            return Err(Error::InvalidArgument(
                "give either --q or both --batch and --n".into(),
            ))
        }
    };
    let orders = default_orders();
    let sigma = calibrate_sigma(epsilon, delta, q, steps, &orders)?;
    let mut acc = AccountantState::new(orders)?;
    acc.accumulate(q, sigma, steps)?;
    let (achieved, order) = acc.epsilon(delta)?;
    println!("sigma {sigma:.6}");
    println!("epsilon {achieved:.6}");
    println!("order {order}");
    Ok(())
}

pub fn distill(config_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let job: RunConfig = parse_toml(config_path)?;
    let (train, _) = load_data(&job.data)?;
    let cfg = resolve_distill(&job.distill, job.master_seed, train.n())?;
    let dir = output_dir(output)?;

    let (synth, report) = psg_train(&train, &cfg)?;
    let set_path = dir.join(SYNTHETIC_FILE);
    synth.save(&set_path)?;
    write_json(&dir.join(REPORT_FILE), &report)?;

    match report.final_epsilon {
        Some(eps) => println!("epsilon {eps:.6} (delta {:.0e})", cfg.delta),
        None => println!("epsilon none (sigma 0, no privacy guarantee)"),
    }
    println!("steps {}", report.steps);
    println!("wrote {}", set_path.display());
    Ok(())
}

pub fn distill_prior(config_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let job: RunConfig = parse_toml(config_path)?;
    let (train, _) = load_data(&job.data)?;
    let base = resolve_distill(&job.distill, job.master_seed, train.n())?;
    let cfg = resolve_prior(job.generator.as_ref(), base);
    let dir = output_dir(output)?;

    let (synth, _gen_params, report) = psg_train_with_prior(&train, &cfg)?;
    let set_path = dir.join(SYNTHETIC_FILE);
    synth.save(&set_path)?;
    write_json(&dir.join(REPORT_FILE), &report)?;

    match report.distill.final_epsilon {
        Some(eps) => println!("epsilon {eps:.6} (delta {:.0e})", cfg.base.delta),
        None => println!("epsilon none (sigma 0, no privacy guarantee)"),
    }
    println!("steps {}", report.distill.steps);
    println!("wrote {}", set_path.display());
    Ok(())
}

pub fn eval(config_path: &Path, synthetic: &Path, output: Option<PathBuf>) -> Result<()> {
    let job: EvalJobConfig = parse_toml(config_path)?;
    let (_, test) = load_data(&job.data)?;
    let test = test.ok_or_else(|| {
        Error::InvalidArgument("evaluation needs a test split in [data]".into())
    })?;
    let (cfg, archs, repeats) = resolve_eval(&job.eval)?;
    let synth = SyntheticSet::load(synthetic)?.to_dataset()?;
    let dir = output_dir(output)?;

    let report = cross_arch_report(&synth, &test, &archs, repeats, &cfg)?;
    write_json(&dir.join(EVAL_REPORT_FILE), &report)?;

    println!("{:<10} {:>8} {:>8}", "arch", "mean", "std");
    for row in &report.rows {
        println!("{:<10} {:>8.4} {:>8.4}", row.arch.name(), row.mean, row.std);
    }
    Ok(())
}

pub fn continual(config_path: &Path, output: Option<PathBuf>) -> Result<()> {
    let job: ContinualJobConfig = parse_toml(config_path)?;
    let (train, test) = load_data(&job.data)?;
    let test = test.ok_or_else(|| {
        Error::InvalidArgument("staged runs need a test split in [data]".into())
    })?;
    let cfg = resolve_continual(&job, &train)?;
    let dir = output_dir(output)?;

    let report = run_continual(&train, &test, &cfg)?;
    write_json(&dir.join(CONTINUAL_REPORT_FILE), &report)?;

    println!("{:<6} {:>10} {:>10} {:>10}", "stage", "sigma", "epsilon", "average");
    for stage in &report.stages {
        println!(
            "{:<6} {:>10.4} {:>10} {:>10.4}",
            stage.stage,
            stage.sigma,
            fmt_epsilon(stage.epsilon),
            stage.average
        );
    }
    println!("final_average {:.4}", report.final_average);
    println!("overall_epsilon {}", fmt_epsilon(report.overall_epsilon));
    println!("overall_epsilon_sum {}", fmt_epsilon(report.overall_epsilon_sum));
    Ok(())
}

fn fmt_epsilon(eps: Option<f64>) -> String {
    match eps {
        Some(e) => format!("{e:.4}"),
        None => "none".into(),
    }
}

pub fn export_images(container: &Path, out: &Path, cols: Option<usize>) -> Result<()> {
    let (ds, spc) = read_container(container)?;
    let cols = cols.unwrap_or(spc.max(1) as usize);
    export_image_grid(out, ds.features(), cols)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Pretty-prints any report this tool writes, picking the layout by the
/// fields present.
pub fn report(path: &Path) -> Result<()> {
    let value = read_json(path)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: not a report", path.display())))?;

    if obj.contains_key("rows") {
        print_eval(obj)
    } else if obj.contains_key("stages") {
        print_continual(obj)
    } else if obj.contains_key("distill") {
        let inner = obj["distill"].as_object().ok_or_else(|| {
            Error::InvalidArgument(format!("{}: malformed report", path.display()))
        })?;
        println!("generator-prior job");
        print_distill(inner)
    } else if obj.contains_key("matching_loss") {
        print_distill(obj)
    } else {
        Err(Error::InvalidArgument(format!("{}: unrecognized report shape", path.display())))
    }
}

type JsonMap = serde_json::Map<String, serde_json::Value>;

fn print_distill(obj: &JsonMap) -> Result<()> {
    let steps = obj.get("steps").and_then(|v| v.as_u64()).unwrap_or(0);
    let losses = obj
        .get("matching_loss")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|x| x.as_f64()).collect::<Vec<_>>())
        .unwrap_or_default();
    println!("steps {steps}");
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("matching_loss first {first:.6} last {last:.6}");
    }
    match obj.get("final_epsilon").and_then(|v| v.as_f64()) {
        Some(eps) => println!("final_epsilon {eps:.6}"),
        None => println!("final_epsilon none"),
    }
    if let Some(secs) = obj.get("wall_seconds").and_then(|v| v.as_f64()) {
        println!("wall_seconds {secs:.2}");
    }
    Ok(())
}

fn print_eval(obj: &JsonMap) -> Result<()> {
    println!("{:<10} {:>8} {:>8}", "arch", "mean", "std");
    for row in obj.get("rows").and_then(|v| v.as_array()).into_iter().flatten() {
        let arch = row.get("arch").and_then(|v| v.as_str()).unwrap_or("?");
        let mean = row.get("mean").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        let std = row.get("std").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        println!("{arch:<10} {mean:>8.4} {std:>8.4}");
    }
    Ok(())
}

fn print_continual(obj: &JsonMap) -> Result<()> {
    println!("{:<6} {:>10} {:>10} {:>10}", "stage", "sigma", "epsilon", "average");
    for stage in obj.get("stages").and_then(|v| v.as_array()).into_iter().flatten() {
        let idx = stage.get("stage").and_then(|v| v.as_u64()).unwrap_or(0);
        let sigma = stage.get("sigma").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        let eps = fmt_epsilon(stage.get("epsilon").and_then(|v| v.as_f64()));
        let avg = stage.get("average").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        println!("{idx:<6} {sigma:>10.4} {eps:>10} {avg:>10.4}");
    }
    if let Some(avg) = obj.get("final_average").and_then(|v| v.as_f64()) {
        println!("final_average {avg:.4}");
    }
    println!(
        "overall_epsilon {}",
        fmt_epsilon(obj.get("overall_epsilon").and_then(|v| v.as_f64()))
    );
    println!(
        "overall_epsilon_sum {}",
        fmt_epsilon(obj.get("overall_epsilon_sum").and_then(|v| v.as_f64()))
    );
    Ok(())
}
