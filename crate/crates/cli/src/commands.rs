//! Subcommand implementations. Each writes its outputs plus the resolved
//! configuration (`config.json`) into its own output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use noisebalance::data::{
    build_longtail, channel_stats, load_dataset, longtail_sizes, save_dataset, save_manifest, synth_generate, Dataset,
    DatasetManifest,
};
use noisebalance::model::{Mlp, ModelConfig};
use noisebalance::norm::NormVariant;
use noisebalance::train::{
    additive_noise_sweep, class_groups, dataset_std, evaluate, grad_probe, load_checkpoint, run_seeds, save_checkpoint,
    train, EpochRecord, EvalReport, GradProbeReport, Metrics, SweepRow,
};
use noisebalance::{Exec, Precision, Scalar};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, SigmaUnits};

pub const TRAIN_FILE: &str = "train.ilsb";
pub const TEST_FILE: &str = "test.ilsb";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_FILE: &str = "final.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const PROBE_FILE: &str = "probe.json";
pub const STATS_FILE: &str = "stats.json";

/// Normalization variants compared by `ablate-norm`, in output order.
pub const ABLATION_VARIANTS: [NormVariant; 3] = [NormVariant::StandardBn, NormVariant::AuxBn, NormVariant::DarBn];

/// Creates `dir`, refusing to reuse a nonempty directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("output path {} exists and is not a directory", dir.display());
        }
        let nonempty = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if nonempty && !force {
            bail!("output directory {} is not empty; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn start(cfg: &RunConfig, out: &Path, force: bool) -> Result<RunConfig> {
    cfg.validate().context("invalid configuration")?;
    prepare_out_dir(out, force)?;
    let resolved = cfg.resolved();
    write(&out.join(CONFIG_FILE), resolved.to_json())?;
    Ok(resolved)
}

/// Train and test splits from a directory written by `gen-data`.
pub fn load_splits(data: &Path) -> Result<(Dataset, Dataset)> {
    let load = |name: &str| {
        let p = data.join(name);
        if !p.exists() {
            bail!("dataset file {} not found", p.display());
        }
        load_dataset(&p).with_context(|| format!("loading {}", p.display()))
    };
    let (train, test) = (load(TRAIN_FILE)?, load(TEST_FILE)?);
    if train.shape() != test.shape() || train.num_classes() != test.num_classes() {
        bail!("train and test splits in {} have different layouts", data.display());
    }
    Ok((train, test))
}

/// Model configuration for `cfg`, sized to the dataset actually used.
pub fn model_config_for(cfg: &RunConfig, data: &Dataset) -> ModelConfig {
    ModelConfig { input_dim: data.shape().pixels(), num_classes: data.num_classes(), ..cfg.model_config() }
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

// ---------------------------------------------------------------- gen-data

pub fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let cfg = start(cfg, out, force)?;
    let spec = cfg.data.synthetic();
    let lt = cfg.data.longtail();
    let sizes = longtail_sizes(&lt)?;
    let (balanced, test) = synth_generate(&spec, &vec![lt.n_max; spec.num_classes], cfg.data.seed)?;
    let train = build_longtail(&balanced, &lt, cfg.data.seed)?;
    debug_assert_eq!(train.class_counts(), sizes.as_slice());
    let spec_json = serde_json::to_value(&cfg.data)?;
    for (d, file) in [(&train, TRAIN_FILE), (&test, TEST_FILE)] {
        let path = out.join(file);
        save_dataset(d, &path)?;
        save_manifest(
            &path,
            &DatasetManifest {
                name: d.name.clone(),
                seed: cfg.data.seed,
                class_counts: d.class_counts().to_vec(),
                spec: spec_json.clone(),
            },
        )?;
    }
    println!(
        "wrote {} train / {} test examples to {} (class sizes {:?})",
        train.len(),
        test.len(),
        out.display(),
        sizes
    );
    Ok(())
}

// ---------------------------------------------------------------- stats

pub fn dataset_summary(d: &Dataset) -> Result<Value> {
    let s = channel_stats(d)?;
    let shape = d.shape();
    Ok(json!({
        "name": d.name,
        "examples": d.len(),
        "shape": [shape.channels, shape.height, shape.width],
        "num_classes": d.num_classes(),
        "class_counts": d.class_counts(),
        "imbalance_ratio": d.imbalance_ratio(),
        "representation_ratios": d.representation_ratios(),
        "channel_mean": s.mean,
        "channel_std": s.std,
    }))
}

/// Summaries of a dataset file or of both splits in a data directory.
pub fn stats(data: &Path, out: Option<&Path>, force: bool) -> Result<()> {
    let value = if data.is_dir() {
        let (train, test) = load_splits(data)?;
        json!({ "train": dataset_summary(&train)?, "test": dataset_summary(&test)? })
    } else {
        if !data.exists() {
            bail!("dataset file {} not found", data.display());
        }
        dataset_summary(&load_dataset(data).with_context(|| format!("loading {}", data.display()))?)?
    };
    let text = serde_json::to_string_pretty(&value)? + "\n";
    match out {
        Some(dir) => {
            prepare_out_dir(dir, force)?;
            write(&dir.join(STATS_FILE), text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- train / eval

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,noise_fraction\n");
    for r in history {
        writeln!(s, "{},{},{},{}", r.epoch, f(r.lr), f(r.train_loss), f(r.noise_fraction)).unwrap();
    }
    s
}

fn eval_json(e: &EvalReport) -> Value {
    json!({
        "overall_accuracy": e.overall_accuracy,
        "minority_group_accuracy": e.minority_group_accuracy(),
        "per_class_accuracy": e.per_class_accuracy,
        "group_accuracy": e.group_accuracy,
        "groups": e.groups,
        "confusion": e.confusion,
        "test_counts": e.test_counts,
    })
}

fn train_typed<T: Scalar>(cfg: &RunConfig, train_set: &Dataset, test_set: &Dataset, out: &Path) -> Result<EvalReport> {
    let mc = model_config_for(cfg, train_set);
    let tc = cfg.train_config();
    let t0 = Instant::now();
    let (model, history) = train::<T>(&mc, &tc, train_set, Exec::default())?;
    let eval = evaluate(&model, test_set, train_set.class_counts(), Exec::default())?;
    let wall = t0.elapsed().as_secs_f64();

    write(&out.join(METRICS_FILE), metrics_csv(&history))?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    let mut fin = eval_json(&eval);
    let obj = fin.as_object_mut().expect("object");
    obj.insert("variant".into(), json!(tc.variant_label()));
    obj.insert("norm_variant".into(), json!(mc.norm_variant));
    obj.insert("seed".into(), json!(tc.master_seed));
    obj.insert("train_counts".into(), json!(train_set.class_counts()));
    obj.insert("config".into(), serde_json::to_value(cfg)?);
    obj.insert("wall_time_s".into(), json!(wall));
    write_json(&out.join(FINAL_FILE), &fin)?;
    Ok(eval)
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<()> {
    let (train_set, test_set) = load_splits(data)?;
    let cfg = start(cfg, out, force)?;
    let eval = match cfg.model.precision {
        Precision::F32 => train_typed::<f32>(&cfg, &train_set, &test_set, out)?,
        Precision::F64 => train_typed::<f64>(&cfg, &train_set, &test_set, out)?,
    };
    println!(
        "{}: overall accuracy {:.4}, group-1 accuracy {}",
        cfg.train_config().variant_label(),
        eval.overall_accuracy,
        eval.minority_group_accuracy().map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn load_model<T: Scalar>(cfg: &RunConfig, data: &Dataset, checkpoint: &Path) -> Result<Mlp<T>> {
    load_checkpoint::<T>(checkpoint, &model_config_for(cfg, data))
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

pub fn eval_cmd(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path, force: bool) -> Result<()> {
    let (train_set, test_set) = load_splits(data)?;
    let cfg = start(cfg, out, force)?;
    let eval = match cfg.model.precision {
        Precision::F32 => evaluate(
            &load_model::<f32>(&cfg, &train_set, checkpoint)?,
            &test_set,
            train_set.class_counts(),
            Exec::default(),
        )?,
        Precision::F64 => evaluate(
            &load_model::<f64>(&cfg, &train_set, checkpoint)?,
            &test_set,
            train_set.class_counts(),
            Exec::default(),
        )?,
    };
    write_json(&out.join(EVAL_FILE), &eval_json(&eval))?;
    println!("overall accuracy {:.4}", eval.overall_accuracy);
    Ok(())
}

// ---------------------------------------------------------------- ablate-norm

/// Mean and standard error (sample std / √n; 0 for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn seeds_typed(cfg: &RunConfig, mc: &ModelConfig, train_set: &Dataset, test_set: &Dataset) -> Result<Vec<Metrics>> {
    let tc = cfg.train_config();
    let seeds = &cfg.experiment.seeds;
    let runs = match mc.precision {
        Precision::F32 => run_seeds::<f32>(mc, &tc, train_set, test_set, seeds, Exec::default()),
        Precision::F64 => run_seeds::<f64>(mc, &tc, train_set, test_set, seeds, Exec::default()),
    };
    Ok(runs.into_iter().collect::<noisebalance::Result<_>>()?)
}

pub fn ablate_norm(cfg: &RunConfig, data: &Path, out: &Path, force: bool, baseline: bool) -> Result<()> {
    let (train_set, test_set) = load_splits(data)?;
    let cfg = start(cfg, out, force)?;
    let mut jobs: Vec<(String, RunConfig)> = ABLATION_VARIANTS
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.model.norm_variant = v;
            (v.name().to_string(), c)
        })
        .collect();
    if baseline {
        let mut c = cfg.clone();
        c.model.norm_variant = NormVariant::StandardBn;
        c.open.delta = 0.0;
        jobs.push(("oversampling".into(), c));
    }

    let mut runs = String::from("variant,seed,overall_acc,minority_group_acc\n");
    let mut summary =
        String::from("variant,mean_overall_acc,stderr_overall_acc,mean_minority_acc,stderr_minority_acc,seed_count\n");
    for (name, c) in &jobs {
        let metrics = seeds_typed(c, &model_config_for(c, &train_set), &train_set, &test_set)?;
        let overall: Vec<f64> = metrics.iter().map(|m| m.eval.overall_accuracy).collect();
        let minority: Vec<f64> = metrics.iter().map(|m| m.eval.minority_group_accuracy().unwrap_or(0.0)).collect();
        for (i, seed) in c.experiment.seeds.iter().enumerate() {
            writeln!(runs, "{name},{seed},{},{}", f(overall[i]), f(minority[i])).unwrap();
        }
        let (mo, so) = mean_stderr(&overall);
        let (mm, sm) = mean_stderr(&minority);
        writeln!(summary, "{name},{},{},{},{},{}", f(mo), f(so), f(mm), f(sm), overall.len()).unwrap();
        println!("{name:>14}: overall {mo:.4} ± {so:.4}, group-1 {mm:.4} ± {sm:.4}");
    }
    write(&out.join(RUNS_FILE), runs)?;
    write(&out.join(ABLATION_FILE), summary)
}

// ---------------------------------------------------------------- sweep-noise

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("sigma,overall_acc,minority_group_acc,seed_count\n");
    for r in rows {
        let sigma = r.sigma.map_or_else(|| "pure".to_string(), f);
        writeln!(s, "{sigma},{},{},{}", f(r.overall_acc), f(r.minority_group_acc), r.seed_count).unwrap();
    }
    s
}

pub fn sweep_noise(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<()> {
    let (train_set, test_set) = load_splits(data)?;
    let cfg = start(cfg, out, force)?;
    let scale = match cfg.experiment.sigma_units {
        SigmaUnits::Absolute => 1.0,
        SigmaUnits::DatasetStd => dataset_std(&train_set)?,
    };
    let sigmas: Vec<f64> = cfg.experiment.sigmas.iter().map(|s| s * scale).collect();
    let mc = model_config_for(&cfg, &train_set);
    let tc = cfg.train_config();
    let seeds = &cfg.experiment.seeds;
    let rows = match mc.precision {
        Precision::F32 => {
            additive_noise_sweep::<f32>(&mc, &tc, &train_set, &test_set, &sigmas, seeds, Exec::default())?
        }
        Precision::F64 => {
            additive_noise_sweep::<f64>(&mc, &tc, &train_set, &test_set, &sigmas, seeds, Exec::default())?
        }
    };
    let csv = sweep_csv(&rows);
    print!("{csv}");
    write(&out.join(SWEEP_FILE), csv)
}

// ---------------------------------------------------------------- probe

/// Mean direction variance over `classes`; `None` if any is missing.
pub fn mean_direction_variance(report: &GradProbeReport, classes: &[usize]) -> Option<f64> {
    let v: Option<Vec<f64>> = classes.iter().map(|&c| report.direction_variance(c)).collect();
    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn report_json(r: &GradProbeReport) -> Value {
    let classes: serde_json::Map<String, Value> =
        r.classes.iter().map(|(c, s)| (c.to_string(), serde_json::to_value(s).expect("serializes"))).collect();
    json!({ "delta": r.delta, "num_batches": r.num_batches, "classes": classes })
}

pub fn probe(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path, force: bool, repeat: bool) -> Result<()> {
    let (train_set, _) = load_splits(data)?;
    let cfg = start(cfg, out, force)?;
    let mut baseline_open = cfg.open.clone();
    baseline_open.delta = 0.0;
    let (batches, seed) = (cfg.experiment.probe_batches, cfg.experiment.probe_seed);
    let (report, baseline) = match cfg.model.precision {
        Precision::F32 => {
            let m = load_model::<f32>(&cfg, &train_set, checkpoint)?;
            (
                grad_probe(&m, &train_set, &cfg.open, batches, seed, repeat)?,
                grad_probe(&m, &train_set, &baseline_open, batches, seed, repeat)?,
            )
        }
        Precision::F64 => {
            let m = load_model::<f64>(&cfg, &train_set, checkpoint)?;
            (
                grad_probe(&m, &train_set, &cfg.open, batches, seed, repeat)?,
                grad_probe(&m, &train_set, &baseline_open, batches, seed, repeat)?,
            )
        }
    };
    let minority = class_groups(train_set.class_counts()).swap_remove(0);
    let dv = mean_direction_variance(&report, &minority);
    let dv0 = mean_direction_variance(&baseline, &minority);
    let ratio = match (dv, dv0) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let mut value = report_json(&report);
    let obj = value.as_object_mut().expect("object");
    obj.insert("baseline".into(), report_json(&baseline));
    obj.insert("minority_classes".into(), json!(minority));
    obj.insert("minority_direction_variance".into(), json!(dv));
    obj.insert("baseline_minority_direction_variance".into(), json!(dv0));
    obj.insert("minority_ratio".into(), json!(ratio));
    write_json(&out.join(PROBE_FILE), &value)?;
    println!(
        "minority direction variance {} (delta {}) vs {} (delta 0), ratio {}",
        opt(dv),
        report.delta,
        opt(dv0),
        opt(ratio)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_of_known_values() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample std √(5/3), over √4
        assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = vec![
            SweepRow { sigma: Some(0.0), overall_acc: 0.5, minority_group_acc: 0.25, seed_count: 2 },
            SweepRow { sigma: None, overall_acc: 0.75, minority_group_acc: 0.5, seed_count: 2 },
        ];
        assert_eq!(
            sweep_csv(&rows),
            "sigma,overall_acc,minority_group_acc,seed_count\n0,0.5,0.25,2\npure,0.75,0.5,2\n"
        );
    }

    #[test]
    fn metrics_csv_layout() {
        let h = vec![EpochRecord { epoch: 0, lr: 0.1, train_loss: 2.5, noise_fraction: 0.0, batches: 3 }];
        assert_eq!(metrics_csv(&h), "epoch,lr,train_loss,noise_fraction\n0,0.1,2.5,0\n");
    }

    #[test]
    fn out_dir_policy() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        prepare_out_dir(&dir, false).unwrap();
        prepare_out_dir(&dir, false).unwrap();
        fs::write(dir.join("x"), "1").unwrap();
        assert!(prepare_out_dir(&dir, false).is_err());
        prepare_out_dir(&dir, true).unwrap();
        let file = tmp.path().join("file");
        fs::write(&file, "1").unwrap();
        assert!(prepare_out_dir(&file, true).is_err());
    }
}
