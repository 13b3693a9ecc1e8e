//! Trains ERM, deferred oversampling and OPeN with each normalization
//! variant on the default synthetic long-tailed dataset and prints accuracy.
//!
//! `cargo run --release -p noisebalance-core --example compare -- [seeds] [name filter] [noflip] [contrast=0.12]`

use std::time::Instant;

use noisebalance::data::{build_longtail, longtail_sizes, synth_generate, LongTailSpec, SyntheticSpec};
use noisebalance::model::ModelConfig;
use noisebalance::norm::NormVariant;
use noisebalance::train::{run_experiment, TrainConfig};
use noisebalance::{Exec, Precision};

fn main() -> noisebalance::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let args: Vec<String> = std::env::args().collect();
    let mut spec = SyntheticSpec::default();
    if let Some(c) = args.iter().find_map(|a| a.strip_prefix("contrast=")) {
        spec.prototype_contrast = Some(c.parse().expect("contrast value"));
    }
    let lt = LongTailSpec { num_classes: spec.num_classes, n_max: 500, imbalance_ratio: 100.0 };
    let (balanced, test) = synth_generate(&spec, &vec![lt.n_max; spec.num_classes], 0)?;
    let train_lt = build_longtail(&balanced, &lt, 0)?;
    println!("train sizes {:?}", longtail_sizes(&lt)?);

    let model = |v| ModelConfig {
        input_dim: spec.shape().pixels(),
        hidden_dims: vec![256, 256],
        num_classes: spec.num_classes,
        norm_variant: v,
        precision: Precision::F32,
    };
    let base = TrainConfig { augment_flip: !args.iter().any(|a| a == "noflip"), ..TrainConfig::default() };
    let erm = TrainConfig { defer_epoch: base.epochs, ..base.clone() };
    let mut over = base.clone();
    over.open.delta = 0.0;
    let runs = [
        ("balanced-erm", NormVariant::StandardBn, TrainConfig { defer_epoch: base.epochs, ..base.clone() }),
        ("erm", NormVariant::StandardBn, erm),
        ("oversampling", NormVariant::StandardBn, over),
        ("open+standard", NormVariant::StandardBn, base.clone()),
        ("open+aux", NormVariant::AuxBn, base.clone()),
        ("open+dar", NormVariant::DarBn, base.clone()),
    ];
    let only = std::env::args().nth(2);
    for (name, variant, cfg) in runs {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let (mut overall, mut minority) = (0.0, 0.0);
        let t = Instant::now();
        let train = if name == "balanced-erm" { &balanced } else { &train_lt };
        for seed in 0..seeds {
            let cfg = TrainConfig { master_seed: seed, ..cfg.clone() };
            let out = run_experiment::<f32>(&model(variant), &cfg, train, &test, Exec::default())?;
            overall += out.metrics.eval.overall_accuracy;
            minority += out.metrics.eval.minority_group_accuracy().unwrap_or(0.0);
        }
        let n = seeds as f64;
        println!(
            "{name:>14}: overall {:.4} group1 {:.4} ({:.1}s/run)",
            overall / n,
            minority / n,
            t.elapsed().as_secs_f64() / n
        );
    }
    Ok(())
}
