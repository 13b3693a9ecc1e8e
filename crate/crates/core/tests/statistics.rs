//! Statistical checks of the sampler and the data statistics against
//! independent estimates.

use noisebalance::data::{channel_stats, Dataset, ImageShape};
use noisebalance::rng;
use noisebalance::sampler::{
    apply_open, replacement_probability, sample_noise_image, sample_noise_raw, BalancedLoader, OpenConfig, OpenMode,
};
use rand::Rng;

/// Two-class dataset with class sizes `counts`, single channel.
fn dataset(counts: &[usize], pixels: usize) -> Dataset {
    let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| vec![c; n]).collect();
    let images = (0..labels.len() * pixels).map(|k| ((k * 37) % 101) as f32 / 100.0).collect();
    Dataset::new("s", ImageShape::new(1, 1, pixels), counts.len(), images, labels).unwrap()
}

#[test]
fn replacement_frequency_matches_probability() {
    // ρ = 0.1, δ = 1/3 → p = 0.3
    let d = dataset(&[100, 10], 1);
    let stats = channel_stats(&d).unwrap();
    let cfg = OpenConfig { batch_size: 1000, ..Default::default() };
    let p = replacement_probability(0.1, cfg.delta).unwrap();
    assert!((p - 0.3).abs() < 1e-15);
    let mut r = rng::stream(7, rng::NOISE_IMAGES);
    let (mut hits, mut total) = (0usize, 0usize);
    while total < 100_000 {
        let images = noisebalance::Tensor::filled(&[1000, 1, 1, 1], 0.5f32);
        let batch = apply_open(images, vec![1; 1000], &d, &stats, &cfg, &mut r).unwrap();
        hits += batch.noise_mask.noise_count();
        total += 1000;
    }
    let freq = hits as f64 / total as f64;
    println!("replacement frequency {freq:.4}");
    assert!((freq - 0.3).abs() <= 0.01, "{freq}");
}

#[test]
fn fixed_ratio_mode_ignores_class_size() {
    let d = dataset(&[100, 10], 1);
    let stats = channel_stats(&d).unwrap();
    let cfg =
        OpenConfig { mode: OpenMode::FixedRatio, fixed_noise_fraction: 0.2, batch_size: 1000, ..Default::default() };
    let mut r = rng::stream(8, rng::NOISE_IMAGES);
    let mut hits = 0;
    for _ in 0..50 {
        let images = noisebalance::Tensor::filled(&[1000, 1, 1, 1], 0.5f32);
        hits += apply_open(images, vec![0; 1000], &d, &stats, &cfg, &mut r).unwrap().noise_mask.noise_count();
    }
    let freq = hits as f64 / 50_000.0;
    // 5σ band for a Bernoulli(0.2) mean over 5·10⁴ draws
    assert!((freq - 0.2).abs() <= 5.0 * (0.2f64 * 0.8 / 50_000.0).sqrt(), "{freq}");
}

#[test]
fn noise_pixels_follow_channel_stats() {
    let stats = noisebalance::data::ChannelStats { mean: vec![0.45, 0.3], std: vec![0.2, 0.05] };
    let shape = ImageShape::new(2, 10, 10);
    let mut r = rng::stream(3, rng::NOISE_IMAGES);
    let mut sums = [[0.0f64; 2]; 2];
    let draws = 10_000; // 10⁶ pixels per channel
    for _ in 0..draws {
        let raw = sample_noise_raw(&stats, shape, &mut r);
        for (l, chan) in raw.chunks(shape.plane()).enumerate() {
            for &v in chan {
                sums[l][0] += v;
                sums[l][1] += v * v;
            }
        }
    }
    for (l, [s, ss]) in sums.iter().enumerate() {
        let n = (draws * shape.plane()) as f64;
        let mean = s / n;
        let std = (ss / n - mean * mean).sqrt();
        println!("channel {l}: mean {mean:.5} std {std:.5}");
        assert!((mean - stats.mean[l]).abs() <= 1e-3);
        assert!((std - stats.std[l]).abs() <= 1e-3);
    }
    for _ in 0..1000 {
        assert!(sample_noise_image(&stats, shape, &mut r).iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // clamping matters when the distribution straddles the bounds
    let wide = noisebalance::data::ChannelStats { mean: vec![0.5, 0.0], std: vec![2.0, 1.0] };
    let img = sample_noise_image(&wide, shape, &mut r);
    assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(img.contains(&0.0) && img.contains(&1.0));
}

#[test]
fn balanced_loader_is_class_uniform() {
    let d = dataset(&[500, 50, 5, 1], 1);
    let loader = BalancedLoader::new(&d).unwrap();
    assert_eq!(loader.epoch_len(128), (4 * 500usize).div_ceil(128));
    let mut r = rng::stream(4, rng::BALANCED);
    let n = 200_000;
    let mut per_class = [0usize; 4];
    let mut per_index = vec![0usize; d.len()];
    for i in loader.sample_indices(n, &mut r) {
        per_class[d.labels()[i]] += 1;
        per_index[i] += 1;
    }
    let sd = (n as f64 * 0.25 * 0.75).sqrt();
    for (c, &k) in per_class.iter().enumerate() {
        assert!((k as f64 - n as f64 / 4.0).abs() <= 5.0 * sd, "class {c}: {k}");
    }
    // within class 2 (5 members) every member is equally likely
    let members: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == 2).collect();
    let expect = per_class[2] as f64 / 5.0;
    let sd = (per_class[2] as f64 * 0.2 * 0.8).sqrt();
    for i in members {
        assert!((per_index[i] as f64 - expect).abs() <= 5.0 * sd);
    }
}

#[test]
fn channel_stats_match_two_pass_oracle() {
    let mut r = rng::stream(11, rng::PROBE);
    for trial in 0..5 {
        let shape = ImageShape::new(1 + trial % 3, 4, 3);
        let n = 50 + 17 * trial;
        let images: Vec<f32> = (0..n * shape.pixels()).map(|_| r.random::<f32>()).collect();
        let d = Dataset::new("r", shape, 1, images.clone(), vec![0; n]).unwrap();
        let got = channel_stats(&d).unwrap();
        for l in 0..shape.channels {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| {
                    let start = i * shape.pixels() + l * shape.plane();
                    images[start..start + shape.plane()].iter().map(|&v| v as f64)
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((got.mean[l] - mean).abs() <= 1e-12);
            assert!((got.std[l] - var.sqrt()).abs() <= 1e-12);
        }
    }
}
