use std::collections::HashSet;

use dcmatch::data::{sample_episode, sample_episode_from, synth_generate, FeatureBundle, SyntheticConfig};
use dcmatch::Error;
use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundle(seed: u64) -> FeatureBundle {
    synth_generate(&SyntheticConfig {
        classes: 20,
        novel_classes: 5,
        videos_per_class: 6,
        ..SyntheticConfig::scenario_b(seed)
    })
    .unwrap()
}

#[test]
fn episode_sizes() {
    let b = bundle(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let e = sample_episode(&b, 5, 1, 1, &mut rng).unwrap();
    assert_eq!(e.support_videos().count(), 5);
    assert_eq!(e.queries.len(), 5);
    let e = sample_episode(&b, 3, 2, 4, &mut rng).unwrap();
    assert_eq!(e.support_videos().count(), 6);
    assert_eq!(e.queries.len(), 12);
}

#[test]
fn oversized_requests_are_rejected() {
    let b = bundle(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_episode(&b, 5, 4, 3, &mut rng), Err(Error::Input(_))));
    assert!(matches!(sample_episode(&b, 21, 1, 1, &mut rng), Err(Error::Input(_))));
    assert!(matches!(sample_episode(&b, 5, 0, 1, &mut rng), Err(Error::Input(_))));
}

#[test]
fn class_selection_is_uniform() {
    let b = bundle(1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (draws, way, classes) = (10_000usize, 5usize, 20usize);
    let mut counts = vec![0usize; classes];
    for _ in 0..draws {
        for c in sample_episode(&b, way, 1, 1, &mut rng).unwrap().classes {
            counts[c] += 1;
        }
    }
    let p = way as f64 / classes as f64;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (c, &n) in counts.iter().enumerate() {
        assert!((n as f64 - expected).abs() < 3.0 * sigma, "class {c}: {n} vs {expected}");
    }
    let chi2: f64 = counts.iter().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 19 degrees of freedom
    assert!(chi2 < 43.82, "chi-square {chi2}");
}

#[test]
fn fuzzed_episodes_are_disjoint_and_cover_labels() {
    let b = bundle(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pools = [b.base_classes(), b.novel_classes().to_vec(), (0..b.classes()).collect()];
    for i in 0..10_000 {
        let pool = &pools[i % pools.len()];
        let way = rng.random_range(2..=pool.len().min(6));
        let shot = rng.random_range(1..=3);
        let queries = rng.random_range(1..=6 - shot);
        let e = sample_episode_from(&b, pool, way, shot, queries, &mut rng).unwrap();
        assert_eq!(e.way(), way);
        assert_eq!(e.shot(), shot);
        assert_eq!(e.classes.iter().collect::<HashSet<_>>().len(), way);
        assert!(e.classes.iter().all(|c| pool.contains(c)));
        let all = e.all_videos();
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len(), "episode {i} reuses a video");
        for (slot, videos) in e.support.iter().enumerate() {
            assert_eq!(videos.len(), shot);
            assert!(videos.iter().all(|&v| b.label(v) == e.classes[slot]));
        }
        let mut per_slot = vec![0usize; way];
        for &(v, slot) in &e.queries {
            assert_eq!(b.label(v), e.classes[slot]);
            per_slot[slot] += 1;
        }
        assert!(per_slot.iter().all(|&n| n == queries));
    }
}

#[test]
fn scenario_b_class_means_match() {
    for seed in 0..3 {
        let b = synth_generate(&SyntheticConfig::scenario_b(seed)).unwrap();
        let means: Vec<Array1<f64>> = (0..b.classes())
            .map(|c| {
                let videos = b.videos_of(c);
                let mut acc = Array1::<f64>::zeros(b.dims().channels);
                for &v in videos {
                    let data = b.video(v).data();
                    acc += &data.mean_axis(Axis(0)).unwrap().mean_axis(Axis(0)).unwrap();
                }
                acc / videos.len() as f64
            })
            .collect();
        for (i, a) in means.iter().enumerate() {
            for bm in &means[i + 1..] {
                let d = (a - bm).mapv(|v| v * v).sum().sqrt();
                assert!(d < 0.02, "seed {seed}: class mean gap {d}");
            }
        }
    }
}
