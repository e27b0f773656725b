use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signtime::kinetogram::{encode, CHANNELS};
use signtime::synthdata::*;
use signtime::trainer::{load_annotated_clips, read_manifest};

/// Mean over frames of the summed absolute per-frame change of all six values.
fn mean_speed(values: &[[f64; 6]]) -> f64 {
    let total: f64 = values
        .windows(2)
        .map(|w| (0..6).map(|i| (w[1][i] - w[0][i]).abs()).sum::<f64>())
        .sum();
    total / (values.len() - 1) as f64
}

#[test]
fn primitives_outpace_background() {
    let cfg = GenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bg: f64 = (0..100)
        .map(|_| mean_speed(&background_motion(cfg.length, cfg.bg_amplitude, cfg.bg_cutoff, &mut rng)))
        .sum::<f64>()
        / 100.0;
    for p in builtin_primitives() {
        let mut sum = 0.0;
        for _ in 0..100 {
            let dur = rng.random_range(cfg.min_duration..=cfg.max_duration);
            let amp = rng.random_range(cfg.amplitude.0..=cfg.amplitude.1);
            let off = embedding_offsets(&p, dur, amp);
            sum += mean_speed(&off[..dur]);
        }
        let speed = sum / 100.0;
        assert!(
            speed > cfg.velocity_margin * bg,
            "{}: {speed:.4} vs background {bg:.4}",
            p.name
        );
    }
}

#[test]
fn background_velocity_bytes_stay_near_zero() {
    let cfg = GenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..20 {
        let clip = generate_clip(&cfg, format!("bg{i}"), &BTreeSet::from([0]), 0.0, &mut rng).unwrap();
        let k = encode(&clip.track);
        let w = k.width();
        let vel = &k.raw()[(CHANNELS - 1) * 10 * w..];
        let mean: f64 = vel.iter().map(|&b| (b as f64 - 128.0).abs()).sum::<f64>() / vel.len() as f64;
        assert!(mean < 6.0, "mean |velocity byte - 128| = {mean}");
    }
}

#[test]
fn signing_probability_monte_carlo() {
    let cfg = GenConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let labels = BTreeSet::from([1]);
    let n = 10_000;
    let hits = (0..n)
        .filter(|i| {
            let clip = generate_clip(&cfg, i.to_string(), &labels, 0.6, &mut rng).unwrap();
            !clip.truth_intervals.unwrap().is_empty()
        })
        .count();
    let frac = hits as f64 / n as f64;
    assert!((0.57..=0.63).contains(&frac), "{frac}");
}

#[test]
fn intervals_inside_and_disjoint() {
    let cfg = GenConfig {
        mode: LabelMode::Multi,
        ..GenConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..300 {
        let labels = intended_labels(&cfg, i, &mut rng);
        let clip = generate_clip(&cfg, i.to_string(), &labels, 1.0, &mut rng).unwrap();
        let truth = clip.truth_intervals.unwrap();
        assert_eq!(truth.len(), labels.len());
        for iv in &truth {
            assert!(iv.start < iv.end && iv.end <= cfg.length);
            assert!(labels.contains(&iv.class));
        }
        for (a, b) in truth.iter().zip(truth.iter().skip(1)) {
            assert!(a.end <= b.start, "{a:?} overlaps {b:?}");
        }
    }
}

fn small_config(mode: LabelMode) -> GenConfig {
    GenConfig {
        clips_per_class: 100,
        mode,
        seed: 21,
        ..GenConfig::default()
    }
}

#[test]
fn dataset_layout_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(LabelMode::Single);
    let ds = generate_dataset(&cfg, dir.path()).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (400, 50, 50));

    let stats = std::fs::read_to_string(dir.path().join("stats.txt")).unwrap();
    for split in Split::ALL {
        let entries = read_manifest(&dir.path().join(split.manifest_name()), true).unwrap();
        assert!(entries.iter().all(|e| e.labels.len() == 1));
        let mut positives = vec![0usize; cfg.classes];
        let mut embedded = vec![0usize; cfg.classes];
        for e in &entries {
            for &c in &e.labels {
                positives[c] += 1;
            }
            for iv in e.truth.iter().flatten() {
                embedded[iv.class] += 1;
            }
        }
        let line = |kind: &str| -> Vec<usize> {
            let prefix = format!("{kind} {} ", split.name());
            let l = stats.lines().find(|l| l.starts_with(&prefix)).unwrap();
            l[prefix.len()..].split(' ').map(|t| t.parse().unwrap()).collect()
        };
        assert_eq!(line("positives"), positives);
        assert_eq!(line("embedded"), embedded);
    }

    // The clean test split embeds every label.
    let test = load_annotated_clips(&dir.path().join("test.manifest"), cfg.classes).unwrap();
    for clip in &test {
        let classes: BTreeSet<usize> =
            clip.truth_intervals.as_ref().unwrap().iter().map(|iv| iv.class).collect();
        assert_eq!(classes, clip.labels);
    }
    assert_eq!(test, ds.test);
}

#[test]
fn multi_mode_label_counts() {
    let cfg = GenConfig {
        clips_per_class: 20,
        ..small_config(LabelMode::Multi)
    };
    let ds = generate_records(&cfg).unwrap();
    let all: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).collect();
    assert!(all.iter().all(|c| (1..=3).contains(&c.labels.len())));
    assert!(all.iter().any(|c| c.labels.len() > 1));
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn fixed_seed_gives_identical_files_for_any_thread_count() {
    let cfg = GenConfig {
        clips_per_class: 10,
        ..small_config(LabelMode::Multi)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    pool(1).install(|| generate_dataset(&cfg, a.path())).unwrap();
    pool(4).install(|| generate_dataset(&cfg, b.path())).unwrap();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.len(), 50 + 5);
    assert!(fa == fb);

    let other = GenConfig { seed: 22, ..cfg };
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&other, c.path()).unwrap();
    assert!(dir_bytes(c.path()) != fa);
}
