use tempfile::tempdir;

use super::*;
use crate::data::{ingest_edges, ingest_stds, MissingPolicy};

#[test]
fn fixed_seed_is_bit_identical() {
    let cfg = SynthConfig::new(6, 600, 1);
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.edges, b.edges);
    for (x, y) in a.readings.data().iter().zip(b.readings.data()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }

    let dir = tempdir().unwrap();
    let p1 = dir.path().join("one.stds");
    let p2 = dir.path().join("two.stds");
    write(&cfg, &p1).unwrap();
    write(&cfg, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let other = generate(&SynthConfig::new(6, 600, 2)).unwrap();
    assert_ne!(a.readings.data(), other.readings.data());
}

#[test]
fn written_files_round_trip_through_the_ingest_path() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("series.stds");
    let cfg = SynthConfig::new(5, 300, 4);
    let paths = write(&cfg, &out).unwrap();

    let dataset = ingest_stds(&paths.dataset, MissingPolicy::Reject).unwrap();
    assert_eq!(dataset.nodes(), 5);
    assert_eq!(dataset.total_steps(), 300);
    assert_eq!(dataset.features(), 1);
    assert_eq!(dataset.unit_minutes, 5);

    let edges = ingest_edges(&paths.edges, 5).unwrap();
    assert_eq!(edges, generate(&cfg).unwrap().edges);

    let meta = std::fs::read_to_string(&paths.meta).unwrap();
    for needle in ["seed=4", "nodes=5", "288", "0.7", "0.2", "0.02"] {
        assert!(meta.contains(needle), "meta lacks {needle}:\n{meta}");
    }
}

#[test]
fn zero_coupling_leaves_node_noise_uncorrelated() {
    let mut cfg = SynthConfig::new(4, 10_000, 11);
    cfg.coupling = 0.0;
    cfg.amp = 0.0; // bare noise, so correlation measures the recursion only
    cfg.noise_sigma = 0.1;
    let data = generate(&cfg).unwrap();

    let series: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..10_000).map(|t| data.readings.at(&[i, t, 0])).collect())
        .collect();
    let centered: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| v - mean).collect()
        })
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let ni: f64 = centered[i].iter().map(|a| a * a).sum();
            let nj: f64 = centered[j].iter().map(|a| a * a).sum();
            let corr = dot / (ni * nj).sqrt();
            assert!(corr.abs() < 0.05, "nodes {i},{j} correlate at {corr:.4}");
        }
    }
}

#[test]
fn coupling_correlates_connected_nodes() {
    let mut cfg = SynthConfig::new(4, 10_000, 11);
    cfg.coupling = 0.25;
    cfg.rho = 0.7;
    cfg.amp = 0.0;
    cfg.noise_sigma = 0.1;
    cfg.radius = 2.0; // complete graph
    let data = generate(&cfg).unwrap();
    assert_eq!(data.edges.len(), 6);

    let a: Vec<f64> = (0..10_000).map(|t| data.readings.at(&[0, t, 0])).collect();
    let b: Vec<f64> = (0..10_000).map(|t| data.readings.at(&[1, t, 0])).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let na: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let nb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    let corr = dot / (na * nb).sqrt();
    assert!(corr > 0.2, "coupled neighbors only correlate at {corr:.4}");
}

#[test]
fn the_sinusoid_repeats_daily_when_noise_is_off() {
    let mut cfg = SynthConfig::new(3, 2 * DAILY_PERIOD, 8);
    cfg.noise_sigma = 0.0;
    cfg.coupling = 0.0;
    let data = generate(&cfg).unwrap();
    for i in 0..3 {
        for t in 0..DAILY_PERIOD {
            let a = data.readings.at(&[i, t, 0]);
            let b = data.readings.at(&[i, t + DAILY_PERIOD, 0]);
            assert!((a - b).abs() < 1e-9, "node {i} step {t}: {a} vs {b}");
        }
        // One full period averages out to the base level.
        let mean: f64 =
            (0..DAILY_PERIOD).map(|t| data.readings.at(&[i, t, 0])).sum::<f64>() / DAILY_PERIOD as f64;
        let spread: f64 = (0..DAILY_PERIOD)
            .map(|t| (data.readings.at(&[i, t, 0]) - mean).abs())
            .fold(0.0, f64::max);
        assert!((5.0..10.0).contains(&mean), "base out of range: {mean}");
        assert!((spread - cfg.amp).abs() < 0.01, "amplitude {spread} vs {}", cfg.amp);
    }
}

#[test]
fn radius_controls_the_edge_count() {
    let mut cfg = SynthConfig::new(8, 10, 3);
    cfg.radius = 0.0;
    assert!(generate(&cfg).unwrap().edges.is_empty());
    cfg.radius = 1.5; // above the unit square's diameter
    let complete = generate(&cfg).unwrap().edges;
    assert_eq!(complete.len(), 8 * 7 / 2);
    assert!(complete.iter().all(|&(i, j)| i < j && j < 8));
}

#[test]
fn default_levels_stay_clear_of_the_percentage_mask() {
    let data = generate(&SynthConfig::new(6, 600, 1)).unwrap();
    let min = data.readings.data().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > 1.0, "series dips to {min}");
}

#[test]
fn canonical_text_round_trips_through_set() {
    let mut cfg = SynthConfig::new(7, 123, 9);
    cfg.coupling = 0.31;
    cfg.amp = 2.5;
    let mut back = SynthConfig::new(1, 1, 0);
    for line in cfg.canonical_text().lines() {
        let (k, v) = line.split_once('=').unwrap();
        back.set(k, v).unwrap();
    }
    assert_eq!(back, cfg);
    assert!(back.set("volume", "11").is_err());
}

#[test]
fn degenerate_flags_are_rejected() {
    assert!(generate(&SynthConfig::new(0, 10, 1)).is_err());
    assert!(generate(&SynthConfig::new(3, 0, 1)).is_err());
    let mut cfg = SynthConfig::new(3, 10, 1);
    cfg.rho = 0.9;
    cfg.coupling = 0.2;
    assert!(generate(&cfg).is_err());
    cfg = SynthConfig::new(3, 10, 1);
    cfg.noise_sigma = -1.0;
    assert!(generate(&cfg).is_err());
}
