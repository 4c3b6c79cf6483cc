use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;

fn stds_bytes(n: u32, steps: u32, features: u32, unit: u32, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&STDS_MAGIC);
    out.extend_from_slice(&STDS_VERSION.to_le_bytes());
    for v in [n, steps, features, unit] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write_temp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, bytes).unwrap();
    path
}

// ── ingestion ──

#[test]
fn pems04_shaped_header_ingests_with_expected_extents() {
    let dir = tempdir().unwrap();
    let (n, steps) = (307u32, 16992u32);
    let values = vec![1.0f32; (n * steps) as usize];
    let path = write_temp(&dir, "pems04.stds", &stds_bytes(n, steps, 1, 5, &values));
    let ds = ingest_stds(&path, MissingPolicy::Reject).unwrap();
    assert_eq!((ds.nodes(), ds.total_steps(), ds.features()), (307, 16992, 1));
    assert_eq!(ds.unit_minutes, 5);
}

#[test]
fn pems08_shaped_header_ingests_with_expected_extents() {
    let dir = tempdir().unwrap();
    let (n, steps) = (170u32, 17856u32);
    let values = vec![0.5f32; (n * steps) as usize];
    let path = write_temp(&dir, "pems08.stds", &stds_bytes(n, steps, 1, 5, &values));
    let ds = ingest_stds(&path, MissingPolicy::Reject).unwrap();
    assert_eq!((ds.nodes(), ds.total_steps()), (170, 17856));
}

#[test]
fn binary_layout_is_node_major_then_time_then_feature() {
    let dir = tempdir().unwrap();
    // 2 nodes × 3 steps × 2 features, values enumerate their flat position.
    let values: Vec<f32> = (0..12).map(|i| i as f32).collect();
    let path = write_temp(&dir, "layout.stds", &stds_bytes(2, 3, 2, 5, &values));
    let ds = ingest_stds(&path, MissingPolicy::Reject).unwrap();
    assert_eq!(ds.readings.at(&[0, 0, 0]), 0.0);
    assert_eq!(ds.readings.at(&[0, 0, 1]), 1.0);
    assert_eq!(ds.readings.at(&[0, 2, 1]), 5.0);
    assert_eq!(ds.readings.at(&[1, 0, 0]), 6.0);
    assert_eq!(ds.readings.at(&[1, 2, 1]), 11.0);
}

#[test]
fn csv_round_trips_through_binary_export_bit_exactly() {
    let dir = tempdir().unwrap();
    let csv = "\
2,10,1,5
0.5,1.25
1.5,2.25
2.5,3.25
3.5,4.25
4.5,5.25
5.5,6.25
6.5,7.25
7.5,8.25
8.5,9.25
9.5,10.25
";
    let csv_path = write_temp(&dir, "tiny.csv", csv.as_bytes());
    let from_csv = ingest_csv(&csv_path, MissingPolicy::Reject).unwrap();

    let stds_path = dir.path().join("tiny.stds");
    write_stds(&stds_path, &from_csv).unwrap();
    let from_binary = ingest_stds(&stds_path, MissingPolicy::Reject).unwrap();

    assert_eq!(from_csv.readings.shape(), from_binary.readings.shape());
    assert_eq!(from_csv.unit_minutes, from_binary.unit_minutes);
    for (a, b) in from_csv
        .readings
        .data()
        .iter()
        .zip(from_binary.readings.data())
    {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn short_payload_is_rejected_with_the_byte_offset() {
    let dir = tempdir().unwrap();
    let mut bytes = stds_bytes(2, 3, 1, 5, &[1.0; 6]);
    bytes.truncate(bytes.len() - 4);
    let path = write_temp(&dir, "short.stds", &bytes);
    let err = ingest_stds(&path, MissingPolicy::Reject).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("byte"), "no byte offset in {msg:?}");
    assert!(msg.contains("20 bytes"), "payload size missing from {msg:?}");
}

#[test]
fn wrong_magic_and_wrong_version_are_rejected() {
    let dir = tempdir().unwrap();
    let mut bytes = stds_bytes(1, 1, 1, 5, &[1.0]);
    bytes[0] = b'X';
    let path = write_temp(&dir, "magic.stds", &bytes);
    assert!(ingest_stds(&path, MissingPolicy::Reject)
        .unwrap_err()
        .to_string()
        .contains("magic"));

    let mut bytes = stds_bytes(1, 1, 1, 5, &[1.0]);
    bytes[4] = 9;
    let path = write_temp(&dir, "version.stds", &bytes);
    assert!(ingest_stds(&path, MissingPolicy::Reject)
        .unwrap_err()
        .to_string()
        .contains("version 9"));
}

#[test]
fn csv_field_count_mismatch_names_the_line() {
    let dir = tempdir().unwrap();
    let path = write_temp(&dir, "bad.csv", b"2,2,1,5\n1.0,2.0\n3.0\n");
    let err = ingest_csv(&path, MissingPolicy::Reject).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 3"), "wrong location in {msg:?}");
    assert!(msg.contains("expected N\u{b7}F") || msg.contains("expected"), "{msg:?}");
}

#[test]
fn missing_values_are_rejected_by_default_and_filled_on_request() {
    let dir = tempdir().unwrap();
    let csv = "1,3,1,5\n2.0\nnan\n4.0\n";
    let path = write_temp(&dir, "gap.csv", csv.as_bytes());

    let err = ingest_csv(&path, MissingPolicy::Reject).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("step 1"), "missing location in {msg:?}");

    let filled = ingest_csv(&path, MissingPolicy::ForwardFill).unwrap();
    assert_eq!(filled.readings.at(&[0, 1, 0]), 2.0);
    assert_eq!(filled.readings.at(&[0, 2, 0]), 4.0);
}

#[test]
fn missing_value_at_the_first_step_cannot_be_filled() {
    let dir = tempdir().unwrap();
    let path = write_temp(&dir, "lead.csv", b"1,2,1,5\nnan\n2.0\n");
    let err = ingest_csv(&path, MissingPolicy::ForwardFill).unwrap_err();
    assert!(err.to_string().contains("step 0"));
}

// ── splitting ──

#[test]
fn hundred_steps_split_sixty_twenty_twenty() {
    let (train, val, test) = split(100, 10).unwrap();
    assert_eq!((train, val, test), (0..60, 60..80, 80..100));
}

#[test]
fn pems04_split_counts_match_floor_arithmetic() {
    let (train, val, test) = split(16992, 12).unwrap();
    assert_eq!(train.len(), 10195);
    assert_eq!(val.len(), 3398);
    assert_eq!(test.len(), 3399); // remainder step lands in test
    assert_eq!(test.end, 16992);
}

#[test]
fn too_short_series_is_a_config_error() {
    let err = split(119, 12).unwrap_err();
    assert!(err.to_string().contains("120"));
    assert!(split(120, 12).is_ok());
}

// ── normalization ──

#[test]
fn training_slice_normalizes_to_zero_mean_unit_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut readings = Tensor::from_fn(&[3, 200, 1], |_| 50.0 + 10.0 * rng.random::<f64>());
    let stats = normalize(&mut readings, &(0..120)).unwrap();
    assert_eq!(stats.mean.len(), 1);

    let count = (3 * 120) as f64;
    let mut mean = 0.0;
    for node in 0..3 {
        for t in 0..120 {
            mean += readings.at(&[node, t, 0]);
        }
    }
    mean /= count;
    let mut var = 0.0;
    for node in 0..3 {
        for t in 0..120 {
            var += (readings.at(&[node, t, 0]) - mean).powi(2);
        }
    }
    var /= count;
    assert!(mean.abs() < 1e-9, "train mean {mean}");
    assert!((var.sqrt() - 1.0).abs() < 1e-9, "train std {}", var.sqrt());
}

#[test]
fn denormalize_inverts_normalize_within_f32_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let original = Tensor::from_fn(&[2, 100, 2], |_| 30.0 + 5.0 * rng.random::<f64>());
    let mut readings = original.clone();
    let stats = normalize(&mut readings, &(0..60)).unwrap();
    for node in 0..2 {
        for t in 0..100 {
            for f in 0..2 {
                let z = readings.at(&[node, t, f]) as f32;
                let back = stats.denormalize(z as f64, f);
                assert!(
                    (back - original.at(&[node, t, f])).abs() < 1e-6,
                    "round trip drifted at [{node},{t},{f}]"
                );
            }
        }
    }
}

#[test]
fn validation_mean_is_nonzero_when_the_series_drifts() {
    // A linear upward drift: train stats center the early steps, so the
    // later validation slice must sit visibly above zero.
    let mut readings = Tensor::from_fn(&[1, 100, 1], |i| i[1] as f64);
    normalize(&mut readings, &(0..60)).unwrap();
    let val_mean: f64 = (60..80).map(|t| readings.at(&[0, t, 0])).sum::<f64>() / 20.0;
    assert!(val_mean > 1.0, "validation mean {val_mean} should drift high");
}

#[test]
fn stats_ignore_validation_and_test_contents() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = Tensor::from_fn(&[2, 100, 1], |_| rng.random::<f64>());
    let mut a = base.clone();
    let mut b = base.clone();
    for t in 60..100 {
        *b.at_mut(&[0, t, 0]) = 9999.0;
    }
    let sa = normalize(&mut a, &(0..60)).unwrap();
    let sb = normalize(&mut b, &(0..60)).unwrap();
    assert_eq!(sa.mean[0].to_bits(), sb.mean[0].to_bits());
    assert_eq!(sa.std[0].to_bits(), sb.std[0].to_bits());
}

#[test]
fn constant_feature_is_rejected() {
    let mut readings = Tensor::from_fn(&[2, 50, 2], |i| {
        if i[2] == 0 {
            i[1] as f64
        } else {
            7.0
        }
    });
    let err = normalize(&mut readings, &(0..30)).unwrap_err();
    assert!(err.to_string().contains("feature 1"));
}

// ── windows ──

fn counting_set(steps: usize, window: usize) -> WindowSet<f64> {
    // readings[n, t, f] = t + n/10 so slices are recognizable.
    let readings = Tensor::from_fn(&[2, steps, 1], |i| i[1] as f64 + i[0] as f64 / 10.0);
    WindowSet::new(readings, window).unwrap()
}

#[test]
fn boundary_split_has_exactly_one_window() {
    assert_eq!(counting_set(24, 12).len(), 1);
}

#[test]
fn hundred_steps_give_seventy_seven_windows() {
    assert_eq!(counting_set(100, 12).len(), 77);
}

#[test]
fn windows_pair_inputs_with_the_following_steps() {
    let set = counting_set(30, 5);
    let (inputs, targets) = set.batch(&[0, 7]);
    assert_eq!(inputs.shape(), &[2, 2, 5, 1]);
    for (b, s) in [(0usize, 0usize), (1, 7)] {
        for node in 0..2 {
            for step in 0..5 {
                let base = (s + step) as f64 + node as f64 / 10.0;
                assert_eq!(inputs.at(&[b, node, step, 0]), base);
                assert_eq!(targets.at(&[b, node, step, 0]), base + 5.0);
            }
        }
    }
}

#[test]
fn every_admissible_start_appears_exactly_once_per_shuffle() {
    let set = counting_set(40, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut order = shuffled_starts(set.len(), &mut rng);
    assert_eq!(order.len(), 40 - 12 + 1);
    order.sort_unstable();
    assert_eq!(order, (0..set.len()).collect::<Vec<_>>());
}

#[test]
fn same_seed_gives_the_same_shuffle() {
    let mut a = ChaCha8Rng::seed_from_u64(33);
    let mut b = ChaCha8Rng::seed_from_u64(33);
    assert_eq!(shuffled_starts(50, &mut a), shuffled_starts(50, &mut b));
    let mut c = ChaCha8Rng::seed_from_u64(34);
    assert_ne!(shuffled_starts(50, &mut a), shuffled_starts(50, &mut c));
}

#[test]
fn from_slice_matches_manual_extraction() {
    let readings = Tensor::from_fn(&[2, 50, 1], |i| (i[0] * 1000 + i[1]) as f64);
    let set = WindowSet::from_slice(&readings, &(30..50), 5).unwrap();
    assert_eq!(set.len(), 20 - 10 + 1);
    let (inputs, _) = set.batch(&[0]);
    assert_eq!(inputs.at(&[0, 0, 0, 0]), 30.0);
    assert_eq!(inputs.at(&[0, 1, 4, 0]), 1034.0);
}

#[test]
fn window_set_rejects_too_few_steps() {
    let readings = Tensor::<f64>::zeros(&[2, 9, 1]);
    assert!(WindowSet::new(readings, 5).is_err());
}

// ── edges and the predefined graph ──

#[test]
fn edge_list_collapses_duplicates_and_checks_range() {
    let dir = tempdir().unwrap();
    let path = write_temp(&dir, "g.edges", b"0,1\n1,0\n2,3\n0,1\n# comment\n\n");
    let edges = ingest_edges(&path, 4).unwrap();
    assert_eq!(edges, vec![(0, 1), (2, 3)]);

    let path = write_temp(&dir, "bad.edges", b"0,9\n");
    let err = ingest_edges(&path, 4).unwrap_err();
    assert!(err.to_string().contains("out of range"));
    assert!(err.to_string().contains("line 1"));
}

#[test]
fn predefined_adjacency_is_row_normalized_and_symmetric_in_support() {
    let a = predefined_adjacency(&[(0, 1), (1, 2)], 4).unwrap();
    for i in 0..4 {
        let row: f64 = (0..4).map(|j| a.at(&[i, j])).sum();
        assert!((row - 1.0).abs() < 1e-15, "row {i} sums to {row}");
    }
    // Node 0: self + edge to 1 → weight split in half.
    assert_eq!(a.at(&[0, 0]), 0.5);
    assert_eq!(a.at(&[0, 1]), 0.5);
    assert_eq!(a.at(&[0, 2]), 0.0);
    // Node 3 is isolated: all mass on the self-loop.
    assert_eq!(a.at(&[3, 3]), 1.0);
    // Support is symmetric even though row weights differ.
    assert!(a.at(&[1, 0]) > 0.0 && a.at(&[2, 1]) > 0.0);
}
