//! End-to-end checks through the public API alone, the way a downstream
//! crate would drive it: generate data, corrupt a client, run the full
//! protocol, and hold the artifacts to their contracts (determinism,
//! log replay, dataset round-trip).

use splitfed::dataset::{
    apply_corruption, corrupted_ids, export_dataset, generate_synthetic, import_dataset,
    partition_clients, CorruptionSpec, PartitionedData,
};
use splitfed::orchestrator::{execute, RunSettings, TrainingLog, Transport};
use splitfed::unet::ArchConfig;

const COUNTS: [usize; 2] = [8, 8];

fn tiny_settings(seed: u64) -> RunSettings {
    RunSettings {
        arch: ArchConfig {
            input_size: 16,
            encoder_filters: vec![4],
            bottleneck_filters: 6,
            ..ArchConfig::default()
        },
        global_epochs: 1,
        local_epochs: 2,
        batch_size: Some(2),
        seed,
        ..RunSettings::default()
    }
}

fn tiny_data(seed: u64, corrupted: usize) -> PartitionedData {
    let samples = generate_synthetic(seed, 20, 16, 16).unwrap();
    let mut data = partition_clients(samples, &COUNTS, seed).unwrap();
    let ids = corrupted_ids(&COUNTS, corrupted).unwrap();
    apply_corruption(&mut data, &ids, &CorruptionSpec::disk(2).unwrap()).unwrap();
    data
}

#[test]
fn full_run_is_deterministic() {
    let settings = tiny_settings(11);
    let data = tiny_data(11, 1);
    let first = execute(&settings, &data, Transport::InProcess).unwrap();
    let second = execute(&settings, &data, Transport::InProcess).unwrap();
    assert_eq!(first.best_client.digest(), second.best_client.digest());
    assert_eq!(first.best_server.digest(), second.best_server.digest());
    assert_eq!(
        first.log.to_jsonl().unwrap(),
        second.log.to_jsonl().unwrap(),
        "identical settings and data must replay the identical log"
    );
    assert_eq!(first.report.accuracy, second.report.accuracy);

    let reseeded = execute(&tiny_settings(12), &data, Transport::InProcess).unwrap();
    assert_ne!(
        first.best_client.digest(),
        reseeded.best_client.digest(),
        "a different seed must initialize a different model"
    );
}

#[test]
fn log_survives_a_jsonl_round_trip() {
    let settings = tiny_settings(13);
    let data = tiny_data(13, 0);
    let outcome = execute(&settings, &data, Transport::InProcess).unwrap();
    let text = outcome.log.to_jsonl().unwrap();
    let replayed = TrainingLog::from_jsonl(&text).unwrap();
    assert_eq!(replayed.records.len(), outcome.log.records.len());
    assert_eq!(replayed.to_jsonl().unwrap(), text, "re-serialization must be byte-stable");
}

#[test]
fn corruption_touches_exactly_the_chosen_client() {
    let clean = tiny_data(17, 0);
    let dirty = tiny_data(17, 1);
    // Equal counts tie-break toward the lower id, so client 0 is hit.
    assert!(dirty.clients[0].corrupted);
    assert!(!dirty.clients[1].corrupted);

    let changed = clean.clients[0]
        .train
        .iter()
        .zip(&dirty.clients[0].train)
        .filter(|(a, b)| a.mask.data() != b.mask.data())
        .count();
    assert!(changed > 0, "corruption must alter at least one training mask");
    for (a, b) in clean.clients[1].train.iter().zip(&dirty.clients[1].train) {
        assert_eq!(a.mask.data(), b.mask.data(), "the clean client must be untouched");
    }
    for (a, b) in clean.test.iter().zip(&dirty.test) {
        assert_eq!(a.mask.data(), b.mask.data(), "the test set must stay clean");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let data = tiny_data(19, 1);
    let dir = tempfile::tempdir().unwrap();
    export_dataset(dir.path(), &data).unwrap();
    let back = import_dataset(dir.path()).unwrap();
    assert_eq!(back.clients.len(), data.clients.len());
    assert_eq!(back.test.len(), data.test.len());
    for (a, b) in data.clients.iter().zip(&back.clients) {
        assert_eq!(a.client_id, b.client_id);
        assert_eq!(a.corrupted, b.corrupted);
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.mask.data(), y.mask.data());
            assert_eq!(x.image.data(), y.image.data(), "pixel data must survive the round trip");
        }
    }
}
