use std::fs;

use proptest::prelude::*;
use subband_spoof::corpus::{
    band_class_difference_db, canonical_protocol_text, generate_synthetic, load_features_with_rejects, load_partition,
    parse_protocol_text, ArtifactKind, CorpusManifest, Partition, PartitionCounts, ProtocolEntry, ProtocolFormat,
    SynthSpec,
};
use subband_spoof::frontend::{load_waveform, TrimMode};
use subband_spoof::scores::Label;

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        name: "small".into(),
        seed,
        n_per_class_per_partition: PartitionCounts {
            train: 3,
            dev: 2,
            eval: 2,
        },
        ..SynthSpec::default()
    }
}

#[test]
fn same_spec_same_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_synthetic(&small(5), a.path()).unwrap();
    let mb = generate_synthetic(&small(5), b.path()).unwrap();
    let mc = generate_synthetic(&small(6), c.path()).unwrap();
    assert_eq!(ma.content_hash, mb.content_hash);
    assert_ne!(ma.content_hash, mc.content_hash);
    let wav = |d: &std::path::Path| fs::read(d.join("wav").join("eval_spoof_0001.wav")).unwrap();
    assert_eq!(wav(a.path()), wav(b.path()));
    for f in ["protocol_train.txt", "protocol_dev.txt", "protocol_eval.txt", "corpus.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn default_spec_counts_and_band_locality() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&SynthSpec::default(), dir.path()).unwrap();
    for (p, n) in [(Partition::Train, 80), (Partition::Dev, 40), (Partition::Eval, 80)] {
        let entries = m.entries(p).unwrap();
        assert_eq!(entries.len(), n);
        assert_eq!(entries.iter().filter(|e| e.label == Label::Bonafide).count(), n / 2);
    }
    let d = band_class_difference_db(&m, Partition::Train, (7000.0, 8000.0)).unwrap();
    assert!(d.in_band_db >= 6.0, "in band {}", d.in_band_db);
    assert!(d.out_of_band_db <= 1.0, "out of band {}", d.out_of_band_db);
    assert!(d.ratio() >= 5.0);

    let items = load_partition(&m, Partition::Train).unwrap();
    assert_eq!(items.items.len(), 80);
    assert!(items.rejects.is_empty());
    let order: Vec<String> = m.entries(Partition::Train).unwrap().into_iter().map(|e| e.utterance_id).collect();
    let (set, rejects) = load_features_with_rejects(&m, Partition::Train).unwrap();
    assert!(rejects.is_empty());
    assert_eq!(set.ids, order);
}

#[test]
fn gain_artifact_is_band_local_too() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        artifact_kind: ArtifactKind::BandGain,
        artifact_band_hz: (2000.0, 3000.0),
        n_per_class_per_partition: PartitionCounts {
            train: 12,
            dev: 1,
            eval: 1,
        },
        ..SynthSpec::default()
    };
    let m = generate_synthetic(&spec, dir.path()).unwrap();
    let d = band_class_difference_db(&m, Partition::Train, (2000.0, 3000.0)).unwrap();
    assert!(d.ratio() >= 5.0, "{} / {}", d.in_band_db, d.out_of_band_db);
}

#[test]
fn zero_trimming_shortens_padded_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small(1), dir.path()).unwrap();
    assert_eq!(m.trim_mode, TrimMode::Zeros);
    let info = m.partition(Partition::Dev).unwrap();
    let loaded = load_partition(&m, Partition::Dev).unwrap();
    for (item, e) in loaded.items.iter().zip(m.entries(Partition::Dev).unwrap()) {
        let raw = load_waveform(&m.audio_path(info, &e.utterance_id)).unwrap();
        assert!(item.waveform.len() < raw.len());
    }
}

#[test]
fn missing_file_is_one_reject() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small(2), dir.path()).unwrap();
    fs::remove_file(dir.path().join("wav").join("train_bonafide_0001.wav")).unwrap();
    let loaded = load_partition(&m, Partition::Train).unwrap();
    assert_eq!(loaded.rejects.len(), 1);
    assert_eq!(loaded.rejects[0].utterance_id, "train_bonafide_0001");
    assert_eq!(loaded.items.len(), 5);
    let (set, rejects) = load_features_with_rejects(&m, Partition::Train).unwrap();
    assert_eq!((set.len(), rejects.len()), (5, 1));
}

#[test]
fn manifest_reads_back_from_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&small(3), dir.path()).unwrap();
    let back = CorpusManifest::read(&dir.path().join("corpus.json")).unwrap();
    assert_eq!(back.content_hash, m.content_hash);
    assert_eq!(back.entries(Partition::Eval).unwrap(), m.entries(Partition::Eval).unwrap());
}

fn entry_strategy() -> impl Strategy<Value = Vec<(String, bool)>> {
    prop::collection::btree_map("[A-Za-z0-9_]{1,12}", any::<bool>(), 0..40).prop_map(|m| m.into_iter().collect())
}

proptest! {
    #[test]
    fn canonical_protocol_roundtrip(rows in entry_strategy()) {
        let entries: Vec<ProtocolEntry> = rows
            .into_iter()
            .map(|(id, b)| ProtocolEntry {
                utterance_id: id,
                label: if b { Label::Bonafide } else { Label::Spoof },
                partition: Partition::Dev,
                attributes: Default::default(),
            })
            .collect();
        let text = canonical_protocol_text(&entries);
        let back = parse_protocol_text(&text, ProtocolFormat::Canonical, Partition::Dev, std::path::Path::new("p")).unwrap();
        prop_assert_eq!(back, entries);
    }
}
