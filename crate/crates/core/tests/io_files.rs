use copula_fusion::data::{BeliefTensor, LabelMap, IGNORE_LABEL};
use copula_fusion::fusion::{build_class_models, BuildSettings};
use copula_fusion::io::{
    read_belief_tensor, read_label_map, read_model, write_belief_tensor, write_json,
    write_label_map, write_model, DatasetManifest,
};
use copula_fusion::simulator::{generate, ScenarioConfig};
use copula_fusion::Error;

#[test]
fn smallest_files_have_the_documented_sizes() {
    let d = tempfile::tempdir().unwrap();
    let t = BeliefTensor::new(1, 1, 1, vec![1.0]).unwrap();
    let tp = d.path().join("a/b/t.bel");
    write_belief_tensor(&t, &tp).unwrap();
    let bytes = std::fs::read(&tp).unwrap();
    assert_eq!(bytes.len(), 22);
    assert_eq!(&bytes[..6], b"EDC3\x01\x01");
    assert_eq!(read_belief_tensor(&tp).unwrap(), t);

    let m = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
    let mp = d.path().join("m.lbl");
    write_label_map(&m, &mp).unwrap();
    let bytes = std::fs::read(&mp).unwrap();
    assert_eq!(bytes.len(), 22);
    assert_eq!(&bytes[..6], b"EDC3\x01\x02");
    assert_eq!(read_label_map(&mp).unwrap(), m);
}

#[test]
fn header_only_tensor_reports_payload_offset() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("t.bel");
    let t = BeliefTensor::new(2, 2, 2, vec![0.5; 8]).unwrap();
    write_belief_tensor(&t, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..18]).unwrap();
    match read_belief_tensor(&p) {
        Err(Error::Format { path, offset, .. }) => {
            assert_eq!(offset, 18);
            assert_eq!(path, p);
        }
        other => panic!("expected a format error, got {other:?}"),
    }
    // the wrong kind of file is rejected at the kind byte
    std::fs::write(&p, &bytes).unwrap();
    match read_label_map(&p) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn manifest_round_trips_a_dataset_and_masks_ignored_labels() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let t0 = BeliefTensor::new(1, 2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1]).unwrap();
    let t1 = BeliefTensor::new(1, 2, 3, vec![0.1, 0.8, 0.1, 0.3, 0.3, 0.4]).unwrap();
    write_belief_tensor(&t0, root.join("s/x.c0.bel")).unwrap();
    write_belief_tensor(&t1, root.join("s/x.c1.bel")).unwrap();
    write_label_map(&LabelMap::new(1, 2, vec![2, 9]).unwrap(), root.join("s/x.lbl")).unwrap();
    std::fs::write(
        root.join("manifest.json"),
        r#"{
  "classifiers": ["seg", "psp"],
  "classes": 3,
  "ignore": [9],
  "splits": {"train": [{"tensors": ["s/x.c0.bel", "s/x.c1.bel"], "labels": "s/x.lbl"}]}
}"#,
    )
    .unwrap();
    let manifest = DatasetManifest::read(root.join("manifest.json")).unwrap();
    let imgs = manifest.load_split("train").unwrap();
    assert_eq!(imgs.len(), 1);
    assert_eq!(imgs[0].name, "x");
    assert_eq!(imgs[0].tensors, vec![t0, t1]);
    let train = manifest.load_training("train").unwrap();
    assert_eq!(train[0].labels.as_slice(), &[2, IGNORE_LABEL]);
    assert!(matches!(manifest.split("test"), Err(Error::Usage(_))));
}

#[test]
fn model_files_round_trip_exactly() {
    let data = generate(&ScenarioConfig {
        height: 24,
        width: 24,
        train_images: 3,
        test_images: 0,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let d = tempfile::tempdir().unwrap();
    for quantize in [false, true] {
        let s = BuildSettings {
            min_pixels: 100,
            quantize,
            ..BuildSettings::default()
        };
        let (set, _) = build_class_models(&data.train, &s).unwrap();
        let p = d.path().join(format!("model-{quantize}.json"));
        write_model(&set, &p).unwrap();
        let back = read_model(&p).unwrap();
        // quantized samples are snapped to the 16-bit grid before writing
        assert_eq!(back, set);
        let again = d.path().join("again.json");
        write_model(&back, &again).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn invalid_model_files_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.json");
    write_json(&serde_json::json!({"classes": 2}), &p).unwrap();
    let err = read_model(&p).unwrap_err();
    assert!(err.to_string().contains("bad.json"), "{err}");
}
