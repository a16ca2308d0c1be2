use msgan::checkpoint::{self, CheckpointMeta};
use msgan::Error;
use msgan_core::data::{generate_benchmark, BenchmarkSpec, DomainDataset};
use msgan_core::networks::{build_models, NetSpec, ParameterGroups};
use msgan_core::trainer::{TrainConfig, TrainData, Trainer};

struct Fixture {
    sources: Vec<DomainDataset>,
    target: DomainDataset,
    net: NetSpec,
    config: TrainConfig,
}

impl Fixture {
    fn new() -> Self {
        let mut bench = BenchmarkSpec::calibrated(2, 12, 3);
        bench.image_size = 8;
        let mut sources = generate_benchmark(&bench).unwrap();
        let target = sources.pop().unwrap();
        Self {
            sources,
            target,
            net: NetSpec::new(8, 3, vec![3, 4], 2),
            config: TrainConfig {
                max_steps: 10,
                batch_size: 4,
                learning_rate: 1e-3,
                seed: 5,
                ..TrainConfig::default()
            },
        }
    }

    fn data(&self) -> TrainData<'_> {
        TrainData {
            sources: &self.sources,
            target: &self.target,
        }
    }

    fn params(&self) -> ParameterGroups {
        build_models(&self.net, 2, 9).unwrap()
    }
}

fn bits(p: &ParameterGroups) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn round_trip_is_bitwise() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    let params = f.params();
    let meta = CheckpointMeta {
        label: "x".into(),
        step: 3,
        accuracy: Some(0.625),
    };
    checkpoint::save(&path, &params, &f.config, None, meta.clone()).unwrap();
    let back = checkpoint::load(&path, Some(&f.net)).unwrap();
    assert_eq!(bits(&back.params), bits(&params));
    assert_eq!(back.params.registry(), params.registry());
    assert_eq!(back.config, f.config);
    assert_eq!(back.meta, meta);
    assert!(back.state.is_none());
    assert!(back.params.check_sharing().is_ok());
}

#[test]
fn resuming_from_an_archive_matches_an_uninterrupted_run() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.json");

    let mut full = Trainer::new(f.params(), f.config.clone(), &f.data()).unwrap();
    full.run(&f.data(), &mut ()).unwrap();

    let mut first = Trainer::new(f.params(), f.config.clone(), &f.data()).unwrap();
    for _ in 0..5 {
        first.train_step(&f.data(), &mut ()).unwrap();
    }
    checkpoint::save(&path, first.params(), first.config(), Some(first.state()), CheckpointMeta::default()).unwrap();
    drop(first);
    let ck = checkpoint::load(&path, Some(&f.net)).unwrap();
    let mut second = Trainer::resume(ck.params, ck.config, &f.data(), ck.state.unwrap()).unwrap();
    second.run(&f.data(), &mut ()).unwrap();

    assert_eq!(second.step(), 10);
    assert_eq!(bits(second.params()), bits(full.params()));
    assert_eq!(second.state(), full.state());
}

fn tamper(path: &std::path::Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(path, serde_json::to_vec(&v).unwrap()).unwrap();
}

fn saved(f: &Fixture, dir: &tempfile::TempDir) -> std::path::PathBuf {
    let path = dir.path().join("c.json");
    checkpoint::save(&path, &f.params(), &f.config, None, CheckpointMeta::default()).unwrap();
    path
}

#[test]
fn corrupted_tensor_is_named() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = saved(&f, &dir);
    let mut key = String::new();
    tamper(&path, |v| {
        let t = &mut v["tensors"][4];
        key = t["key"].as_str().unwrap().to_string();
        let data = t["data"].as_str().unwrap();
        let flipped = if data.starts_with('0') { "1" } else { "0" };
        t["data"] = format!("{flipped}{}", &data[1..]).into();
    });
    match checkpoint::load(&path, Some(&f.net)) {
        Err(Error::Integrity { tensor, detail }) => {
            assert_eq!(tensor, key);
            assert!(detail.contains("checksum"), "{detail}");
        }
        other => panic!("expected an integrity error, got {other:?}"),
    }
}

#[test]
fn missing_and_reshaped_tensors_are_named() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = saved(&f, &dir);
    let mut key = String::new();
    tamper(&path, |v| {
        let removed = v["tensors"].as_array_mut().unwrap().remove(0);
        key = removed["key"].as_str().unwrap().to_string();
    });
    let err = checkpoint::load(&path, None).unwrap_err();
    assert!(matches!(&err, Error::Integrity { tensor, .. } if *tensor == key), "{err}");

    let path = saved(&f, &dir);
    tamper(&path, |v| {
        let t = &mut v["tensors"][1];
        key = t["key"].as_str().unwrap().to_string();
        t["shape"] = serde_json::json!([1]);
    });
    let err = checkpoint::load(&path, None).unwrap_err();
    assert!(matches!(&err, Error::Integrity { tensor, .. } if *tensor == key), "{err}");
}

#[test]
fn mismatched_architecture_is_rejected() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = saved(&f, &dir);
    let other = NetSpec::new(8, 3, vec![3, 5], 2);
    let err = checkpoint::load(&path, Some(&other)).unwrap_err();
    assert!(matches!(&err, Error::Integrity { tensor, .. } if tensor == "net_spec"), "{err}");
}

#[test]
fn tampered_train_state_is_detected() {
    let f = Fixture::new();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let mut t = Trainer::new(f.params(), f.config.clone(), &f.data()).unwrap();
    t.train_step(&f.data(), &mut ()).unwrap();
    checkpoint::save(&path, t.params(), t.config(), Some(t.state()), CheckpointMeta::default()).unwrap();
    tamper(&path, |v| v["train_state"]["state"]["step"] = 7.into());
    let err = checkpoint::load(&path, None).unwrap_err();
    assert!(matches!(&err, Error::Integrity { tensor, .. } if tensor == "train_state"), "{err}");
}
