use msgan::folders::{export_benchmark, load_image_folders, read_image, MANIFEST};
use msgan_core::data::{generate_benchmark, BenchmarkSpec, LabelPurpose};

fn spec() -> BenchmarkSpec {
    let mut s = BenchmarkSpec::calibrated(3, 8, 11);
    s.image_size = 8;
    s
}

#[test]
fn exported_benchmark_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let domains = generate_benchmark(&spec).unwrap();
    let manifest = export_benchmark(&spec, &domains, dir.path()).unwrap();
    assert!(dir.path().join(MANIFEST).is_file());

    let data = load_image_folders(dir.path(), &manifest.target, 8).unwrap();
    assert_eq!(data.domains.len(), 4);
    assert_eq!(data.class_names, vec!["class0", "class1"]);
    assert!(data.report.skipped.is_empty());
    let (sources, target, _) = data.into_parts();
    for (orig, loaded) in domains[..3].iter().zip(&sources) {
        assert_eq!(orig.domain_id, loaded.domain_id);
        // Files come back class folder by class folder, in export order.
        let labels = orig.labels().unwrap();
        let mut order: Vec<usize> = (0..orig.len()).collect();
        order.sort_by_key(|&i| labels[i]);
        let expected: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        assert_eq!(loaded.labels().unwrap(), expected.as_slice());
        for (&i, b) in order.iter().zip(loaded.images()) {
            // 8-bit quantisation of [-1, 1] moves a value by at most half a level.
            let a = &orig.images()[i];
            let worst = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 0.5 / 127.5 + 1e-12, "{worst}");
        }
    }
    assert!(target.is_target() && target.labels().is_none());
    let mut truth = domains[3].held_out().unwrap().reveal(LabelPurpose::Scoring).to_vec();
    truth.sort_unstable();
    assert_eq!(target.held_out().unwrap().reveal(LabelPurpose::Scoring), truth.as_slice());
}

#[test]
fn unreadable_files_are_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let domains = generate_benchmark(&spec).unwrap();
    let manifest = export_benchmark(&spec, &domains, dir.path()).unwrap();
    let class_dir = dir.path().join(&manifest.domains[0]).join("class0");
    std::fs::write(class_dir.join("broken.png"), b"not a png").unwrap();
    std::fs::write(class_dir.join("notes.txt"), b"hello").unwrap();

    let data = load_image_folders(dir.path(), &manifest.target, 8).unwrap();
    let skipped: Vec<String> = data
        .report
        .skipped
        .iter()
        .map(|s| s.path.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(skipped, vec!["broken.png", "notes.txt"]);
    assert_eq!(data.report.loaded[0], (manifest.domains[0].clone(), 8));
}

#[test]
fn loading_is_deterministic_and_resizes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let domains = generate_benchmark(&spec).unwrap();
    let manifest = export_benchmark(&spec, &domains, dir.path()).unwrap();
    let a = load_image_folders(dir.path(), &manifest.target, 4).unwrap();
    let b = load_image_folders(dir.path(), &manifest.target, 4).unwrap();
    for (x, y) in a.domains.iter().zip(&b.domains) {
        assert_eq!(x.images(), y.images());
        assert_eq!(x.image_dims(), [4, 4, 3]);
    }
    let one = dir.path().join(&manifest.domains[1]).join("class1");
    let first = std::fs::read_dir(&one).unwrap().next().unwrap().unwrap().path();
    let img = read_image(&first, 8).unwrap();
    assert!(img.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn missing_target_and_unknown_classes_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec();
    let domains = generate_benchmark(&spec).unwrap();
    let manifest = export_benchmark(&spec, &domains, dir.path()).unwrap();
    assert!(load_image_folders(dir.path(), "nowhere", 8).is_err());
    std::fs::create_dir(dir.path().join(&manifest.target).join("mystery")).unwrap();
    let err = load_image_folders(dir.path(), &manifest.target, 8).unwrap_err();
    assert!(err.to_string().contains("mystery"), "{err}");
}
