//! Image-folder datasets: `root/<domain>/<class>/*.png|jpg` for sources and
//! `root/<target>/*.png|jpg` (optionally with class subfolders holding
//! evaluation-only ground truth) for the target.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use msgan_core::data::{BenchmarkSpec, DomainDataset, ImageTensor, LabelPurpose};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// What was read and what was skipped while loading a dataset root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    /// `(domain, images loaded)` in load order.
    pub loaded: Vec<(String, usize)>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Clone, Debug)]
pub struct FolderData {
    /// Sources in lexicographic order followed by the target.
    pub domains: Vec<DomainDataset>,
    pub class_names: Vec<String>,
    pub report: IngestionReport,
}

impl FolderData {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Splits off the target, which is always last.
    pub fn into_parts(mut self) -> (Vec<DomainDataset>, DomainDataset, IngestionReport) {
        let target = self.domains.pop().expect("loader always yields a target");
        (self.domains, target, self.report)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Decodes one file, resized to `size x size` RGB in `[-1, 1]`.
pub fn read_image(path: &Path, size: usize) -> std::result::Result<ImageTensor, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let img = if img.width() as usize == size && img.height() as usize == size {
        img
    } else {
        image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    };
    let pixels = img.as_raw().iter().map(|&b| f64::from(b) / 127.5 - 1.0).collect();
    ImageTensor::new(size, size, 3, pixels).map_err(|e| e.to_string())
}

fn read_dir_images(dir: &Path, size: usize, report: &mut IngestionReport) -> Result<Vec<ImageTensor>> {
    let mut images = Vec::new();
    for path in sorted_entries(dir)? {
        if !path.is_file() {
            continue;
        }
        if !is_image(&path) {
            report.skipped.push(SkippedFile {
                path,
                reason: "not a png or jpg file".into(),
            });
            continue;
        }
        match read_image(&path, size) {
            Ok(img) => images.push(img),
            Err(reason) => report.skipped.push(SkippedFile { path, reason }),
        }
    }
    Ok(images)
}

/// Loads every domain under `root`. Class indices follow the sorted union
/// of source class folder names. Unreadable files are skipped and listed
/// in the report; an empty domain is an error.
pub fn load_image_folders(root: &Path, target_name: &str, image_size: usize) -> Result<FolderData> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} does not exist", root.display())));
    }
    let domain_dirs = subdirs(root)?;
    let target_dir = root.join(target_name);
    if !target_dir.is_dir() {
        return Err(Error::Data(format!("target folder `{target_name}` not found under {}", root.display())));
    }
    let source_dirs: Vec<&PathBuf> = domain_dirs.iter().filter(|d| **d != target_dir).collect();
    if source_dirs.is_empty() {
        return Err(Error::Data(format!("no source domain folders under {}", root.display())));
    }
    let mut class_set = BTreeSet::new();
    for d in &source_dirs {
        for c in subdirs(d)? {
            class_set.insert(file_name(&c));
        }
    }
    let class_names: Vec<String> = class_set.into_iter().collect();
    let class_index = |name: &str| class_names.iter().position(|c| c == name);

    let mut report = IngestionReport::default();
    let mut domains = Vec::new();
    for d in source_dirs {
        let name = file_name(d);
        let (images, labels) = read_labelled(d, image_size, &class_index, &mut report)?;
        if images.is_empty() {
            return Err(Error::Data(format!("source domain `{name}` has no readable images")));
        }
        report.loaded.push((name.clone(), images.len()));
        domains.push(DomainDataset::labeled(name, images, labels, class_names.len())?);
    }

    let class_dirs = subdirs(&target_dir)?;
    let target = if class_dirs.is_empty() {
        let images = read_dir_images(&target_dir, image_size, &mut report)?;
        if images.is_empty() {
            return Err(Error::Data(format!("target domain `{target_name}` has no readable images")));
        }
        report.loaded.push((target_name.to_string(), images.len()));
        DomainDataset::target(target_name, images)?
    } else {
        let (images, labels) = read_labelled(&target_dir, image_size, &class_index, &mut report)?;
        if images.is_empty() {
            return Err(Error::Data(format!("target domain `{target_name}` has no readable images")));
        }
        report.loaded.push((target_name.to_string(), images.len()));
        DomainDataset::target(target_name, images)?.with_held_out(labels)?
    };
    domains.push(target);
    Ok(FolderData {
        domains,
        class_names,
        report,
    })
}

fn read_labelled(
    dir: &Path,
    size: usize,
    class_index: &dyn Fn(&str) -> Option<usize>,
    report: &mut IngestionReport,
) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for c in subdirs(dir)? {
        let name = file_name(&c);
        let label = class_index(&name)
            .ok_or_else(|| Error::Data(format!("{}: class `{name}` does not occur in any source domain", c.display())))?;
        let imgs = read_dir_images(&c, size, report)?;
        labels.extend(std::iter::repeat_n(label, imgs.len()));
        images.extend(imgs);
    }
    Ok((images, labels))
}

/// Quantizes a `[-1, 1]` image to 8-bit RGB.
pub fn to_rgb8(img: &ImageTensor) -> image::RgbImage {
    let [h, w, c] = img.dims();
    assert_eq!(c, 3, "only RGB images can be written");
    let bytes = img.pixels().iter().map(|&v| quantize((v + 1.0) * 127.5)).collect();
    image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions")
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn class_folder(label: usize) -> String {
    format!("class{label}")
}

/// Everything needed to regenerate an exported benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: BenchmarkSpec,
    pub domains: Vec<String>,
    pub target: String,
    pub class_names: Vec<String>,
}

/// Writes the domains as PNG folders in the loader's layout plus a
/// manifest. The target's ground truth goes into class subfolders, which the
/// loader treats as evaluation-only labels.
pub fn export_benchmark(spec: &BenchmarkSpec, domains: &[DomainDataset], root: &Path) -> Result<Manifest> {
    let class_names: Vec<String> = (0..spec.num_classes).map(class_folder).collect();
    for d in domains {
        let labels: Vec<usize> = match (d.labels(), d.held_out()) {
            (Some(l), _) => l.to_vec(),
            (None, Some(h)) => h.reveal(LabelPurpose::Export).to_vec(),
            (None, None) => Vec::new(),
        };
        for (i, img) in d.images().iter().enumerate() {
            let dir = match labels.get(i) {
                Some(&y) => root.join(&d.domain_id).join(&class_names[y]),
                None => root.join(&d.domain_id),
            };
            fs::create_dir_all(&dir).at(&dir)?;
            let path = dir.join(format!("{i:05}.png"));
            to_rgb8(img).save(&path).map_err(|e| Error::Format {
                path: path.clone(),
                detail: e.to_string(),
            })?;
        }
    }
    let manifest = Manifest {
        spec: spec.clone(),
        domains: domains.iter().map(|d| d.domain_id.clone()).collect(),
        target: spec.domain_name(spec.num_sources),
        class_names,
    };
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).at(&path)?;
    Ok(manifest)
}
