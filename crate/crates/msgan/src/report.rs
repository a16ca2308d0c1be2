//! Tables and figures rendered from stored records only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use msgan_core::eval::{heatmap, AblationTable, OrderingFlag, RgbImage, SweepMatrix};

use crate::error::{Error, IoContext, Result};
use crate::record::{ExperimentRecord, StandardRow};

fn pct(a: f64) -> String {
    format!("{:.1}", 100.0 * a)
}

fn mean_std(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let std = if a.len() > 1 {
        (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl StandardRow {
    pub fn new(standard: msgan_core::eval::Standard, seeds: Vec<u64>, accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            standard,
            seeds,
            accuracies,
            mean,
            std,
        }
    }
}

/// Right-pads every column to its widest cell.
fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s + "\n"
    };
    let mut out = line(header);
    out += &line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for r in rows {
        out += &line(r);
    }
    out
}

fn csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for r in rows {
        out += &(r.join(",") + "\n");
    }
    out
}

/// Target accuracy (%) per standard and seed.
pub fn standards_table(rows: &[StandardRow]) -> (String, String) {
    let mut seeds: Vec<u64> = rows.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut header = vec!["standard".to_string()];
    header.extend(seeds.iter().map(|s| format!("seed {s}")));
    header.extend(["mean".to_string(), "std".to_string()]);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![r.standard.name().to_string()];
            for s in &seeds {
                c.push(r.seeds.iter().position(|x| x == s).map_or(String::new(), |i| pct(r.accuracies[i])));
            }
            c.extend([pct(r.mean), pct(r.std)]);
            c
        })
        .collect();
    (csv(&header, &cells), text_table(&header, &cells))
}

/// Per-variant accuracy (%) with mean and standard deviation, followed by
/// the ordering checks in the text form.
pub fn ablation_table(table: &AblationTable, flags: &[OrderingFlag]) -> (String, String) {
    let mut header = vec!["variant".to_string()];
    header.extend(table.seeds.iter().map(|s| format!("seed {s}")));
    header.extend(["mean".to_string(), "std".to_string()]);
    let cells: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut c = vec![r.variant.clone()];
            c.extend(r.accuracies.iter().map(|a| pct(*a)));
            c.extend([pct(r.mean), pct(r.std)]);
            c
        })
        .collect();
    let mut text = text_table(&header, &cells);
    for f in flags {
        let verdict = match (f.holds, f.within_noise) {
            (true, _) => "holds",
            (false, true) => "INVERTED (within one std)",
            (false, false) => "INVERTED",
        };
        let _ = writeln!(text, "{} >= {}: {verdict}", f.higher, f.lower);
    }
    (csv(&header, &cells), text)
}

/// Accuracy (%) with `kl` weights down the rows and `nll` weights across.
pub fn sweep_table(m: &SweepMatrix) -> (String, String) {
    let mut header = vec!["kl \\ nll".to_string()];
    header.extend(m.nll_weights.iter().map(|w| w.to_string()));
    let cells: Vec<Vec<String>> = m
        .kl_weights
        .iter()
        .zip(&m.accuracy)
        .map(|(kl, row)| {
            let mut c = vec![kl.to_string()];
            c.extend(row.iter().map(|a| pct(*a)));
            c
        })
        .collect();
    let mut csv_header = vec!["kl".to_string()];
    csv_header.extend(m.nll_weights.iter().map(|w| format!("nll={w}")));
    (csv(&csv_header, &cells), text_table(&header, &cells))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("raster matches its dimensions");
    buf.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write(dir: &Path, name: &str, text: &str, listed: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).at(&path)?;
    listed.push(name.to_string());
    Ok(())
}

/// Writes every table and figure the record holds data for into
/// `exp_dir`, replacing the record's `tables` and `figures` lists, and
/// returns the text tables.
pub fn render(exp_dir: &Path, record: &mut ExperimentRecord) -> Result<String> {
    fs::create_dir_all(exp_dir).at(exp_dir)?;
    let mut tables = Vec::new();
    let mut figures = Vec::new();
    let mut text = String::new();
    if !record.standards.is_empty() {
        let (c, t) = standards_table(&record.standards);
        write(exp_dir, "standards.csv", &c, &mut tables)?;
        write(exp_dir, "standards.txt", &t, &mut tables)?;
        let _ = write!(text, "Target accuracy (%) by evaluation standard\n\n{t}\n");
    }
    if let Some(table) = &record.ablation {
        let (c, t) = ablation_table(table, &record.ablation_flags);
        write(exp_dir, "ablation.csv", &c, &mut tables)?;
        write(exp_dir, "ablation.txt", &t, &mut tables)?;
        let _ = write!(text, "Ablation: target accuracy (%)\n\n{t}\n");
    }
    if let Some(m) = &record.sweep {
        let (c, t) = sweep_table(m);
        write(exp_dir, "sweep.csv", &c, &mut tables)?;
        write(exp_dir, "sweep.txt", &t, &mut tables)?;
        save_png(&heatmap(m), &exp_dir.join("sweep_heatmap.png"))?;
        figures.push("sweep_heatmap.png".to_string());
        let _ = write!(text, "Sensitivity: target accuracy (%)\n\n{t}\n");
    }
    record.tables = tables;
    record.figures = figures;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use msgan_core::eval::{ablation_flags, AblationRow, Standard};

    #[test]
    fn standards_table_aligns_seeds() {
        let rows = vec![
            StandardRow::new(Standard::SourceOnly, vec![0, 1], vec![0.5, 0.25]),
            StandardRow::new(Standard::MultiSource, vec![1], vec![1.0]),
        ];
        let (c, t) = standards_table(&rows);
        assert_eq!(c, "standard,seed 0,seed 1,mean,std\nsource-only,50.0,25.0,37.5,17.7\nmulti-source,,100.0,100.0,0.0\n");
        assert!(t.lines().nth(1).unwrap().starts_with("---"));
    }

    #[test]
    fn ablation_text_lists_flags() {
        let table = AblationTable {
            seeds: vec![0, 1],
            rows: vec![
                AblationRow::new("baseline", vec![0.6, 0.7]),
                AblationRow::new("MVAE+GAN", vec![0.5, 0.6]),
            ],
        };
        let (c, t) = ablation_table(&table, &ablation_flags(&table));
        assert_eq!(c.lines().count(), 3);
        assert!(t.contains("MVAE+GAN >= baseline: INVERTED"));
    }

    #[test]
    fn sweep_table_has_kl_rows() {
        let m = SweepMatrix {
            kl_weights: vec![10.0, 0.1],
            nll_weights: vec![0.1, 10.0],
            accuracy: vec![vec![0.5, 0.75], vec![1.0, 0.25]],
        };
        let (c, _) = sweep_table(&m);
        assert_eq!(c, "kl,nll=0.1,nll=10\n10,50.0,75.0\n0.1,100.0,25.0\n");
    }
}
