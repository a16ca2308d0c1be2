//! Synthetic multi-domain benchmark.
//!
//! The class of an image is the orientation of a bar drawn near the centre
//! (class `k` of `L` sits at `k * 180 / L` degrees, with jitter). Domains
//! differ only in rendering style: the hue of the foreground/background
//! palette, an oriented stripe texture, Gaussian blur and a brightness
//! offset. Rendering never touches the class latent, so relabelling a
//! latent under another style cannot change its class.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DomainDataset, ImageTensor};
use crate::error::{Error, Result};
use crate::rng::{self, tags};

/// Rendering style of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Hue rotation of the palette, degrees.
    pub palette_rotation: f64,
    /// Stripe texture frequency in cycles per image; 0 disables it.
    pub texture_frequency: f64,
    pub blur_sigma: f64,
    pub brightness_offset: f64,
    /// Seeds the texture orientation and phase.
    pub seed: u64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            palette_rotation: 0.0,
            texture_frequency: 0.0,
            blur_sigma: 0.0,
            brightness_offset: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.palette_rotation, self.texture_frequency, self.blur_sigma, self.brightness_offset]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("shift parameters must be finite".into()));
        }
        if self.blur_sigma < 0.0 {
            return Err(Error::Config(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if self.texture_frequency < 0.0 {
            return Err(Error::Config(format!(
                "texture_frequency must be >= 0, got {}",
                self.texture_frequency
            )));
        }
        Ok(())
    }
}

/// Everything `generate_benchmark` needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub num_sources: usize,
    pub per_domain: usize,
    pub num_classes: usize,
    pub image_size: usize,
    /// One style per source followed by the target style.
    pub shifts: Vec<ShiftSpec>,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// The calibrated default: sources spread over one arc of the hue
    /// circle with mild texture, the target on the opposite side, blurred
    /// and textured.
    pub fn calibrated(num_sources: usize, per_domain: usize, seed: u64) -> Self {
        let mut shifts: Vec<ShiftSpec> = (0..num_sources)
            .map(|i| ShiftSpec {
                palette_rotation: 40.0 * i as f64,
                texture_frequency: 0.0,
                blur_sigma: 0.0,
                brightness_offset: 0.0,
                seed: 100 + i as u64,
            })
            .collect();
        shifts.push(ShiftSpec {
            palette_rotation: 180.0,
            texture_frequency: 0.0,
            blur_sigma: 0.0,
            brightness_offset: 0.0,
            seed: 999,
        });
        Self {
            num_sources,
            per_domain,
            num_classes: 2,
            image_size: 32,
            shifts,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sources == 0 {
            return Err(Error::Config("num_sources must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.per_domain < 2 * self.num_classes {
            return Err(Error::Config(format!(
                "per_domain {} below minimum {} (two images per class)",
                self.per_domain,
                2 * self.num_classes
            )));
        }
        if self.shifts.len() != self.num_sources + 1 {
            return Err(Error::Config(format!(
                "{} shift specs for {} sources plus target",
                self.shifts.len(),
                self.num_sources
            )));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be >= 8".into()));
        }
        self.shifts.iter().try_for_each(ShiftSpec::validate)
    }

    pub fn domain_name(&self, index: usize) -> String {
        if index == self.num_sources {
            "target".into()
        } else {
            format!("source{}", index + 1)
        }
    }
}

/// The class-determining content of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLatent {
    pub class: usize,
    angle: f64,
    center: (f64, f64),
    half_length: f64,
    half_thickness: f64,
    dot: (f64, f64, f64),
    grain_seed: u64,
}

impl ClassLatent {
    pub fn sample(rng: &mut impl Rng, class: usize, num_classes: usize, size: usize) -> Self {
        let s = size as f64;
        let jitter = rng.random_range(-10.0..10.0) * PI / 180.0;
        let angle = PI * class as f64 / num_classes as f64 + jitter;
        let c = s / 2.0 - 0.5;
        let center = (c + rng.random_range(-0.1..0.1) * s, c + rng.random_range(-0.1..0.1) * s);
        let half_length = rng.random_range(0.25..0.36) * s;
        let half_thickness = rng.random_range(0.05..0.09) * s;
        let dot = (
            rng.random_range(0.1..0.9) * s,
            rng.random_range(0.1..0.9) * s,
            rng.random_range(0.04..0.08) * s,
        );
        Self {
            class,
            angle,
            center,
            half_length,
            half_thickness,
            dot,
            grain_seed: rng.random(),
        }
    }

    /// Anti-aliased foreground coverage in `[0, 1]`.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (ux, uy) = (libm::cos(self.angle), libm::sin(self.angle));
        let along = (dx * ux + dy * uy).clamp(-self.half_length, self.half_length);
        let (px, py) = (dx - along * ux, dy - along * uy);
        let bar = self.half_thickness + 0.5 - libm::sqrt(px * px + py * py);
        let (ex, ey) = (x - self.dot.0, y - self.dot.1);
        let dot = self.dot.2 + 0.5 - libm::sqrt(ex * ex + ey * ey);
        bar.max(dot).clamp(0.0, 1.0)
    }
}

const CHROMA_A: [f64; 3] = [0.816_496_580_927_726, -0.408_248_290_463_863, -0.408_248_290_463_863];
const CHROMA_B: [f64; 3] = [0.0, 0.707_106_781_186_547_6, -0.707_106_781_186_547_6];
const PALETTE_AMPLITUDE: f64 = 0.9;
const TEXTURE_AMPLITUDE: f64 = 0.35;
const GRAIN_SIGMA: f64 = 0.04;

fn palette(rotation_deg: f64) -> [f64; 3] {
    let t = rotation_deg * PI / 180.0;
    let (c, s) = (libm::cos(t), libm::sin(t));
    core::array::from_fn(|k| PALETTE_AMPLITUDE * (c * CHROMA_A[k] + s * CHROMA_B[k]))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(img: &mut [f64], size: usize, channels: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = size as isize;
    let mut tmp = vec![0.0; img.len()];
    for horizontal in [true, false] {
        for y in 0..n {
            for x in 0..n {
                for c in 0..channels {
                    let mut acc = 0.0;
                    for (j, w) in k.iter().enumerate() {
                        let o = j as isize - r;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, n - 1), y)
                        } else {
                            (x, (y + o).clamp(0, n - 1))
                        };
                        acc += w * img[((sy * n + sx) as usize) * channels + c];
                    }
                    tmp[((y * n + x) as usize) * channels + c] = acc;
                }
            }
        }
        img.copy_from_slice(&tmp);
    }
}

/// Renders a latent in the given style; pixels are clamped to `[-1, 1]`.
pub fn render(latent: &ClassLatent, shift: &ShiftSpec, size: usize) -> ImageTensor {
    let fg = palette(shift.palette_rotation);
    let mut tex_rng = rng::stream(shift.seed, &[tags::BENCHMARK, 1]);
    let tex_angle: f64 = tex_rng.random_range(0.0..PI);
    let tex_phase: f64 = tex_rng.random_range(0.0..2.0 * PI);
    let (tx, ty) = (libm::cos(tex_angle), libm::sin(tex_angle));
    let mut grain = rng::stream(latent.grain_seed, &[tags::BENCHMARK, 2]);
    let mut px = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let m = latent.coverage(fx, fy);
            let contrast = 2.0 * m - 1.0;
            let texture = if shift.texture_frequency > 0.0 {
                let u = (fx * tx + fy * ty) / size as f64;
                TEXTURE_AMPLITUDE * libm::sin(2.0 * PI * shift.texture_frequency * u + tex_phase)
            } else {
                0.0
            };
            for c in 0..3 {
                px[(y * size + x) * 3 + c] = contrast * fg[c] + texture;
            }
        }
    }
    blur(&mut px, size, 3, shift.blur_sigma);
    for v in &mut px {
        *v = (*v + shift.brightness_offset + GRAIN_SIGMA * rng::normal(&mut grain)).clamp(-1.0, 1.0);
    }
    ImageTensor::new(size, size, 3, px).expect("rendered pixels are clamped")
}

/// Class latents of one domain: balanced round-robin labels, content drawn
/// from the domain's own stream.
pub(crate) fn domain_latents(spec: &BenchmarkSpec, domain: usize) -> Vec<ClassLatent> {
    let mut r = rng::stream(spec.seed, &[tags::BENCHMARK, 0, domain as u64]);
    (0..spec.per_domain)
        .map(|i| ClassLatent::sample(&mut r, i % spec.num_classes, spec.num_classes, spec.image_size))
        .collect()
}

/// Generates `num_sources` labelled domains followed by the target, whose
/// ground truth is attached as held-out labels.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    (0..=spec.num_sources)
        .map(|d| {
            let latents = domain_latents(spec, d);
            let images: Vec<ImageTensor> = latents
                .iter()
                .map(|l| render(l, &spec.shifts[d], spec.image_size))
                .collect();
            let labels: Vec<usize> = latents.iter().map(|l| l.class).collect();
            let name = spec.domain_name(d);
            if d == spec.num_sources {
                DomainDataset::target(name, images)?.with_held_out(labels)
            } else {
                DomainDataset::labeled(name, images, labels, spec.num_classes)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelPurpose;

    fn spec(num_sources: usize, per_domain: usize, shifts: Vec<ShiftSpec>, seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            num_sources,
            per_domain,
            num_classes: 2,
            image_size: 32,
            shifts,
            seed,
        }
    }

    #[test]
    fn identity_shift_renders_identically_in_every_domain() {
        let s = spec(2, 8, vec![ShiftSpec::identity(); 3], 3);
        let data = generate_benchmark(&s).unwrap();
        assert_eq!(data.len(), 3);
        assert!(data[2].is_target() && !data[0].is_target());
        // the same latent renders to the same image under every domain's style
        let latent = &domain_latents(&s, 0)[0];
        let a = render(latent, &s.shifts[0], 32);
        for d in 1..3 {
            assert_eq!(render(latent, &s.shifts[d], 32), a);
        }
        assert_eq!(data[0].images()[0], a);
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let s = BenchmarkSpec::calibrated(3, 200, 7);
        let a = generate_benchmark(&s).unwrap();
        let b = generate_benchmark(&s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.images().len(), y.images().len());
            for (i, j) in x.images().iter().zip(y.images()) {
                assert!(i.pixels().iter().zip(j.pixels()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
            assert_eq!(x.labels(), y.labels());
        }
    }

    #[test]
    fn classes_are_balanced_and_pixels_bounded() {
        let s = BenchmarkSpec::calibrated(2, 31, 1);
        for d in generate_benchmark(&s).unwrap() {
            let labels = match d.labels() {
                Some(l) => l.to_vec(),
                None => d.held_out().unwrap().reveal(LabelPurpose::Scoring).to_vec(),
            };
            let ones = labels.iter().filter(|&&y| y == 1).count();
            let zeros = labels.len() - ones;
            assert!(ones.abs_diff(zeros) <= 1);
            for img in d.images() {
                assert!(img.pixels().iter().all(|p| (-1.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn style_never_changes_the_label() {
        let mut r = rng::stream(5, &[0]);
        let a = ShiftSpec::identity();
        let b = ShiftSpec {
            palette_rotation: 120.0,
            texture_frequency: 3.0,
            blur_sigma: 1.5,
            brightness_offset: 0.2,
            seed: 4,
        };
        for i in 0..20 {
            let latent = ClassLatent::sample(&mut r, i % 2, 2, 32);
            let (x, y) = (render(&latent, &a, 32), render(&latent, &b, 32));
            assert_ne!(x, y);
            assert_eq!(latent.class, i % 2);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let s = spec(2, 3, vec![ShiftSpec::identity(); 3], 0);
        assert!(matches!(generate_benchmark(&s), Err(Error::Config(_))));
        let mut bad = ShiftSpec::identity();
        bad.blur_sigma = -1.0;
        let s = spec(2, 8, vec![ShiftSpec::identity(), ShiftSpec::identity(), bad], 0);
        assert!(matches!(generate_benchmark(&s), Err(Error::Config(_))));
        let s = spec(2, 8, vec![ShiftSpec::identity(); 2], 0);
        assert!(generate_benchmark(&s).is_err());
    }
}
