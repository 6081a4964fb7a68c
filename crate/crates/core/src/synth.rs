//! Deterministic EM-like tissue generator and planted multi-domain benchmarks.
//!
//! Each image is a Voronoi partition of dart-thrown cell centers. Pixels
//! closer than half the membrane thickness to a cell boundary are membrane
//! (label 0); every other pixel carries its cell id. Intensities are a
//! per-cell base level, a dark membrane level, Gaussian texture noise and a
//! gamma curve, followed by optional acquisition artifacts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_seed, ArtifactFlags, DataError, DomainPool, GrayImage, LabelMap, ProbMap, Sample, SeededRng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid domain spec: {0}")]
    InvalidSpec(String),
    #[error("spec cannot be realised: {0}")]
    SpecInfeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SynthError {
    pub fn kind(&self) -> &'static str {
        match self {
            SynthError::InvalidSpec(_) => "InvalidSpec",
            SynthError::SpecInfeasible(_) => "SpecInfeasible",
            SynthError::Data(e) => e.kind(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub name: String,
    /// Images are square.
    pub image_size: usize,
    pub cell_diameter_mean: f64,
    /// Standard deviation of the per-image mean cell diameter.
    pub cell_diameter_std: f64,
    pub membrane_thickness: f64,
    /// Mean cytoplasm gray level before gamma.
    pub cell_intensity: f64,
    /// Standard deviation of the per-cell gray level.
    pub cell_intensity_jitter: f64,
    pub membrane_intensity: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
    pub stripe_prob: f64,
    pub black_tile_prob: f64,
    pub contrast_prob: f64,
    pub seed: u64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            name: "synthetic".into(),
            image_size: 128,
            cell_diameter_mean: 20.0,
            cell_diameter_std: 2.0,
            membrane_thickness: 3.0,
            cell_intensity: 170.0,
            cell_intensity_jitter: 20.0,
            membrane_intensity: 50.0,
            noise_sigma: 10.0,
            gamma: 1.0,
            stripe_prob: 0.0,
            black_tile_prob: 0.0,
            contrast_prob: 0.0,
            seed: 0,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        for (name, p) in [
            ("stripe_prob", self.stripe_prob),
            ("black_tile_prob", self.black_tile_prob),
            ("contrast_prob", self.contrast_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.membrane_thickness > 0.0) {
            return bad("membrane_thickness must be positive".into());
        }
        if !(self.cell_diameter_mean >= 4.0 * self.membrane_thickness) {
            return bad("cell diameter must be at least 4 membrane thicknesses".into());
        }
        if !(self.cell_diameter_std >= 0.0 && self.noise_sigma >= 0.0 && self.cell_intensity_jitter >= 0.0) {
            return bad("spreads must be non-negative".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive".into());
        }
        if self.image_size < 8 {
            return bad("image_size must be at least 8".into());
        }
        if self.cell_diameter_mean > self.image_size as f64 {
            return Err(SynthError::SpecInfeasible(format!(
                "cells of diameter {} do not fit in {} px images",
                self.cell_diameter_mean, self.image_size
            )));
        }
        Ok(())
    }

    /// Expected membrane pixel fraction: a band of half the thickness inside
    /// the perimeter of a disc of the mean diameter, `2 t / d`.
    pub fn analytic_membrane_fraction(&self) -> f64 {
        2.0 * self.membrane_thickness / self.cell_diameter_mean
    }
}

/// Dart throwing: uniform candidates closer than `min_dist` to an accepted
/// center are rejected.
fn cell_centers(size: f64, diameter: f64, rng: &mut SeededRng) -> Vec<(f64, f64)> {
    let target = ((size * size) / (std::f64::consts::PI * diameter * diameter / 4.0))
        .round()
        .max(2.0) as usize;
    let min_dist = 0.7 * diameter;
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(target);
    let mut attempts = 0;
    while centers.len() < target && attempts < 60 * target {
        attempts += 1;
        let c = (rng.random::<f64>() * size, rng.random::<f64>() * size);
        if centers
            .iter()
            .all(|o| (o.0 - c.0).powi(2) + (o.1 - c.1).powi(2) >= min_dist * min_dist)
        {
            centers.push(c);
        }
    }
    while centers.len() < 2 {
        centers.push((rng.random::<f64>() * size, rng.random::<f64>() * size));
    }
    centers
}

/// Nearest center and distance to the closest Voronoi boundary for a point.
fn voronoi_cell(p: (f64, f64), centers: &[(f64, f64)]) -> (usize, f64) {
    let d2 = |c: &(f64, f64)| (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2);
    let mut a = 0;
    for (i, c) in centers.iter().enumerate() {
        if d2(c) < d2(&centers[a]) {
            a = i;
        }
    }
    let da = d2(&centers[a]);
    let mut boundary = f64::INFINITY;
    for (b, c) in centers.iter().enumerate() {
        if b == a {
            continue;
        }
        let sep = ((c.0 - centers[a].0).powi(2) + (c.1 - centers[a].1).powi(2)).sqrt();
        if sep > 0.0 {
            boundary = boundary.min((d2(c) - da) / (2.0 * sep));
        }
    }
    (a, boundary)
}

fn generate_sample(spec: &DomainSpec, index: usize) -> Result<Sample, SynthError> {
    let size = spec.image_size;
    let mut rng = SeededRng::new(derive_seed(spec.seed, index as u64));
    let diameter =
        (spec.cell_diameter_mean + spec.cell_diameter_std * normal(&mut rng)).max(4.0 * spec.membrane_thickness);
    let centers = cell_centers(size as f64, diameter, &mut rng);
    let levels: Vec<f64> = centers
        .iter()
        .map(|_| spec.cell_intensity + spec.cell_intensity_jitter * normal(&mut rng))
        .collect();
    let half = spec.membrane_thickness / 2.0;
    let mut labels = vec![0u32; size * size];
    let mut values = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (cell, boundary) = voronoi_cell((x as f64 + 0.5, y as f64 + 0.5), &centers);
            let p = y * size + x;
            if boundary < half {
                values[p] = spec.membrane_intensity;
            } else {
                labels[p] = cell as u32 + 1;
                values[p] = levels[cell];
            }
        }
    }
    for v in values.iter_mut() {
        *v += spec.noise_sigma * normal(&mut rng);
        let unit = (*v / 255.0).clamp(0.0, 1.0);
        *v = 255.0 * unit.powf(spec.gamma);
    }
    let mut flags = ArtifactFlags::default();
    // draws happen in a fixed order whether or not an artifact fires
    let (r_contrast, r_tile, r_stripe) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
    if r_contrast < spec.contrast_prob {
        flags.contrast = true;
        let factor = 0.4 + 0.3 * rng.random::<f64>();
        for v in values.iter_mut() {
            *v = 128.0 + (*v - 128.0) * factor;
        }
    }
    if r_tile < spec.black_tile_prob {
        flags.black_tile = true;
        let side = (size / 4 + rng.random_range(0..=size / 4)).max(1);
        let x0 = rng.random_range(0..=size - side);
        let y0 = rng.random_range(0..=size - side);
        for y in y0..y0 + side {
            values[y * size + x0..y * size + x0 + side].fill(0.0);
        }
    }
    if r_stripe < spec.stripe_prob {
        flags.stripe = true;
        let width = rng.random_range(2..=6usize).min(size);
        let x0 = rng.random_range(0..=size - width);
        for y in 0..size {
            values[y * size + x0..y * size + x0 + width].fill(255.0);
        }
    }
    let pixels = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let mut sample = Sample::new(
        format!("{}_{index:04}", spec.name),
        GrayImage::new(size, size, pixels)?,
        Some(LabelMap::new(size, size, labels)?),
    )?;
    sample.artifacts = flags;
    Ok(sample)
}

fn normal(rng: &mut SeededRng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// `n` fully labeled samples; sample `i` depends only on `(spec, i)`.
pub fn generate_domain(spec: &DomainSpec, n: usize) -> Result<DomainPool, SynthError> {
    spec.validate()?;
    if n == 0 {
        return Err(SynthError::InvalidSpec("sample count must be at least 1".into()));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| generate_sample(spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DomainPool::fully_labeled(spec.name.clone(), samples)?)
}

/// Membrane probability map rendered from ground truth: 1 on label 0, else 0.
pub fn ground_truth_membrane_map(labels: &LabelMap) -> ProbMap {
    let m: Vec<f64> = labels
        .labels()
        .iter()
        .map(|&l| if l == 0 { 1.0 } else { 0.0 })
        .collect();
    ProbMap::from_membrane(labels.width(), labels.height(), &m).expect("valid shape")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Number of domains in each planted family.
    pub layout: Vec<usize>,
    pub image_size: usize,
    pub samples_per_domain: usize,
    /// Stripe probability for the domains of the last family.
    pub last_family_stripe_prob: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            layout: vec![2, 2, 2],
            image_size: 48,
            samples_per_domain: 30,
            last_family_stripe_prob: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub specs: Vec<DomainSpec>,
    pub domains: Vec<DomainPool>,
    /// Planted family of each domain.
    pub families: Vec<usize>,
}

impl Benchmark {
    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }
}

/// Morphology of family `f`: cell size, gamma and gray levels move together so
/// that families are far apart; siblings differ only in noise.
fn family_spec(f: usize, sibling: usize, size: usize) -> DomainSpec {
    let diameters = [10.0, 16.0, 22.0, 13.0, 19.0];
    let gammas = [0.75, 1.0, 1.35, 0.9, 1.2];
    let cells = [185.0, 160.0, 140.0, 175.0, 150.0];
    let membranes = [40.0, 65.0, 85.0, 55.0, 75.0];
    let thickness = [2.0, 3.0, 4.0, 2.5, 3.5];
    let k = f % diameters.len();
    let scale = size as f64 / 48.0;
    DomainSpec {
        name: format!("f{f}d{sibling}"),
        image_size: size,
        cell_diameter_mean: diameters[k] * scale,
        cell_diameter_std: 0.1 * diameters[k] * scale,
        membrane_thickness: thickness[k] * scale.max(1.0),
        cell_intensity: cells[k],
        cell_intensity_jitter: 30.0,
        membrane_intensity: membranes[k],
        noise_sigma: 18.0 + 6.0 * sibling as f64,
        gamma: gammas[k],
        ..DomainSpec::default()
    }
}

/// Domains in planted families laid out as `cfg.layout`.
pub fn make_benchmark_with(cfg: &BenchmarkConfig) -> Result<Benchmark, SynthError> {
    if cfg.layout.is_empty() || cfg.layout.contains(&0) {
        return Err(SynthError::InvalidSpec("every family needs at least one domain".into()));
    }
    let mut specs = Vec::new();
    let mut families = Vec::new();
    let last = cfg.layout.len() - 1;
    for (f, &count) in cfg.layout.iter().enumerate() {
        for s in 0..count {
            let mut spec = family_spec(f, s, cfg.image_size);
            spec.seed = derive_seed(cfg.seed, specs.len() as u64);
            if f == last {
                spec.stripe_prob = cfg.last_family_stripe_prob;
            }
            specs.push(spec);
            families.push(f);
        }
    }
    let domains = specs
        .iter()
        .map(|s| generate_domain(s, cfg.samples_per_domain))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Benchmark {
        specs,
        domains,
        families,
    })
}

/// `n_domains` domains in families of two (the last family holds one domain
/// when `n_domains` is odd).
pub fn make_benchmark(n_domains: usize, seed: u64) -> Result<Benchmark, SynthError> {
    if n_domains < 3 {
        return Err(SynthError::InvalidSpec("a benchmark needs at least 3 domains".into()));
    }
    let mut layout = vec![2; n_domains / 2];
    if n_domains % 2 == 1 {
        layout.push(1);
    }
    make_benchmark_with(&BenchmarkConfig {
        layout,
        seed,
        ..BenchmarkConfig::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            image_size: 48,
            cell_diameter_mean: 14.0,
            cell_diameter_std: 1.0,
            membrane_thickness: 3.0,
            seed: 5,
            ..DomainSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_domain(&small("a"), 4).unwrap();
        let b = generate_domain(&small("a"), 4).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = generate_domain(&DomainSpec { seed: 6, ..small("a") }, 4).unwrap();
        assert_ne!(a.samples()[0].image, c.samples()[0].image);
    }

    #[test]
    fn sample_does_not_depend_on_pool_size() {
        let a = generate_domain(&small("a"), 2).unwrap();
        let b = generate_domain(&small("a"), 5).unwrap();
        assert_eq!(a.samples()[1], b.samples()[1]);
    }

    #[test]
    fn no_stripes_without_probability() {
        let p = generate_domain(&small("a"), 20).unwrap();
        assert!(p.samples().iter().all(|s| !s.artifacts.stripe));
        let striped = generate_domain(
            &DomainSpec {
                stripe_prob: 1.0,
                ..small("a")
            },
            5,
        )
        .unwrap();
        for s in striped.samples() {
            assert!(s.artifacts.stripe);
            let bright_cols = (0..48).filter(|&x| (0..48).all(|y| s.image.get(x, y) == 255)).count();
            assert!((2..=6).contains(&bright_cols), "{bright_cols}");
        }
    }

    #[test]
    fn artifact_rates_follow_probabilities() {
        let spec = DomainSpec {
            stripe_prob: 0.3,
            black_tile_prob: 0.2,
            contrast_prob: 0.5,
            ..small("a")
        };
        let p = generate_domain(&spec, 200).unwrap();
        let rate =
            |f: fn(&ArtifactFlags) -> bool| p.samples().iter().filter(|s| f(&s.artifacts)).count() as f64 / 200.0;
        assert!((rate(|a| a.stripe) - 0.3).abs() < 0.1);
        assert!((rate(|a| a.black_tile) - 0.2).abs() < 0.1);
        assert!((rate(|a| a.contrast) - 0.5).abs() < 0.1);
    }

    #[test]
    fn membrane_pixels_lie_near_boundaries() {
        // independent check: a membrane pixel has a pixel of another cell, or
        // another membrane pixel leading to one, within the thickness
        let spec = small("a");
        let p = generate_domain(&spec, 3).unwrap();
        for s in p.samples() {
            let l = s.labels.as_ref().unwrap();
            let r = spec.membrane_thickness.ceil() as i64 + 1;
            for y in 0..48i64 {
                for x in 0..48i64 {
                    if l.get(x as usize, y as usize) != 0 {
                        continue;
                    }
                    let mut cells = std::collections::BTreeSet::new();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (nx, ny) = (x + dx, y + dy);
                            if (0..48).contains(&nx) && (0..48).contains(&ny) {
                                let v = l.get(nx as usize, ny as usize);
                                if v != 0 {
                                    cells.insert(v);
                                }
                            }
                        }
                    }
                    assert!(cells.len() >= 2 || cells.is_empty(), "isolated membrane at {x},{y}");
                }
            }
        }
    }

    #[test]
    fn membrane_fraction_matches_geometry() {
        for (d, t) in [(14.0, 3.0), (20.0, 3.0), (24.0, 4.0)] {
            let spec = DomainSpec {
                image_size: 96,
                cell_diameter_mean: d,
                membrane_thickness: t,
                ..small("a")
            };
            let p = generate_domain(&spec, 6).unwrap();
            let total: usize = p
                .samples()
                .iter()
                .map(|s| {
                    s.labels
                        .as_ref()
                        .unwrap()
                        .membrane_mask()
                        .iter()
                        .filter(|&&m| m)
                        .count()
                })
                .sum();
            let frac = total as f64 / (6.0 * 96.0 * 96.0);
            let expect = spec.analytic_membrane_fraction();
            assert!((frac / expect - 1.0).abs() <= 0.2, "d={d} t={t}: {frac} vs {expect}");
        }
    }

    #[test]
    fn at_least_two_instances() {
        let b = make_benchmark(6, 1).unwrap();
        for d in &b.domains {
            for s in d.samples() {
                let ids: std::collections::BTreeSet<u32> = s
                    .labels
                    .as_ref()
                    .unwrap()
                    .labels()
                    .iter()
                    .copied()
                    .filter(|&v| v > 0)
                    .collect();
                assert!(ids.len() >= 2);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert_eq!(
            DomainSpec {
                stripe_prob: 1.5,
                ..small("a")
            }
            .validate()
            .unwrap_err()
            .kind(),
            "InvalidSpec"
        );
        assert!(DomainSpec {
            cell_diameter_mean: 8.0,
            ..small("a")
        }
        .validate()
        .is_err());
        assert_eq!(
            DomainSpec {
                cell_diameter_mean: 60.0,
                ..small("a")
            }
            .validate()
            .unwrap_err()
            .kind(),
            "SpecInfeasible"
        );
        assert!(generate_domain(&small("a"), 0).is_err());
    }

    #[test]
    fn default_benchmark_layout() {
        let b = make_benchmark(6, 3).unwrap();
        assert_eq!(b.families, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(b.domains.len(), 6);
        let odd = make_benchmark(5, 3).unwrap();
        assert_eq!(odd.families, vec![0, 0, 1, 1, 2]);
        assert!(make_benchmark(2, 3).is_err());
        // siblings share morphology and differ in noise only
        assert_eq!(b.specs[0].cell_diameter_mean, b.specs[1].cell_diameter_mean);
        assert_eq!(b.specs[0].gamma, b.specs[1].gamma);
        assert_ne!(b.specs[0].noise_sigma, b.specs[1].noise_sigma);
    }

    #[test]
    fn ground_truth_map_round_trips_through_watershed() {
        use crate::segeval::{seeded_watershed, variation_of_information, WatershedConfig};
        let p = generate_domain(&small("a"), 5).unwrap();
        for s in p.samples() {
            let gt = s.labels.as_ref().unwrap();
            let pred = seeded_watershed(&ground_truth_membrane_map(gt), &WatershedConfig::default()).unwrap();
            let vi = variation_of_information(&pred, gt, true).unwrap();
            assert!(vi.vi_total <= 0.05, "{}", vi.vi_total);
        }
    }
}
