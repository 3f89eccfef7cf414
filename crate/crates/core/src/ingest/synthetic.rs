//! Seeded stand-in for a radiograph corpus: each modeled pathology is a
//! Gaussian bright spot at its own fixed location.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{tensor_to_png, write_manifest, ImageRecord, Label, ManifestEntry, PixelTensor};
use crate::error::{Error, Result};
use crate::pathology::NUM_PATHOLOGIES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub image_size: u32,
    /// Pathologies `0..n_pathologies` carry markers; the rest are always negative.
    pub n_pathologies: usize,
    pub prevalence: f64,
    pub noise_sigma: f64,
    /// Spot radius (standard deviation) as a fraction of the image size.
    pub marker_sigma: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub background: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            image_size: 64,
            n_pathologies: 2,
            prevalence: 0.5,
            noise_sigma: 0.05,
            marker_sigma: 0.08,
            amplitude_min: 0.4,
            amplitude_max: 0.9,
            background: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.image_size < 8 {
            return bad("image_size must be at least 8");
        }
        if self.n_pathologies == 0 || self.n_pathologies > NUM_PATHOLOGIES {
            return bad("n_pathologies must be in 1..=14");
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return bad("prevalence must be in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0) || !(self.marker_sigma > 0.0) {
            return bad("noise_sigma must be >= 0 and marker_sigma > 0");
        }
        if !(self.amplitude_min > 0.0 && self.amplitude_min <= self.amplitude_max) {
            return bad("need 0 < amplitude_min <= amplitude_max");
        }
        if !(0.0..1.0).contains(&self.background) {
            return bad("background must be in [0, 1)");
        }
        Ok(())
    }
}

/// Marker centre for a pathology as `(x, y)` fractions of the image side.
/// The first four sit in separate quadrants; later ones use a 4×4 grid.
pub fn marker_center(pathology: usize) -> (f64, f64) {
    const QUADRANTS: [(f64, f64); 4] = [(0.25, 0.25), (0.75, 0.75), (0.75, 0.25), (0.25, 0.75)];
    if pathology < 4 {
        QUADRANTS[pathology]
    } else {
        let cell = (pathology - 4) * 3 % 16;
        ((cell % 4) as f64 / 4.0 + 0.125, (cell / 4) as f64 / 4.0 + 0.125)
    }
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec, n_images: usize) -> Result<Vec<ImageRecord>> {
    spec.validate()?;
    if n_images == 0 {
        return Err(Error::Empty("n_images must be positive".into()));
    }
    (0..n_images).map(|i| generate_one(spec, i)).collect()
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let size = spec.image_size as usize;
    let mut labels = vec![Label::Negative; NUM_PATHOLOGIES];
    let mut markers = Vec::new();
    for (k, label) in labels.iter_mut().enumerate().take(spec.n_pathologies) {
        if rng.random::<f64>() < spec.prevalence {
            *label = Label::Positive;
            let amp = rng.random_range(spec.amplitude_min..=spec.amplitude_max);
            markers.push((marker_center(k), amp));
        }
    }

    let sigma_px = spec.marker_sigma * size as f64;
    let two_s2 = 2.0 * sigma_px * sigma_px;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let mut v = spec.background;
            for &((cx, cy), amp) in &markers {
                let dx = x as f64 + 0.5 - cx * size as f64;
                let dy = y as f64 + 0.5 - cy * size as f64;
                v += amp * (-(dx * dx + dy * dy) / two_s2).exp();
            }
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            let v = v.clamp(0.0, 1.0) as f32;
            for ch in 0..3 {
                data[ch * plane + y * size + x] = v;
            }
        }
    }

    ImageRecord::new(
        format!("images/synth-{:05}.png", index),
        format!("synthetic:{}:{}", spec.seed, index),
        labels,
        PixelTensor::new(size, size, data)?,
    )
}

/// Persist a generated dataset as PNGs plus a manifest and the spec, so later
/// stages read it through the ordinary manifest loader. Image ids are already
/// manifest-relative paths, so reloaded records keep their ids.
pub fn write_synthetic_dataset(dir: &Path, spec: &SyntheticSpec, records: &[ImageRecord]) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let rel = r.image_id.clone();
        let file = dir.join(&rel);
        std::fs::write(&file, tensor_to_png(&r.pixels)?).map_err(|e| Error::io(&file, e))?;
        entries.push(ManifestEntry { path: rel, labels: r.labels.clone() });
    }
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    let spec_path = dir.join("synthetic_spec.json");
    std::fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec { seed: 7, ..Default::default() };
        let a = generate_synthetic_dataset(&spec, 100).unwrap();
        let b = generate_synthetic_dataset(&spec, 100).unwrap();
        assert_eq!(a.len(), 100);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image_id, y.image_id);
            assert_eq!(x.pixels.to_le_bytes(), y.pixels.to_le_bytes());
            assert_eq!(x.labels, y.labels);
        }
        let other = generate_synthetic_dataset(&SyntheticSpec { seed: 8, ..spec }, 100).unwrap();
        assert_ne!(a[0].pixels, other[0].pixels);
    }

    #[test]
    fn marker_brighter_than_background_without_noise() {
        let spec = SyntheticSpec { noise_sigma: 0.0, prevalence: 1.0, n_pathologies: 1, ..Default::default() };
        let rec = &generate_synthetic_dataset(&spec, 1).unwrap()[0];
        assert!(rec.labels[0].is_positive());
        let size = spec.image_size as usize;
        let (cx, cy) = marker_center(0);
        let (mx, my) = ((cx * size as f64) as usize, (cy * size as f64) as usize);
        let centre = rec.pixels.get(0, my, mx);
        let corner = rec.pixels.get(0, size - 1, size - 1);
        assert!(centre > corner + 0.3, "centre {centre} corner {corner}");
        assert!((corner as f64 - spec.background).abs() < 1e-3);
    }

    #[test]
    fn prevalence_within_binomial_99_interval() {
        let n = 1000u64;
        let spec = SyntheticSpec { seed: 11, prevalence: 0.5, ..Default::default() };
        let recs = generate_synthetic_dataset(&spec, n as usize).unwrap();
        let bin = Binomial::new(0.5, n).unwrap();
        let (lo, hi) = (bin.inverse_cdf(0.005), bin.inverse_cdf(0.995));
        for k in 0..spec.n_pathologies {
            let count = recs.iter().filter(|r| r.labels[k].is_positive()).count() as u64;
            assert!((lo..=hi).contains(&count), "pathology {k}: {count} not in [{lo}, {hi}]");
        }
        // unmodeled pathologies stay negative
        assert!(recs.iter().all(|r| r.labels[2..].iter().all(|l| *l == Label::Negative)));
    }

    #[test]
    fn labels_match_markers() {
        let spec = SyntheticSpec { noise_sigma: 0.0, seed: 3, ..Default::default() };
        let size = spec.image_size as usize;
        for rec in generate_synthetic_dataset(&spec, 40).unwrap() {
            for k in 0..spec.n_pathologies {
                let (cx, cy) = marker_center(k);
                let v = rec.pixels.get(0, (cy * size as f64) as usize, (cx * size as f64) as usize) as f64;
                assert_eq!(v > spec.background + 0.2, rec.labels[k].is_positive());
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic_dataset(&SyntheticSpec::default(), 0).is_err());
        let spec = SyntheticSpec { n_pathologies: 15, ..Default::default() };
        assert!(generate_synthetic_dataset(&spec, 1).is_err());
    }
}
