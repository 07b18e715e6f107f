//! Synthetic pedestrians: each identity is a vertical stack of colored
//! bands (think hat / shirt / trousers) drawn from a small palette, so ids
//! share individual bands but differ in their arrangement. Every image adds
//! a per-camera color cast, a small random shift and Gaussian noise.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, SampleRecord, Split, MANIFEST_FILE};
use crate::error::{CanError, Result};
use crate::tensor::{write_blob, BlobDtype, Tensor};

const PALETTE: [[f64; 3]; 8] = [
    [220.0, 40.0, 40.0],
    [40.0, 170.0, 60.0],
    [40.0, 70.0, 210.0],
    [230.0, 210.0, 60.0],
    [30.0, 30.0, 30.0],
    [235.0, 235.0, 235.0],
    [150.0, 80.0, 180.0],
    [120.0, 120.0, 120.0],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_ids: usize,
    pub per_id: usize,
    pub height: usize,
    pub width: usize,
    pub cameras: usize,
    pub bands: usize,
    /// Palette colors in use (at most 8); fewer colors make ids overlap more.
    pub colors: usize,
    /// Noise standard deviation in [0, 1] intensity units.
    pub noise: f64,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_ids: 16,
            per_id: 8,
            height: 96,
            width: 32,
            cameras: 2,
            bands: 6,
            colors: PALETTE.len(),
            noise: 0.1,
            max_shift: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_ids < 2 || self.per_id < 2 {
            return Err(CanError::Config("need at least 2 ids with 2 images each".into()));
        }
        if self.height == 0 || self.width == 0 || self.bands == 0 || self.bands > self.height {
            return Err(CanError::Config(format!(
                "invalid image geometry {}×{} with {} bands",
                self.height, self.width, self.bands
            )));
        }
        if self.cameras == 0 {
            return Err(CanError::Config("need at least one camera".into()));
        }
        if self.colors < 2 || self.colors > PALETTE.len() {
            return Err(CanError::Config(format!("colors must lie in 2..={}", PALETTE.len())));
        }
        let combos = (self.colors as f64).powi(self.bands as i32);
        if combos < self.num_ids as f64 {
            return Err(CanError::Config("too many ids for the band palette".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(CanError::Config("noise must be >= 0".into()));
        }
        Ok(())
    }

    /// `(train, query, gallery)` image counts per id.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let train = self.per_id / 2;
        let query = usize::from(self.per_id - train >= 2);
        (train, query, self.per_id - train - query)
    }
}

/// Band palette indices for every id; all distinct.
fn id_patterns(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.num_ids);
    while out.len() < cfg.num_ids {
        let p: Vec<usize> = (0..cfg.bands).map(|_| rng.gen_range(0..cfg.colors)).collect();
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}

fn render(
    pattern: &[usize],
    cfg: &SynthConfig,
    tint: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let (h, w) = (cfg.height, cfg.width);
    let s = cfg.max_shift as i64;
    let dy = rng.gen_range(-s..=s);
    let dx = rng.gen_range(-s..=s);
    let noise = Normal::new(0.0, cfg.noise * 255.0).expect("finite noise");
    let mut data = vec![0.0; 3 * h * w];
    for r in 0..h {
        let src_r = (r as i64 - dy).clamp(0, h as i64 - 1) as usize;
        let band = (src_r * cfg.bands / h).min(cfg.bands - 1);
        let color = PALETTE[pattern[band]];
        for c in 0..w {
            // Fade toward grey at the left/right border, like a background.
            let src_c = (c as i64 - dx).clamp(0, w as i64 - 1) as usize;
            let edge = (src_c.min(w - 1 - src_c) as f64 / (w as f64 / 6.0)).min(1.0);
            for ch in 0..3 {
                let base = 128.0 + edge * (color[ch] - 128.0) + tint[ch];
                let v = base + if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                data[(ch * h + r) * w + c] = v.clamp(0.0, 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("image shape")
}

/// Writes `images/*.cant` and `manifest.jsonl` under `out_dir`.
///
/// Per id, the first half of the images are training images, the next one
/// is the query and the rest are gallery images. Cameras cycle over image
/// positions, so every query has a cross-camera gallery match when
/// `cameras >= 2` and enough images exist.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| CanError::io(&img_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patterns = id_patterns(cfg, &mut rng);
    let tints: Vec<[f64; 3]> = (0..cfg.cameras)
        .map(|_| [0, 1, 2].map(|_| rng.gen_range(-20.0..20.0)))
        .collect();
    let (train, query, _) = cfg.split_counts();
    let mut records = Vec::with_capacity(cfg.num_ids * cfg.per_id);
    for (id, pattern) in patterns.iter().enumerate() {
        for i in 0..cfg.per_id {
            let cam = i % cfg.cameras;
            let split = if i < train {
                Split::Train
            } else if i < train + query {
                Split::Query
            } else {
                Split::Gallery
            };
            let file = format!("images/{:04}_c{}s1_{:06}_00.cant", id, cam + 1, i);
            let img = render(pattern, cfg, tints[cam], &mut rng);
            write_blob(out_dir.join(&file), &img, BlobDtype::F32)?;
            records.push(SampleRecord {
                person_id: id as i64,
                camera_id: cam as u32,
                split,
                file,
            });
        }
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;
    use crate::tensor::read_blob;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            num_ids: 4,
            per_id: 4,
            height: 12,
            width: 6,
            noise,
            max_shift: if noise == 0.0 { 0 } else { 1 },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_images_of_an_id_match_within_camera() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&small(0.0), dir.path()).unwrap();
        let a = read_blob(m.path_of(&m.records[0])).unwrap();
        let b = read_blob(m.path_of(&m.records[2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_and_disjoint_query_gallery() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            height: 24,
            width: 8,
            ..SynthConfig::default()
        };
        let m = generate_synthetic(&cfg, dir.path()).unwrap();
        assert_eq!(m.len(), 128);
        let q: HashSet<_> = m.records.iter().filter(|r| r.split == Split::Query).map(|r| &r.file).collect();
        let g: HashSet<_> = m.records.iter().filter(|r| r.split == Split::Gallery).map(|r| &r.file).collect();
        assert_eq!(q.len(), 16);
        assert_eq!(g.len(), 48);
        assert!(q.is_disjoint(&g));
        let cams: HashSet<_> = m.records.iter().map(|r| r.camera_id).collect();
        assert!(cams.len() >= 2);
        let back = load_manifest(dir.path()).unwrap();
        assert_eq!(back.records, m.records);
        back.validate_pk(4).unwrap();
    }

    #[test]
    fn patterns_are_distinct_and_seeded() {
        let cfg = SynthConfig::default();
        let a = id_patterns(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), a.len());
        assert_eq!(a, id_patterns(&cfg, &mut ChaCha8Rng::seed_from_u64(1)));
    }

    #[test]
    fn deterministic_per_seed() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = generate_synthetic(&small(0.1), d1.path()).unwrap();
        let m2 = generate_synthetic(&small(0.1), d2.path()).unwrap();
        for (a, b) in m1.records.iter().zip(&m2.records) {
            assert_eq!(read_blob(m1.path_of(a)).unwrap(), read_blob(m2.path_of(b)).unwrap());
        }
    }

    #[test]
    fn rejects_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { num_ids: 1, ..small(0.0) };
        assert!(generate_synthetic(&cfg, dir.path()).is_err());
        let cfg = SynthConfig { height: 0, ..small(0.0) };
        assert!(generate_synthetic(&cfg, dir.path()).is_err());
    }
}
