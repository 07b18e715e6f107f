use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, Split};
use crate::error::{CanError, Result};

/// Identity-balanced batches: `p` distinct ids with `k` images each.
///
/// The batch sequence of an epoch depends only on the manifest, `p`, `k`,
/// the seed and the epoch number.
#[derive(Clone, Debug)]
pub struct PkSampler {
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    /// Training record indices per id, ids ascending.
    groups: Vec<(i64, Vec<usize>)>,
    with_replacement: bool,
}

impl PkSampler {
    /// Strict sampler: every training id needs at least `k` images.
    pub fn new(manifest: &Manifest, p: usize, k: usize, seed: u64) -> Result<Self> {
        Self::build(manifest, p, k, seed, false)
    }

    /// Ids with fewer than `k` images are topped up by drawing with
    /// replacement.
    pub fn with_replacement(manifest: &Manifest, p: usize, k: usize, seed: u64) -> Result<Self> {
        Self::build(manifest, p, k, seed, true)
    }

    fn build(manifest: &Manifest, p: usize, k: usize, seed: u64, with_replacement: bool) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(CanError::Config("P and K must be >= 1".into()));
        }
        let groups: Vec<(i64, Vec<usize>)> = manifest
            .train_ids()
            .into_iter()
            .map(|id| (id, manifest.indices(Split::Train, id).to_vec()))
            .collect();
        if groups.len() < p {
            return Err(CanError::Data(format!(
                "PK sampling needs {p} training ids, manifest has {}",
                groups.len()
            )));
        }
        for (id, idx) in &groups {
            if idx.len() < k {
                if !with_replacement {
                    return Err(CanError::Data(format!(
                        "train id {id} has {} images, PK sampling needs K = {k}",
                        idx.len()
                    )));
                }
                log::warn!("train id {id} has {} < K = {k} images; sampling with replacement", idx.len());
            }
        }
        Ok(PkSampler {
            p,
            k,
            seed,
            groups,
            with_replacement,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn num_ids(&self) -> usize {
        self.groups.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.groups.len().div_ceil(self.p)
    }

    /// All batches of `epoch`. Every id appears at least once; a short final
    /// group is filled with other ids.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(&mut rng);
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        for chunk in order.chunks(self.p) {
            let mut ids = chunk.to_vec();
            if ids.len() < self.p {
                let mut extra: Vec<usize> = (0..self.groups.len()).filter(|g| !ids.contains(g)).collect();
                extra.shuffle(&mut rng);
                ids.extend(extra.into_iter().take(self.p - ids.len()));
            }
            let mut batch = Vec::with_capacity(self.batch_size());
            for g in ids {
                batch.extend(self.draw(g, &mut rng));
            }
            batches.push(batch);
        }
        batches
    }

    fn draw(&self, group: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let pool = &self.groups[group].1;
        let mut picked = pool.clone();
        picked.shuffle(rng);
        picked.truncate(self.k);
        while picked.len() < self.k && self.with_replacement {
            picked.push(pool[rng.gen_range(0..pool.len())]);
        }
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRecord;
    use std::collections::BTreeMap;

    fn manifest(per_id: &[usize]) -> Manifest {
        let mut records = Vec::new();
        for (id, &n) in per_id.iter().enumerate() {
            for i in 0..n {
                records.push(SampleRecord {
                    person_id: id as i64,
                    camera_id: (i % 2) as u32,
                    split: Split::Train,
                    file: format!("{id}_{i}.cant"),
                });
            }
        }
        Manifest::new("/nonexistent", records).unwrap()
    }

    #[test]
    fn exhaustive_small_case() {
        let m = manifest(&[2, 2]);
        let s = PkSampler::new(&m, 2, 2, 0).unwrap();
        let batches = s.epoch_batches(0);
        assert_eq!(batches.len(), 1);
        let mut all = batches[0].clone();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn full_size_batch_size() {
        let m = manifest(&[4; 10]);
        assert_eq!(PkSampler::new(&m, 8, 4, 0).unwrap().batch_size(), 32);
    }

    #[test]
    fn composition_coverage_and_determinism() {
        let m = manifest(&[5, 4, 6, 4, 7, 4, 4]);
        let s = PkSampler::new(&m, 3, 4, 42).unwrap();
        for epoch in 0..5 {
            let batches = s.epoch_batches(epoch);
            let mut seen = std::collections::BTreeSet::new();
            for b in &batches {
                assert_eq!(b.len(), 12);
                let mut per_id: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
                for &i in b {
                    per_id.entry(m.records[i].person_id).or_default().push(i);
                }
                assert_eq!(per_id.len(), 3);
                for idx in per_id.values() {
                    assert_eq!(idx.len(), 4);
                    let mut dedup = idx.clone();
                    dedup.dedup();
                    assert_eq!(dedup.len(), 4, "no repeats within an id when enough images exist");
                }
                seen.extend(per_id.keys().copied());
            }
            assert_eq!(seen.len(), 7);
            assert_eq!(batches, s.epoch_batches(epoch));
        }
        assert_ne!(s.epoch_batches(0), s.epoch_batches(1));
    }

    #[test]
    fn too_few_images_or_ids() {
        let m = manifest(&[4, 3]);
        assert!(PkSampler::new(&m, 2, 4, 0).is_err());
        let s = PkSampler::with_replacement(&m, 2, 4, 0).unwrap();
        assert!(s.epoch_batches(0).iter().all(|b| b.len() == 8));
        assert!(PkSampler::new(&manifest(&[4]), 2, 4, 0).is_err());
    }
}
