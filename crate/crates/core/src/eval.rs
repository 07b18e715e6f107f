//! Retrieval evaluation: cosine distances, CMC and multi-shot mAP with the
//! same-id/same-camera exclusion rule.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CanError, Result};
use crate::tensor::Tensor;

/// Identity and camera of one query or gallery item. `id == -1` is junk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: i64,
    pub cam: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub values: Tensor,
    pub query: Vec<ItemMeta>,
    pub gallery: Vec<ItemMeta>,
}

impl DistanceMatrix {
    pub fn new(values: Tensor, query: Vec<ItemMeta>, gallery: Vec<ItemMeta>) -> Result<Self> {
        if values.shape() != [query.len(), gallery.len()] {
            return Err(CanError::Shape(format!(
                "distance matrix {:?} does not match {} queries × {} gallery items",
                values.shape(),
                query.len(),
                gallery.len()
            )));
        }
        Ok(DistanceMatrix { values, query, gallery })
    }

    pub fn row(&self, q: usize) -> &[f64] {
        let ng = self.gallery.len();
        &self.values.data()[q * ng..(q + 1) * ng]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub cmc: Vec<f64>,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }
}

/// `1 - cos(q_i, g_j)` for every pair.
pub fn cosine_distance_matrix(q: &Tensor, g: &Tensor) -> Result<Tensor> {
    if q.ndim() != 2 || g.ndim() != 2 || q.shape()[1] != g.shape()[1] {
        return Err(CanError::Shape(format!(
            "cosine distance needs [nq×d] and [ng×d], got {:?} and {:?}",
            q.shape(),
            g.shape()
        )));
    }
    let unit = |x: &Tensor, what: &str| -> Result<Tensor> {
        let d = x.shape()[1];
        let mut out = x.clone();
        for (i, row) in out.data_mut().chunks_mut(d.max(1)).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(CanError::InvalidArgument(format!("{what} row {i} has zero or non-finite norm")));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(out)
    };
    let sim = unit(q, "query")?.matmul_nt(&unit(g, "gallery")?)?;
    Ok(sim.map(|s| (1.0 - s).clamp(0.0, 2.0)))
}

/// Gallery indices by ascending distance, ties by index, `excluded` removed.
pub fn rank_gallery(row: &[f64], excluded: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| !excluded.get(j).copied().unwrap_or(false)).collect();
    order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Exclusion mask for one query: junk items and same id on the same camera.
pub fn exclusion_mask(query: ItemMeta, gallery: &[ItemMeta]) -> Vec<bool> {
    gallery
        .iter()
        .map(|g| g.id == -1 || (g.id == query.id && g.cam == query.cam))
        .collect()
}

/// Ranked gallery plus per-rank hit flags for one query.
fn query_hits(dm: &DistanceMatrix, q: usize) -> (Vec<usize>, Vec<bool>) {
    let meta = dm.query[q];
    let order = rank_gallery(dm.row(q), &exclusion_mask(meta, &dm.gallery));
    let hits = order.iter().map(|&j| dm.gallery[j].id == meta.id).collect();
    (order, hits)
}

pub fn average_precision(hits: &[bool]) -> f64 {
    let relevant = hits.iter().filter(|&&h| h).count();
    if relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, _) in hits.iter().enumerate().filter(|(_, &h)| h) {
        found += 1;
        sum += found as f64 / (rank + 1) as f64;
    }
    sum / relevant as f64
}

pub fn evaluate(dm: &DistanceMatrix, max_rank: usize) -> Result<EvalReport> {
    if max_rank == 0 {
        return Err(CanError::InvalidArgument("max_rank must be at least 1".into()));
    }
    let mut cmc_hits = vec![0usize; max_rank];
    let mut ap_sum = 0.0;
    let (mut evaluated, mut skipped) = (0, 0);
    for q in 0..dm.query.len() {
        let (order, hits) = query_hits(dm, q);
        if order.is_empty() {
            return Err(CanError::InvalidArgument(format!("query {q}: gallery is empty after exclusion")));
        }
        let Some(first) = hits.iter().position(|&h| h) else {
            skipped += 1;
            continue;
        };
        evaluated += 1;
        ap_sum += average_precision(&hits);
        for c in cmc_hits.iter_mut().skip(first) {
            *c += 1;
        }
    }
    let denom = evaluated.max(1) as f64;
    Ok(EvalReport {
        map: ap_sum / denom,
        cmc: cmc_hits.iter().map(|&c| c as f64 / denom).collect(),
        queries_evaluated: evaluated,
        queries_skipped: skipped,
    })
}

/// One CSV line per query: query index, id, cam, then the top `top`
/// gallery indices.
pub fn write_rank_lists(dm: &DistanceMatrix, top: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("query,id,cam,ranked_gallery\n");
    for q in 0..dm.query.len() {
        let (order, _) = query_hits(dm, q);
        let list: Vec<String> = order.iter().take(top).map(|j| j.to_string()).collect();
        let _ = writeln!(out, "{q},{},{},{}", dm.query[q].id, dm.query[q].cam, list.join(" "));
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| CanError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(id: i64, cam: u32) -> ItemMeta {
        ItemMeta { id, cam }
    }

    fn t(rows: usize, cols: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let q = t(1, 2, vec![1.0, 0.0]);
        let g = t(3, 2, vec![2.0, 0.0, 0.0, 3.0, -1.0, 0.0]);
        assert_eq!(cosine_distance_matrix(&q, &g).unwrap().data(), &[0.0, 1.0, 2.0]);
        assert!(cosine_distance_matrix(&t(1, 2, vec![0.0, 0.0]), &g).is_err());
        assert!(cosine_distance_matrix(&q, &t(1, 3, vec![1.0; 3])).is_err());
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_gallery(&[0.5, 0.1, 0.9], &[]), [1, 0, 2]);
        assert_eq!(rank_gallery(&[0.5, 0.5], &[]), [0, 1]);
        assert_eq!(rank_gallery(&[0.5, 0.1, 0.9], &[false, true, false]), [0, 2]);
    }

    #[test]
    fn ap_with_hits_at_one_and_three() {
        let dm = DistanceMatrix::new(
            t(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]),
            vec![meta(1, 0)],
            vec![meta(1, 1), meta(2, 1), meta(1, 1), meta(3, 1), meta(4, 1)],
        )
        .unwrap();
        let r = evaluate(&dm, 5).unwrap();
        assert!((r.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(r.cmc, [1.0; 5]);
    }

    #[test]
    fn perfect_ranking() {
        let dm = DistanceMatrix::new(
            t(2, 4, vec![0.0, 0.1, 0.8, 0.9, 0.7, 0.9, 0.1, 0.2]),
            vec![meta(0, 0), meta(1, 0)],
            vec![meta(0, 1), meta(0, 1), meta(1, 1), meta(1, 1)],
        )
        .unwrap();
        let r = evaluate(&dm, 4).unwrap();
        assert_eq!((r.map, r.cmc.clone()), (1.0, vec![1.0; 4]));
    }

    #[test]
    fn same_camera_positive_is_skipped() {
        let dm = DistanceMatrix::new(
            t(2, 2, vec![0.1, 0.2, 0.3, 0.1]),
            vec![meta(0, 0), meta(1, 0)],
            vec![meta(0, 0), meta(1, 1)],
        )
        .unwrap();
        let r = evaluate(&dm, 1).unwrap();
        assert_eq!((r.queries_evaluated, r.queries_skipped), (1, 1));
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn junk_only_gallery_is_an_error() {
        let dm = DistanceMatrix::new(t(1, 1, vec![0.0]), vec![meta(0, 0)], vec![meta(-1, 1)]).unwrap();
        assert!(evaluate(&dm, 1).is_err());
        assert!(DistanceMatrix::new(t(1, 2, vec![0.0; 2]), vec![meta(0, 0)], vec![meta(0, 1)]).is_err());
    }

    #[test]
    fn report_json_uses_map_key() {
        let r = EvalReport { map: 0.5, cmc: vec![1.0], queries_evaluated: 1, queries_skipped: 0 };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"mAP\":0.5"));
    }

    #[test]
    fn rank_list_csv() {
        let dm = DistanceMatrix::new(t(1, 3, vec![0.3, 0.1, 0.2]), vec![meta(0, 0)], vec![meta(0, 1); 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ranks.csv");
        write_rank_lists(&dm, 2, &p).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap().lines().nth(1), Some("0,0,0,1 2"));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<ItemMeta>, Vec<ItemMeta>)> {
        (1usize..5, 2usize..12).prop_flat_map(|(nq, ng)| {
            let m = (-1i64..3, 0u32..2).prop_map(|(id, cam)| meta(id, cam));
            let q = (0i64..3, 0u32..2).prop_map(|(id, cam)| meta(id, cam));
            (
                prop::collection::vec(0.0f64..2.0, nq * ng),
                prop::collection::vec(q, nq),
                prop::collection::vec(m, ng),
            )
        })
    }

    proptest! {
        #[test]
        fn cmc_monotone_and_bounded((d, q, g) in instance()) {
            let ng = g.len();
            let dm = DistanceMatrix::new(t(q.len(), ng, d), q, g).unwrap();
            if let Ok(r) = evaluate(&dm, ng) {
                prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!((0.0..=1.0).contains(&r.map));
                if r.queries_evaluated > 0 {
                    prop_assert_eq!(*r.cmc.last().unwrap(), 1.0);
                }
            }
        }

        #[test]
        fn gallery_permutation_keeps_map((d, q, g) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (nq, ng) = (q.len(), g.len());
            // distinct distances
            let d: Vec<f64> = d.iter().enumerate().map(|(i, v)| v + i as f64 * 1e-9).collect();
            let mut perm: Vec<usize> = (0..ng).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pd: Vec<f64> = (0..nq).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| d[i * ng + j]).collect();
            let pg: Vec<ItemMeta> = perm.iter().map(|&j| g[j]).collect();
            let a = evaluate(&DistanceMatrix::new(t(nq, ng, d), q.clone(), g).unwrap(), ng);
            let b = evaluate(&DistanceMatrix::new(t(nq, ng, pd), q, pg).unwrap(), ng);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a.map - b.map).abs() < 1e-12);
                    prop_assert_eq!(a.cmc, b.cmc);
                }
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }

        #[test]
        fn scaling_features_keeps_distances(v in prop::collection::vec(0.1f64..1.0, 12), s in 0.1f64..10.0) {
            let q = t(2, 3, v[..6].to_vec());
            let g = t(2, 3, v[6..].to_vec());
            let a = cosine_distance_matrix(&q, &g).unwrap();
            let b = cosine_distance_matrix(&q.map(|x| x * s), &g.map(|x| x * s)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
