//! Single-query retrieval evaluation: CMC and mAP.
//!
//! Per query, the gallery is sorted by Euclidean distance (ascending, ties
//! broken by ascending gallery index), then filtered: junk ids and entries
//! sharing BOTH person and camera with the query are dropped. CMC(k) is the
//! fraction of valid queries whose first true match lands within rank k;
//! mAP is the mean average precision over valid queries. Queries left with
//! no positive after filtering are excluded from the averages and tallied.

mod features;

pub use features::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    /// Length of the reported CMC curve.
    pub max_rank: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { max_rank: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `cmc[k-1]` = fraction of valid queries matched within rank k.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Aligned with the query list; `None` marks excluded queries.
    pub per_query_ap: Vec<Option<f64>>,
    pub n_valid_queries: usize,
    pub n_excluded: usize,
}

impl EvalResult {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[k - 1]
    }

    /// Plain-text report: CMC at the standard cutoffs, mAP and the
    /// exclusion tally.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for k in [1usize, 5, 10, 20] {
            if k <= self.cmc.len() {
                s.push_str(&format!("rank-{k}: {:.4}\n", self.cmc[k - 1]));
            }
        }
        s.push_str(&format!("mAP: {:.4}\n", self.map));
        s.push_str(&format!("valid queries: {}\n", self.n_valid_queries));
        s.push_str(&format!("excluded queries: {}\n", self.n_excluded));
        s
    }
}

/// Pairwise Euclidean distances between query and gallery feature rows.
pub fn distance_matrix(q: ArrayView2<f32>, g: ArrayView2<f32>) -> Result<Array2<f64>> {
    if q.ncols() != g.ncols() {
        return Err(Error::Shape(format!(
            "feature dims differ: query {} vs gallery {}",
            q.ncols(),
            g.ncols()
        )));
    }
    let qd = q.mapv(|v| v as f64);
    let gd = g.mapv(|v| v as f64);
    let qn: Vec<f64> = qd.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let gn: Vec<f64> = gd.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut cross = qd.dot(&gd.t());
    for (i, mut row) in cross.axis_iter_mut(Axis(0)).enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (qn[i] + gn[j] - 2.0 * *v).max(0.0).sqrt();
        }
    }
    Ok(cross)
}

/// AP of an already-ranked, already-filtered binary relevance list:
/// mean over positives of (positives seen so far / rank). `None` when the
/// list holds no positive.
pub fn average_precision(ranked_flags: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0f64;
    for (i, &flag) in ranked_flags.iter().enumerate() {
        if flag {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

/// One gallery entry of a filtered ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub gallery_index: usize,
    pub distance: f64,
    pub positive: bool,
}

/// Sort one query's gallery by distance (ascending gallery index on ties)
/// and apply the single-query filter. This is the one ranking code path:
/// `cmc_map` and `rank_list` both consume it.
fn filtered_ranking(
    dist_row: &[f64],
    query: &ImageRecord,
    gallery: &[ImageRecord],
) -> Vec<RankEntry> {
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| {
        dist_row[a]
            .partial_cmp(&dist_row[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .filter(|&j| {
            let g = &gallery[j];
            !g.is_junk()
                && !(g.person_id == query.person_id && g.camera_id == query.camera_id)
        })
        .map(|j| RankEntry {
            gallery_index: j,
            distance: dist_row[j],
            positive: gallery[j].person_id == query.person_id,
        })
        .collect()
}

/// Single-query CMC and mAP over a distance matrix.
pub fn cmc_map(
    dist: &Array2<f64>,
    query: &[ImageRecord],
    gallery: &[ImageRecord],
    protocol: &EvalProtocol,
) -> Result<EvalResult> {
    let (nq, ng) = dist.dim();
    if nq != query.len() || ng != gallery.len() {
        return Err(Error::Shape(format!(
            "distance matrix {nq}x{ng} does not match {} queries / {} gallery entries",
            query.len(),
            gallery.len()
        )));
    }
    if protocol.max_rank == 0 {
        return Err(Error::InvalidArgument("max_rank must be positive".into()));
    }

    let mut first_hit = vec![0u64; protocol.max_rank];
    let mut per_query_ap: Vec<Option<f64>> = Vec::with_capacity(nq);
    let mut n_valid = 0usize;
    for (i, q) in query.iter().enumerate() {
        let row = dist.row(i);
        let ranking = filtered_ranking(row.as_slice().expect("row-major"), q, gallery);
        let flags: Vec<bool> = ranking.iter().map(|e| e.positive).collect();
        let ap = average_precision(&flags);
        if let Some(_ap) = ap {
            n_valid += 1;
            let rank = flags.iter().position(|&f| f).expect("a positive exists") + 1;
            if rank <= protocol.max_rank {
                first_hit[rank - 1] += 1;
            }
        }
        per_query_ap.push(ap);
    }
    if n_valid == 0 {
        return Err(Error::InvalidArgument(
            "no query has a valid gallery match after filtering".into(),
        ));
    }

    let mut cmc = Vec::with_capacity(protocol.max_rank);
    let mut acc = 0u64;
    for hits in &first_hit {
        acc += hits;
        cmc.push(acc as f64 / n_valid as f64);
    }
    let map = per_query_ap.iter().flatten().sum::<f64>() / n_valid as f64;
    Ok(EvalResult {
        cmc,
        map,
        per_query_ap,
        n_valid_queries: n_valid,
        n_excluded: nq - n_valid,
    })
}

/// Filtered top-k list for one query, for montage rendering and listings.
pub fn rank_list(
    query_index: usize,
    dist: &Array2<f64>,
    query: &[ImageRecord],
    gallery: &[ImageRecord],
    k: usize,
) -> Result<Vec<RankEntry>> {
    if query_index >= query.len() || dist.nrows() != query.len() {
        return Err(Error::InvalidArgument(format!(
            "query index {query_index} out of range for {} queries",
            query.len()
        )));
    }
    let row = dist.row(query_index);
    let ranking = filtered_ranking(
        row.as_slice().expect("row-major"),
        &query[query_index],
        gallery,
    );
    if k > ranking.len() {
        return Err(Error::InvalidArgument(format!(
            "k={k} exceeds the {} valid gallery entries for query {query_index}",
            ranking.len()
        )));
    }
    Ok(ranking.into_iter().take(k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn rec(pid: i64, cam: u32) -> ImageRecord {
        ImageRecord {
            image_path: format!("{pid}_{cam}.png").into(),
            person_id: pid,
            camera_id: cam,
        }
    }

    #[test]
    fn distance_matrix_hand_cases() {
        let q = array![[0.0f32, 0.0]];
        let g = array![[3.0f32, 4.0]];
        let d = distance_matrix(q.view(), g.view()).unwrap();
        assert_relative_eq!(d[(0, 0)], 5.0, epsilon = 1e-12);

        let same = array![[1.0f32, 2.0], [3.0, -1.0]];
        let d = distance_matrix(same.view(), same.view()).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(1, 1)], 0.0);

        let bad = distance_matrix(q.view(), array![[1.0f32, 2.0, 3.0]].view());
        assert!(bad.is_err());
    }

    #[test]
    fn distance_matrix_matches_naive_loop() {
        let mut rng = crate::rng::stream(5, "dm", &[]);
        use rand::Rng;
        let q = Array2::from_shape_fn((3, 7), |_| rng.gen_range(-1.0f32..1.0));
        let g = Array2::from_shape_fn((4, 7), |_| rng.gen_range(-1.0f32..1.0));
        let d = distance_matrix(q.view(), g.view()).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let naive: f64 = (0..7)
                    .map(|k| (q[(i, k)] as f64 - g[(j, k)] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert_relative_eq!(d[(i, j)], naive, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn average_precision_hand_cases() {
        // positives at ranks 1 and 3 of 3
        let ap = average_precision(&[true, false, true]).unwrap();
        assert_relative_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(ap, 0.833333, epsilon = 1e-6);
        // all positives first
        assert_eq!(average_precision(&[true, true, false]).unwrap(), 1.0);
        // single positive at rank 5
        assert_relative_eq!(
            average_precision(&[false, false, false, false, true]).unwrap(),
            0.2,
            epsilon = 1e-12
        );
        // no positive
        assert!(average_precision(&[false, false]).is_none());
    }

    #[test]
    fn perfect_features_give_perfect_scores() {
        let query = vec![rec(1, 0), rec(2, 0)];
        let gallery = vec![rec(1, 1), rec(2, 1), rec(3, 1)];
        let q = array![[0.0f32, 0.0], [10.0, 0.0]];
        let g = array![[0.0f32, 0.0], [10.0, 0.0], [55.0, 40.0]];
        let d = distance_matrix(q.view(), g.view()).unwrap();
        let r = cmc_map(&d, &query, &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(r.rank(1), 1.0);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.n_excluded, 0);
    }

    #[test]
    fn same_camera_entries_are_filtered() {
        // Gallery entry 0 shares id+camera with the query: it must be
        // invisible to scoring even at distance 0.
        let query = vec![rec(7, 0)];
        let gallery = vec![rec(7, 0), rec(7, 1), rec(8, 1)];
        let d = array![[0.0f64, 2.0, 1.0]];
        let r = cmc_map(&d, &query, &gallery, &EvalProtocol::default()).unwrap();
        // filtered ranking: (8,1) at 1.0 then (7,1) at 2.0 -> first match rank 2
        assert_eq!(r.rank(1), 0.0);
        assert_eq!(r.rank(2), 1.0);
        assert_relative_eq!(r.map, 0.5, epsilon = 1e-12);

        let top = rank_list(0, &d, &query, &gallery, 2).unwrap();
        assert_eq!(top[0].gallery_index, 2);
        assert_eq!(top[1].gallery_index, 1);
        assert!(top[1].positive);
    }

    #[test]
    fn junk_ids_never_score() {
        let query = vec![rec(1, 0)];
        let gallery = vec![rec(-1, 1), rec(1, 1)];
        let d = array![[0.0f64, 3.0]];
        let r = cmc_map(&d, &query, &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(r.rank(1), 1.0);
    }

    #[test]
    fn queries_without_positives_are_excluded_and_tallied() {
        let query = vec![rec(1, 0), rec(9, 0)];
        let gallery = vec![rec(1, 1), rec(2, 1)];
        let d = array![[0.5f64, 1.0], [0.2, 0.6]];
        let r = cmc_map(&d, &query, &gallery, &EvalProtocol::default()).unwrap();
        assert_eq!(r.n_valid_queries, 1);
        assert_eq!(r.n_excluded, 1);
        assert_eq!(r.per_query_ap[1], None);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let query = vec![rec(1, 0)];
        let gallery = vec![rec(2, 1), rec(1, 1)];
        let d = array![[1.0f64, 1.0]];
        let top = rank_list(0, &d, &query, &gallery, 2).unwrap();
        assert_eq!(top[0].gallery_index, 0);
        assert_eq!(top[1].gallery_index, 1);
    }

    #[test]
    fn monotone_distance_transforms_leave_results_unchanged() {
        use rand::Rng;
        let mut rng = crate::rng::stream(8, "mono", &[]);
        let query: Vec<_> = (0..6).map(|i| rec(i % 3, (i % 2) as u32)).collect();
        let gallery: Vec<_> = (0..40).map(|i| rec(i % 5, ((i / 5) % 3) as u32)).collect();
        let d = Array2::from_shape_fn((6, 40), |_| rng.gen_range(0.0f64..4.0));
        let proto = EvalProtocol::default();
        let base = cmc_map(&d, &query, &gallery, &proto).unwrap();
        let squashed = d.mapv(|v| (v + 1.0).ln() * 3.0 + 0.25);
        let same = cmc_map(&squashed, &query, &gallery, &proto).unwrap();
        assert_eq!(base.cmc, same.cmc);
        assert_eq!(base.map, same.map);
        assert_eq!(base.per_query_ap, same.per_query_ap);
    }
}
