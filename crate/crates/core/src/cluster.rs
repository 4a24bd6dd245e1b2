//! K-means++ seeding, Lloyd iterations, and the supervised escalation loop
//! that grows the cluster count until no mite pixel is confused with
//! anything else.
//!
//! The escalation loop is this crate's reading of a "modified K-means++":
//! plain K-means++ and Lloyd, wrapped in a search over `k` that accepts the
//! first clustering where the clusters touching labeled mite pixels contain
//! no other labeled pixel.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_K_MAX: usize = 12;
pub const DEFAULT_RESTARTS: usize = 5;

fn distinct_rows(x: ArrayView2<'_, f64>) -> usize {
    let mut seen = HashSet::new();
    for row in x.axis_iter(Axis(0)) {
        // +0.0 and -0.0 are the same point
        seen.insert(row.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>());
    }
    seen.len()
}

/// Nearest centroid by squared Euclidean distance, ties to the lower index.
fn nearest(row: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(x: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..x.nrows())
        .into_par_iter()
        .map(|i| nearest(x.row(i), centroids))
        .collect();
    pairs.into_iter().unzip()
}

fn init_with(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let distinct = distinct_rows(x);
    if k > distinct {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {distinct} distinct rows"
        )));
    }
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("distinct rows remain");
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    Ok(centroids)
}

/// K-means++ seeding: a uniformly drawn first row, then rows drawn with
/// probability proportional to squared distance to the nearest chosen
/// centroid.
pub fn kmeanspp_init(x: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
    init_with(x, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn lloyd(
    x: ArrayView2<'_, f64>,
    mut centroids: Array2<f64>,
    max_iter: usize,
    tol: f64,
) -> KMeansFit {
    let k = centroids.nrows();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (labels, dists) = assign_all(x, &centroids);
        trace.push(dists.iter().sum());
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums.row_mut(l).scaled_add(1.0, &x.row(i));
            counts[l] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = HashSet::new();
        for j in 0..k {
            if counts[j] > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // reseed at the point farthest from its centroid
                let far = (0..x.nrows())
                    .filter(|i| !taken.contains(i))
                    .fold(None::<(usize, f64)>, |best, i| match best {
                        Some((_, d)) if d >= dists[i] => best,
                        _ => Some((i, dists[i])),
                    });
                if let Some((i, _)) = far {
                    taken.insert(i);
                    next.row_mut(j).assign(&x.row(i));
                }
            }
        }
        let shift = centroids
            .axis_iter(Axis(0))
            .zip(next.axis_iter(Axis(0)))
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }
    let (assignment, dists) = assign_all(x, &centroids);
    let inertia = dists.iter().sum();
    trace.push(inertia);
    KMeansFit {
        centroids,
        assignment,
        inertia,
        inertia_trace: trace,
        iterations,
    }
}

/// K-means++ seeding followed by Lloyd iterations until the largest centroid
/// move is below `tol` or `max_iter` is reached.
pub fn kmeans_fit(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    let init = kmeanspp_init(x, k, seed)?;
    Ok(lloyd(x, init, max_iter, tol))
}

/// Best (lowest inertia) of `restarts` seeded runs drawn from one stream.
pub fn kmeans_best_of(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let init = init_with(x, k, &mut rng)?;
        let fit = lloyd(x, init, max_iter, tol);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelClass {
    Mite,
    Bee,
    Other,
}

/// Centroids in reconstructed-spectrum space with the class each cluster
/// stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    #[serde(with = "codec::array2")]
    centroids: Array2<f64>,
    class_of_cluster: Vec<PixelClass>,
}

impl ClusterModel {
    pub fn new(centroids: Array2<f64>, class_of_cluster: Vec<PixelClass>) -> Result<Self> {
        if centroids.nrows() != class_of_cluster.len() {
            return Err(Error::Dimension {
                context: "cluster class map",
                expected: centroids.nrows(),
                found: class_of_cluster.len(),
            });
        }
        Ok(Self {
            centroids,
            class_of_cluster,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn bands(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn class_of_cluster(&self) -> &[PixelClass] {
        &self.class_of_cluster
    }

    /// Nearest-centroid cluster and its class for every row.
    pub fn assign(&self, x: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Vec<PixelClass>)> {
        if x.ncols() != self.bands() {
            return Err(Error::Dimension {
                context: "cluster assignment bands",
                expected: self.bands(),
                found: x.ncols(),
            });
        }
        let (clusters, _) = assign_all(x, &self.centroids);
        let classes = clusters.iter().map(|&c| self.class_of_cluster[c]).collect();
        Ok((clusters, classes))
    }
}

pub fn assign(model: &ClusterModel, x: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Vec<PixelClass>)> {
    model.assign(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub k: usize,
    /// Labeled non-mite pixels that fell into a mite cluster.
    pub false_alarms: usize,
    /// Labeled mite pixels that fell outside every mite cluster.
    pub missed_mites: usize,
    pub inertia: f64,
}

impl Attempt {
    pub fn passed(&self) -> bool {
        self.false_alarms == 0 && self.missed_mites == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub attempts: Vec<Attempt>,
    pub final_k: Option<usize>,
    pub final_inertia: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscalationConfig {
    pub k0: usize,
    pub k_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EscalationConfig {
    fn default() -> Self {
        Self {
            k0: 2,
            k_max: DEFAULT_K_MAX,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Maps clusters to classes: any cluster holding a labeled mite pixel is a
/// mite cluster; the rest take the majority of their labeled pixels (bee on
/// ties, other when nothing is labeled).
pub fn map_clusters(assignment: &[usize], roles: &[Option<PixelClass>], k: usize) -> Vec<PixelClass> {
    let mut mites = vec![0usize; k];
    let mut bees = vec![0usize; k];
    let mut others = vec![0usize; k];
    for (&c, role) in assignment.iter().zip(roles) {
        match role {
            Some(PixelClass::Mite) => mites[c] += 1,
            Some(PixelClass::Bee) => bees[c] += 1,
            Some(PixelClass::Other) => others[c] += 1,
            None => {}
        }
    }
    (0..k)
        .map(|c| {
            if mites[c] > 0 {
                PixelClass::Mite
            } else if bees[c] > 0 && bees[c] >= others[c] {
                PixelClass::Bee
            } else {
                PixelClass::Other
            }
        })
        .collect()
}

/// `(false alarms, missed mites)` of a labeled pixel set under a cluster →
/// class map.
pub fn confusion(
    assignment: &[usize],
    roles: &[Option<PixelClass>],
    class_of_cluster: &[PixelClass],
) -> (usize, usize) {
    let mut fa = 0;
    let mut missed = 0;
    for (&c, role) in assignment.iter().zip(roles) {
        let predicted = class_of_cluster[c];
        match role {
            Some(PixelClass::Mite) if predicted != PixelClass::Mite => missed += 1,
            Some(PixelClass::Bee | PixelClass::Other) if predicted == PixelClass::Mite => fa += 1,
            _ => {}
        }
    }
    (fa, missed)
}

/// Escalates `k` from `k0` to `k_max` until the clustering of the rows of `x`
/// keeps labeled mite pixels in clusters free of any other labeled pixel.
/// `roles[i]` is the ground-truth class of row `i`, or `None` if unlabeled.
pub fn fit_supervised(
    x: ArrayView2<'_, f64>,
    roles: &[Option<PixelClass>],
    cfg: &EscalationConfig,
) -> Result<(ClusterModel, ClusterDiagnostics)> {
    if roles.len() != x.nrows() {
        return Err(Error::Dimension {
            context: "pixel roles",
            expected: x.nrows(),
            found: roles.len(),
        });
    }
    let has = |c: PixelClass| roles.iter().any(|r| *r == Some(c));
    if !has(PixelClass::Mite) || !has(PixelClass::Bee) {
        return Err(Error::invalid(
            "supervised clustering needs labeled mite and bee pixels",
        ));
    }
    let k0 = cfg.k0.max(2);
    if k0 > cfg.k_max {
        return Err(Error::invalid(format!("k0 = {k0} exceeds k_max = {}", cfg.k_max)));
    }
    let mut diag = ClusterDiagnostics {
        attempts: Vec::new(),
        final_k: None,
        final_inertia: None,
    };
    for k in k0..=cfg.k_max {
        let fit = match kmeans_best_of(
            x,
            k,
            cfg.seed.wrapping_add(k as u64),
            cfg.restarts,
            cfg.max_iter,
            cfg.tol,
        ) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("k = {k}: {e}");
                break;
            }
        };
        let classes = map_clusters(&fit.assignment, roles, k);
        let (false_alarms, missed_mites) = confusion(&fit.assignment, roles, &classes);
        let attempt = Attempt {
            k,
            false_alarms,
            missed_mites,
            inertia: fit.inertia,
        };
        log::info!(
            "k = {k}: {false_alarms} false alarms, {missed_mites} missed mites, inertia {:.4}",
            fit.inertia
        );
        let passed = attempt.passed();
        diag.attempts.push(attempt);
        if passed {
            diag.final_k = Some(k);
            diag.final_inertia = Some(fit.inertia);
            return Ok((ClusterModel::new(fit.centroids, classes)?, diag));
        }
    }
    Err(Error::Escalation {
        k_max: cfg.k_max,
        diagnostics: Box::new(diag),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, sigma).unwrap();
        let mut x = Array2::zeros((centers.len() * per, 2));
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                x[[r, 0]] = ctr[0] + nd.sample(&mut rng);
                x[[r, 1]] = ctr[1] + nd.sample(&mut rng);
                truth.push(c);
            }
        }
        (x, truth)
    }

    #[test]
    fn k_equal_n_returns_a_permutation() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 5.0], [3.0, 3.0]];
        let c = kmeanspp_init(x.view(), 4, 9).unwrap();
        let mut got: Vec<Vec<u64>> = c.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut want: Vec<Vec<u64>> = x.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
        assert!(kmeanspp_init(array![[1.0], [1.0]].view(), 2, 0).is_err());
    }

    #[test]
    fn seeding_picks_one_point_per_far_pair() {
        let eps: f64 = 1e-3;
        let far: f64 = 10.0;
        let x: Array2<f64> = array![[0.0], [eps], [far], [far + eps]];
        // enumerate the first pick; the second lands in the other pair with
        // probability D²(other) / D²(all)
        let mut p_split = 0.0;
        for first in 0..4 {
            let d2: Vec<f64> = (0..4).map(|i| (x[[i, 0]] - x[[first, 0]]).powi(2)).collect();
            let total: f64 = d2.iter().sum();
            let other: f64 = (0..4).filter(|&i| (i < 2) != (first < 2)).map(|i| d2[i]).sum();
            p_split += 0.25 * other / total;
        }
        assert!(p_split >= 1.0 - 1e-6, "{p_split}");
        for seed in 0..50 {
            let c = kmeanspp_init(x.view(), 2, seed).unwrap();
            assert!((c[[0, 0]] < 1.0) != (c[[1, 0]] < 1.0));
        }
    }

    #[test]
    fn seeding_is_deterministic() {
        let (x, _) = blobs(&[[0.0, 0.0], [5.0, 5.0]], 20, 1.0, 1);
        assert_eq!(
            kmeanspp_init(x.view(), 3, 4).unwrap(),
            kmeanspp_init(x.view(), 3, 4).unwrap()
        );
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let (x, _) = blobs(&[[1.0, 2.0]], 30, 0.5, 2);
        let fit = kmeans_fit(x.view(), 1, 0, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        let m = x.mean_axis(Axis(0)).unwrap();
        for j in 0..2 {
            assert!((fit.centroids[[0, j]] - m[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_separated_blobs() {
        let (x, truth) = blobs(&[[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], 40, 0.5, 3);
        let fit = kmeans_fit(x.view(), 3, 5, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        // same partition up to relabeling
        for i in 0..x.nrows() {
            for j in 0..x.nrows() {
                assert_eq!(truth[i] == truth[j], fit.assignment[i] == fit.assignment[j]);
            }
        }
        assert!(fit.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn more_clusters_never_cost_more() {
        let (x, _) = blobs(&[[0.0, 0.0], [4.0, 1.0], [1.0, 6.0]], 30, 1.5, 4);
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let fit = kmeans_best_of(x.view(), k, 100, 5, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
            assert!(fit.inertia <= last + 1e-9);
            last = fit.inertia;
        }
    }

    #[test]
    fn empty_clusters_get_reseeded() {
        // two coincident starting centroids force an empty cluster
        let x = array![[0.0], [0.1], [10.0], [10.1]];
        let fit = lloyd(x.view(), array![[0.0], [0.0]], 50, 1e-9);
        let mut c: Vec<f64> = fit.centroids.iter().copied().collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn separable_classes_pass_at_two() {
        let (x, truth) = blobs(&[[0.0, 0.0], [10.0, 10.0]], 25, 0.3, 5);
        let roles: Vec<_> = truth
            .iter()
            .map(|&t| Some(if t == 0 { PixelClass::Bee } else { PixelClass::Mite }))
            .collect();
        let (model, diag) = fit_supervised(x.view(), &roles, &EscalationConfig::default()).unwrap();
        assert_eq!(diag.final_k, Some(2));
        assert_eq!(model.k(), 2);
        let (_, classes) = model.assign(x.view()).unwrap();
        for (c, r) in classes.iter().zip(&roles) {
            assert_eq!(Some(*c), *r);
        }
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let (x, _) = blobs(&[[0.0, 0.0]], 10, 1.0, 6);
        let roles = vec![Some(PixelClass::Bee); 10];
        assert!(fit_supervised(x.view(), &roles, &EscalationConfig::default()).is_err());
    }

    #[test]
    fn escalation_failure_reports_every_k() {
        // mite and bee pixels drawn from the same distribution
        let (x, _) = blobs(&[[0.0, 0.0]], 60, 1.0, 7);
        let roles: Vec<_> = (0..60)
            .map(|i| Some(if i % 3 == 0 { PixelClass::Mite } else { PixelClass::Bee }))
            .collect();
        let cfg = EscalationConfig {
            k_max: 4,
            ..Default::default()
        };
        match fit_supervised(x.view(), &roles, &cfg) {
            Err(Error::Escalation { diagnostics, .. }) => {
                let ks: Vec<_> = diagnostics.attempts.iter().map(|a| a.k).collect();
                assert_eq!(ks, vec![2, 3, 4]);
                assert!(diagnostics.final_k.is_none());
            }
            other => panic!("expected escalation failure, got {other:?}"),
        }
    }

    #[test]
    fn assignment_rules() {
        let model = ClusterModel::new(
            array![[0.0, 0.0], [2.0, 0.0]],
            vec![PixelClass::Bee, PixelClass::Mite],
        )
        .unwrap();
        let (c, k) = model.assign(array![[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(c, vec![0, 1, 0]);
        assert_eq!(k, vec![PixelClass::Bee, PixelClass::Mite, PixelClass::Bee]);
        assert!(model.assign(Array::zeros((1, 3)).view()).is_err());
    }
}
