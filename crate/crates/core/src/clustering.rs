//! Base clusterers: K-means, PAM, Fuzzy C-means and DBSCAN.
//!
//! All distances here are Euclidean. Every function is a deterministic
//! function of its inputs and seed.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};

use crate::dataset::{Dataset, FuzzyPartition, Partition};
use crate::error::{Error, Result};
use crate::metric::{euclidean, pairwise, sq_euclidean};
use crate::rng::{derive_seed, seeded};

fn check_k(k: usize, n: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid(format!("{what} must be at least 1")));
    }
    if k > n {
        return Err(Error::invalid(format!("{what} = {k} exceeds {n} points")));
    }
    Ok(())
}

/// Row indices of `k` distinct points drawn uniformly with the given seed.
fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    index::sample(&mut rng, n, k).into_vec()
}

fn rows_of(points: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    points.select(Axis(0), rows)
}

/// Nearest center for every point, ties to the lowest center index.
pub fn nearest_center(points: ArrayView2<f64>, centers: ArrayView2<f64>) -> Vec<usize> {
    points
        .rows()
        .into_iter()
        .map(|x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.rows().into_iter().enumerate() {
                let d = sq_euclidean(x, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Result of a K-means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub partition: Partition,
    pub centers: Array2<f64>,
    /// Within-cluster sum of squared distances after each assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans(data: &Dataset, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<Partition> {
    kmeans_fit(data, k, seed, max_iter, tol).map(|f| f.partition)
}

/// Lloyd's algorithm from `k` seeded distinct rows.
///
/// Stops once no center moves by `tol` or more, or after `max_iter`
/// iterations. A cluster that goes empty is re-seeded with the point farthest
/// from its current center among clusters that have more than one member.
pub fn kmeans_fit(
    data: &Dataset,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansFit> {
    let n = data.len();
    check_k(k, n, "k")?;
    if !(tol > 0.0) {
        return Err(Error::invalid("kmeans tolerance must be positive"));
    }
    let points = data.points();
    let mut centers = rows_of(points, &sample_rows(n, k, seed));
    let mut assignment = nearest_center(points, centers.view());
    let mut cost_history = Vec::new();
    let mut iterations = 0;

    loop {
        reseed_empty(points, &mut centers, &mut assignment);
        cost_history.push(cost(points, centers.view(), &assignment));
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let updated = cluster_means(points, &assignment, &centers);
        let shift = centers
            .rows()
            .into_iter()
            .zip(updated.rows())
            .map(|(a, b)| euclidean(a, b))
            .fold(0.0, f64::max);
        centers = updated;
        assignment = reassign(points, centers.view(), &assignment);
        if shift < tol {
            reseed_empty(points, &mut centers, &mut assignment);
            cost_history.push(cost(points, centers.view(), &assignment));
            break;
        }
    }

    Ok(KMeansFit {
        partition: Partition::new(assignment, k)?,
        centers,
        cost_history,
        iterations,
    })
}

/// Best of `restarts` Lloyd runs by final cost. Run 0 uses `seed` itself and
/// run `r` uses `derive_seed(seed, r)`; ties keep the earlier run.
pub fn kmeans_restarts(
    data: &Dataset,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    restarts: usize,
) -> Result<KMeansFit> {
    if restarts == 0 {
        return Err(Error::invalid("kmeans needs at least one restart"));
    }
    let mut best = kmeans_fit(data, k, seed, max_iter, tol)?;
    for r in 1..restarts {
        let fit = kmeans_fit(data, k, derive_seed(seed, r as u64), max_iter, tol)?;
        if fit.cost_history.last() < best.cost_history.last() {
            best = fit;
        }
    }
    Ok(best)
}

/// Moves a point only when another center is strictly closer, so equal-cost
/// ties never cycle.
fn reassign(points: ArrayView2<f64>, centers: ArrayView2<f64>, current: &[usize]) -> Vec<usize> {
    let nearest = nearest_center(points, centers);
    nearest
        .into_iter()
        .zip(current)
        .enumerate()
        .map(|(i, (best, &cur))| {
            let x = points.row(i);
            if sq_euclidean(x, centers.row(best)) < sq_euclidean(x, centers.row(cur)) {
                best
            } else {
                cur
            }
        })
        .collect()
}

fn cluster_means(points: ArrayView2<f64>, assignment: &[usize], previous: &Array2<f64>) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros(previous.dim());
    let mut counts = vec![0usize; previous.nrows()];
    for (x, &a) in points.rows().into_iter().zip(assignment) {
        sums.row_mut(a).scaled_add(1.0, &x);
        counts[a] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            sums.row_mut(j).assign(&previous.row(j));
        } else {
            sums.row_mut(j).mapv_inplace(|v| v / c as f64);
        }
    }
    sums
}

fn reseed_empty(points: ArrayView2<f64>, centers: &mut Array2<f64>, assignment: &mut [usize]) {
    let k = centers.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..points.nrows())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_euclidean(points.row(a), centers.row(assignment[a]));
                let db = sq_euclidean(points.row(b), centers.row(assignment[b]));
                // farthest first, lowest index on ties
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with two members");
        centers.row_mut(empty).assign(&points.row(donor));
        assignment[donor] = empty;
    }
}

fn cost(points: ArrayView2<f64>, centers: ArrayView2<f64>, assignment: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(assignment)
        .map(|(x, &a)| sq_euclidean(x, centers.row(a)))
        .sum()
}

/// Result of a PAM run.
#[derive(Debug, Clone)]
pub struct PamFit {
    pub partition: Partition,
    /// Row indices of the medoids; cluster `j` belongs to `medoids[j]`.
    pub medoids: Vec<usize>,
    /// Total Euclidean dissimilarity after BUILD and after every SWAP.
    pub cost_history: Vec<f64>,
}

pub fn pam(data: &Dataset, k: usize, seed: u64, max_iter: usize) -> Result<Partition> {
    pam_fit(data, k, seed, max_iter).map(|f| f.partition)
}

/// k-medoids by BUILD followed by best-improvement SWAP.
///
/// The seed fixes the order in which candidate points are scanned, which only
/// matters for breaking exact ties between equally good choices.
pub fn pam_fit(data: &Dataset, k: usize, seed: u64, max_iter: usize) -> Result<PamFit> {
    let n = data.len();
    check_k(k, n, "k")?;
    let dist = pairwise(data.points());
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));

    // BUILD
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; n];
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &cand in &order {
            if medoids.contains(&cand) {
                continue;
            }
            let total: f64 = (0..n).map(|j| nearest[j].min(dist[[cand, j]])).sum();
            if best.is_none_or(|(_, b)| total < b) {
                best = Some((cand, total));
            }
        }
        let (m, _) = best.expect("k <= n");
        for j in 0..n {
            nearest[j] = nearest[j].min(dist[[m, j]]);
        }
        medoids.push(m);
    }

    let total_cost = |meds: &[usize]| -> f64 {
        (0..n)
            .map(|j| meds.iter().map(|&m| dist[[m, j]]).fold(f64::INFINITY, f64::min))
            .sum()
    };

    // SWAP
    let mut current = total_cost(&medoids);
    let mut cost_history = vec![current];
    for _ in 0..max_iter {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for &cand in &order {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = total_cost(&trial);
                if c < best.map_or(current, |b| b.2) {
                    best = Some((slot, cand, c));
                }
            }
        }
        // Require a strict improvement beyond rounding noise.
        match best {
            Some((slot, cand, c)) if c < current - 1e-12 * current.max(1.0) => {
                medoids[slot] = cand;
                current = c;
                cost_history.push(current);
            }
            _ => break,
        }
    }

    let assignment = (0..n)
        .map(|j| {
            // A medoid always keeps its own cluster, even if another medoid
            // has identical coordinates.
            if let Some(own) = medoids.iter().position(|&m| m == j) {
                return own;
            }
            let mut best = 0;
            for (slot, &m) in medoids.iter().enumerate() {
                if dist[[m, j]] < dist[[medoids[best], j]] {
                    best = slot;
                }
            }
            best
        })
        .collect();
    Ok(PamFit {
        partition: Partition::new(assignment, k)?,
        medoids,
        cost_history,
    })
}

/// Membership update of standard Fuzzy C-means for a c×n matrix of
/// distances, with exponent `p` applied to distance ratios.
///
/// A point at distance zero from one or more centers gets full membership on
/// the lowest such center.
pub(crate) fn fuzzy_memberships(distances: &Array2<f64>, p: f64) -> Array2<f64> {
    let (c, n) = distances.dim();
    let mut u = Array2::zeros((c, n));
    for k in 0..n {
        let col = distances.column(k);
        if let Some(i) = col.iter().position(|&d| d == 0.0) {
            u[[i, k]] = 1.0;
            continue;
        }
        for i in 0..c {
            let s: f64 = col.iter().map(|&dj| (col[i] / dj).powf(p)).sum();
            u[[i, k]] = 1.0 / s;
        }
    }
    u
}

/// v_i = Σ_k μ_ik^m x_k / Σ_k μ_ik^m, keeping `previous[i]` for clusters with
/// zero membership mass.
pub(crate) fn weighted_centers(
    points: ArrayView2<f64>,
    u: &Array2<f64>,
    m: f64,
    previous: Option<&Array2<f64>>,
) -> Array2<f64> {
    let c = u.nrows();
    let mut centers = Array2::zeros((c, points.ncols()));
    for i in 0..c {
        let mut mass = 0.0;
        let mut acc = Array1::<f64>::zeros(points.ncols());
        for (k, x) in points.rows().into_iter().enumerate() {
            let w = u[[i, k]].powf(m);
            mass += w;
            acc.scaled_add(w, &x);
        }
        if mass > 0.0 {
            centers.row_mut(i).assign(&(acc / mass));
        } else if let Some(prev) = previous {
            centers.row_mut(i).assign(&prev.row(i));
        }
    }
    centers
}

fn euclidean_distances(points: ArrayView2<f64>, centers: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((centers.nrows(), points.nrows()));
    for (i, c) in centers.rows().into_iter().enumerate() {
        for (k, x) in points.rows().into_iter().enumerate() {
            d[[i, k]] = euclidean(x, c);
        }
    }
    d
}

/// FCM objective Σ_i Σ_k μ_ik^m d_ik².
pub fn fcm_objective(points: ArrayView2<f64>, u: &Array2<f64>, centers: &Array2<f64>, m: f64) -> f64 {
    let d = euclidean_distances(points, centers);
    u.iter().zip(d.iter()).map(|(&mu, &dk)| mu.powf(m) * dk * dk).sum()
}

/// Result of a Fuzzy C-means run.
#[derive(Debug, Clone)]
pub struct FcmFit {
    pub memberships: FuzzyPartition,
    pub centers: Array2<f64>,
    /// Objective J(U_t, v_t) for every sweep, where v_t are the centers
    /// computed from U_t.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

/// Fuzzy C-means with memberships initialized from `c` seeded rows taken as
/// centers. Returns the converged memberships.
pub fn fuzzy_cmeans(
    data: &Dataset,
    c: usize,
    m: f64,
    tol: f64,
    seed: u64,
    max_iter: usize,
) -> Result<FuzzyPartition> {
    fuzzy_cmeans_fit(data, c, m, tol, seed, max_iter).map(|f| f.memberships)
}

pub fn fuzzy_cmeans_fit(
    data: &Dataset,
    c: usize,
    m: f64,
    tol: f64,
    seed: u64,
    max_iter: usize,
) -> Result<FcmFit> {
    check_k(c, data.len(), "c")?;
    check_fuzzifier(m)?;
    let centers = rows_of(data.points(), &sample_rows(data.len(), c, seed));
    let u0 = fuzzy_memberships(&euclidean_distances(data.points(), &centers), 2.0 / (m - 1.0));
    fuzzy_cmeans_from(data, FuzzyPartition::new(u0)?, m, tol, max_iter, |_, _| {})
}

fn check_fuzzifier(m: f64) -> Result<()> {
    if !(m > 1.0) || !m.is_finite() {
        return Err(Error::invalid(format!("weighting exponent m = {m} must exceed 1")));
    }
    Ok(())
}

/// Runs FCM sweeps from an initial membership matrix. Each sweep computes
/// centers from U and then new memberships from those centers; `observe` sees
/// every membership matrix produced, starting with the initial one.
pub fn fuzzy_cmeans_from(
    data: &Dataset,
    initial: FuzzyPartition,
    m: f64,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &FuzzyPartition),
) -> Result<FcmFit> {
    check_fuzzifier(m)?;
    if initial.n() != data.len() {
        return Err(Error::shape("membership matrix does not match dataset"));
    }
    let points = data.points();
    let p = 2.0 / (m - 1.0);
    let mut u = initial;
    observe(0, &u);
    let mut centers = weighted_centers(points, &u.memberships().to_owned(), m, None);
    let mut objective_history = vec![fcm_objective(points, &u.memberships().to_owned(), &centers, m)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let next = FuzzyPartition::new(fuzzy_memberships(&euclidean_distances(points, &centers), p))?;
        observe(iterations, &next);
        let delta = next.max_abs_diff(&u);
        let raw = next.memberships().to_owned();
        centers = weighted_centers(points, &raw, m, Some(&centers));
        objective_history.push(fcm_objective(points, &raw, &centers, m));
        u = next;
        if delta <= tol {
            break;
        }
    }
    Ok(FcmFit {
        memberships: u,
        centers,
        objective_history,
        iterations,
    })
}

/// Output of [`dbscan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanResult {
    /// Cluster index per point, `None` for noise.
    pub assignment: Vec<Option<usize>>,
    pub k: usize,
    /// Noise point indices in increasing order.
    pub noise: Vec<usize>,
}

impl DbscanResult {
    pub fn is_noise(&self, i: usize) -> bool {
        self.assignment[i].is_none()
    }
}

/// Classic DBSCAN with Euclidean `eps`-neighborhoods that include the point
/// itself.
///
/// Points are scanned in index order; a border point reachable from several
/// clusters joins the first one that reaches it.
pub fn dbscan(data: &Dataset, eps: f64, min_pts: usize) -> Result<DbscanResult> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps = {eps} must be positive")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let n = data.len();
    let points = data.points();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| euclidean(points.row(i), points.row(j)) <= eps)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut k = 0;
    for start in 0..n {
        if assignment[start].is_some() || !is_core[start] {
            continue;
        }
        let cluster = k;
        k += 1;
        assignment[start] = Some(cluster);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if assignment[q].is_none() {
                    assignment[q] = Some(cluster);
                    queue.push_back(q);
                }
            }
        }
    }
    let noise = (0..n).filter(|&i| assignment[i].is_none()).collect();
    Ok(DbscanResult { assignment, k, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::clustering_accuracy;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn line(xs: &[f64]) -> Dataset {
        Dataset::from_points(Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()).unwrap()
    }

    fn two_blobs(seed: u64) -> (Dataset, Vec<usize>) {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in [(0, 0.0), (1, 10.0)] {
            for _ in 0..20 {
                rows.push(center + noise.sample(&mut rng));
                rows.push(center + noise.sample(&mut rng));
                labels.push(c);
            }
        }
        let pts = Array2::from_shape_vec((40, 2), rows).unwrap();
        (Dataset::with_labels(pts, labels.clone()).unwrap(), labels)
    }

    #[test]
    fn restarts_never_do_worse() {
        use rand::Rng;
        let mut rng = seeded(21);
        let pts = Array2::from_shape_fn((60, 2), |(i, _)| (i % 3) as f64 * 6.0 + rng.random_range(-0.5..0.5));
        let d = Dataset::from_points(pts).unwrap();
        let one = kmeans_fit(&d, 3, 4, 100, 1e-6).unwrap();
        assert_eq!(kmeans_restarts(&d, 3, 4, 100, 1e-6, 1).unwrap().partition, one.partition);
        let many = kmeans_restarts(&d, 3, 4, 100, 1e-6, 8).unwrap();
        assert!(many.cost_history.last() <= one.cost_history.last());
        assert!(kmeans_restarts(&d, 3, 4, 100, 1e-6, 0).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let d = Dataset::from_points(array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]]).unwrap();
        let fit = kmeans_fit(&d, 1, 3, 100, 1e-9).unwrap();
        assert_eq!(fit.partition.labels(), &[0, 0, 0]);
        assert!((fit.centers[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((fit.centers[[0, 1]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n_singletons() {
        let d = line(&[0.0, 1.0, 5.0, 9.0, 9.5]);
        let fit = kmeans_fit(&d, 5, 11, 100, 1e-9).unwrap();
        assert!(fit.partition.cluster_sizes().iter().all(|&s| s == 1));
        assert_eq!(*fit.cost_history.last().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_k_equals_n_with_duplicates_has_no_empty_cluster() {
        let d = line(&[1.0, 1.0, 1.0, 4.0]);
        let p = kmeans(&d, 4, 0, 50, 1e-9).unwrap();
        assert!(p.is_compact());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let (d, labels) = two_blobs(5);
        for seed in 0..5 {
            let p = kmeans(&d, 2, seed, 100, 1e-9).unwrap();
            assert_eq!(clustering_accuracy(&p, &labels).unwrap(), 1.0);
        }
    }

    #[test]
    fn kmeans_cost_non_increasing() {
        let (d, _) = two_blobs(9);
        for seed in 0..10 {
            let fit = kmeans_fit(&d, 4, seed, 100, 1e-12).unwrap();
            for w in fit.cost_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.cost_history);
            }
        }
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let d = line(&[0.0, 1.0]);
        assert!(kmeans(&d, 0, 0, 10, 1e-6).is_err());
        assert!(kmeans(&d, 3, 0, 10, 1e-6).is_err());
        assert!(kmeans(&d, 1, 0, 10, 0.0).is_err());
    }

    #[test]
    fn pam_single_medoid() {
        // totals: medoid 0 -> 11, medoid 1 -> 10, medoid 10 -> 19
        let fit = pam_fit(&line(&[0.0, 1.0, 10.0]), 1, 0, 100).unwrap();
        assert_eq!(fit.medoids, vec![1]);
        assert_eq!(*fit.cost_history.last().unwrap(), 10.0);
    }

    #[test]
    fn pam_two_groups_on_line() {
        let d = line(&[0.0, 1.0, 2.0, 10.0, 11.0]);
        // brute force over all 10 medoid pairs
        let xs = [0.0f64, 1.0, 2.0, 10.0, 11.0];
        let mut best = f64::INFINITY;
        for a in 0..5 {
            for b in (a + 1)..5 {
                let c: f64 = xs.iter().map(|&x| (x - xs[a]).abs().min((x - xs[b]).abs())).sum();
                best = best.min(c);
            }
        }
        for seed in 0..4 {
            let fit = pam_fit(&d, 2, seed, 100).unwrap();
            let p = &fit.partition;
            assert_eq!(p.label(0), p.label(1));
            assert_eq!(p.label(1), p.label(2));
            assert_eq!(p.label(3), p.label(4));
            assert_ne!(p.label(0), p.label(3));
            assert_eq!(*fit.cost_history.last().unwrap(), best);
        }
    }

    #[test]
    fn pam_k_equals_n_costs_zero() {
        let fit = pam_fit(&line(&[3.0, 1.0, 4.0, 1.5]), 4, 2, 100).unwrap();
        assert_eq!(*fit.cost_history.last().unwrap(), 0.0);
        assert!(fit.partition.is_compact());
    }

    #[test]
    fn pam_swap_never_increases_cost() {
        let (d, _) = two_blobs(21);
        let fit = pam_fit(&d, 3, 4, 100).unwrap();
        for w in fit.cost_history.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn fcm_membership_rules() {
        let u = fuzzy_memberships(&array![[2.0], [2.0]], 2.0 / 1.5);
        assert!((u[[0, 0]] - 0.5).abs() < 1e-15);
        let u = fuzzy_memberships(&array![[0.0], [3.0]], 1.0);
        assert_eq!(u.column(0).to_vec(), vec![1.0, 0.0]);
        // m = 3: p = 1, μ_1 = 1 / (1 + 1/2) = 2/3
        let u = fuzzy_memberships(&array![[1.0], [2.0]], 2.0 / (3.0 - 1.0));
        assert!((u[[0, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((u[[1, 0]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fcm_rejects_bad_parameters() {
        let d = line(&[0.0, 1.0, 2.0]);
        assert!(fuzzy_cmeans(&d, 2, 1.0, 1e-6, 0, 10).is_err());
        assert!(fuzzy_cmeans(&d, 0, 2.0, 1e-6, 0, 10).is_err());
        assert!(fuzzy_cmeans(&d, 4, 2.0, 1e-6, 0, 10).is_err());
    }

    #[test]
    fn fcm_separates_blobs_and_objective_decreases() {
        let (d, labels) = two_blobs(13);
        let fit = fuzzy_cmeans_fit(&d, 2, 2.0, 1e-8, 1, 300).unwrap();
        assert_eq!(clustering_accuracy(&fit.memberships.harden(), &labels).unwrap(), 1.0);
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dbscan_isolated_point_is_noise() {
        let d = line(&[0.0, 0.1, 0.2, 5.0]);
        let r = dbscan(&d, 0.5, 2).unwrap();
        assert_eq!(r.k, 1);
        assert_eq!(r.noise, vec![3]);
    }

    #[test]
    fn dbscan_identical_points_one_cluster() {
        let d = line(&[2.0; 6]);
        let r = dbscan(&d, 0.1, 6).unwrap();
        assert_eq!(r.k, 1);
        assert!(r.noise.is_empty());
    }

    #[test]
    fn dbscan_rejects_bad_parameters() {
        let d = line(&[0.0]);
        assert!(dbscan(&d, 0.0, 1).is_err());
        assert!(dbscan(&d, 1.0, 0).is_err());
    }

    #[test]
    fn dbscan_border_point_joins_first_cluster() {
        // 1.0 lies within eps of a core point on each side but is not core itself
        let d = line(&[0.0, 0.1, 0.2, 0.3, 1.0, 1.7, 1.8, 1.9, 2.0]);
        let r = dbscan(&d, 0.75, 4).unwrap();
        assert_eq!(r.k, 2);
        assert!(r.noise.is_empty());
        assert_eq!(r.assignment[4], Some(0));
        assert_eq!(r.assignment[5], Some(1));
    }
}
