use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AugmentError;

/// Center movement below which Lloyd iterations stop.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lower index.
pub fn nearest_center(point: ArrayView1<'_, f64>, centers: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.rows().into_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Within-cluster sum of squares under nearest-center assignment.
pub fn inertia(points: ArrayView2<'_, f64>, centers: ArrayView2<'_, f64>) -> f64 {
    points.rows().into_iter().map(|p| nearest_center(p, centers).1).sum()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn init_plus_plus(points: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = points.rows().into_iter().map(|p| squared_distance(p, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            WeightedIndex::new(&closest).expect("non-negative finite weights").sample(rng)
        } else {
            // every point already coincides with a center
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (d, p) in closest.iter_mut().zip(points.rows()) {
            *d = d.min(squared_distance(p, centers.row(c)));
        }
    }
    centers
}

/// Lloyd's algorithm from a k-means++ start.
///
/// Stops once no center moves more than [`CONVERGENCE_TOLERANCE`] or after
/// `max_iters` updates. A cluster that loses all its points is re-seeded at
/// the point farthest from its assigned center.
pub fn fit_kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64, max_iters: usize) -> Result<Array2<f64>, AugmentError> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(AugmentError::TooFewPoints { points: n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = init_plus_plus(points, k, &mut rng);
    let dims = points.ncols();
    let mut assignment = vec![0usize; n];
    let mut distance = vec![0.0f64; n];

    for _ in 0..max_iters {
        for (i, p) in points.rows().into_iter().enumerate() {
            let (c, d) = nearest_center(p, centers.view());
            assignment[i] = c;
            distance[i] = d;
        }

        let mut sums = Array2::<f64>::zeros((k, dims));
        let mut counts = vec![0usize; k];
        for (i, p) in points.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(assignment[i]);
            row += &p;
            counts[assignment[i]] += 1;
        }

        let mut updated = centers.clone();
        let mut taken = vec![false; n];
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = &sums.row(c) / count as f64;
                updated.row_mut(c).assign(&mean);
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| distance[a].total_cmp(&distance[b]).then(b.cmp(&a)))
                .expect("n >= k leaves an untaken point");
            taken[far] = true;
            distance[far] = 0.0;
            updated.row_mut(c).assign(&points.row(far));
        }

        let shift = centers
            .rows()
            .into_iter()
            .zip(updated.rows())
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        if shift < CONVERGENCE_TOLERANCE {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use rand::Rng;

    fn mean_point(points: ArrayView2<'_, f64>) -> ndarray::Array1<f64> {
        points.mean_axis(Axis(0)).expect("non-empty")
    }

    #[test]
    fn separated_clusters() {
        let mut pts = Array2::zeros((10, 2));
        for i in 5..10 {
            pts.row_mut(i).fill(10.0);
        }
        let mut centers = fit_kmeans(pts.view(), 2, 3, 100).unwrap().rows().into_iter().map(|r| (r[0], r[1])).collect::<Vec<_>>();
        centers.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(centers, vec![(0.0, 0.0), (10.0, 10.0)]);
    }

    #[test]
    fn single_center_is_the_mean() {
        let pts = array![[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]];
        let centers = fit_kmeans(pts.view(), 1, 0, 50).unwrap();
        let mean = mean_point(pts.view());
        assert_abs_diff_eq!(centers.row(0)[0], mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(centers.row(0)[1], mean[1], epsilon = 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts = array![[1.0], [2.0]];
        assert!(matches!(fit_kmeans(pts.view(), 3, 0, 10), Err(AugmentError::TooFewPoints { points: 2, k: 3 })));
        assert!(matches!(fit_kmeans(pts.view(), 0, 0, 10), Err(AugmentError::TooFewPoints { .. })));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
        assert_eq!(fit_kmeans(pts.view(), 4, 5, 100).unwrap(), fit_kmeans(pts.view(), 4, 5, 100).unwrap());
    }

    #[test]
    fn duplicate_points_never_leave_stale_centers() {
        // Four identical points and k=3: every cluster after the first is
        // emptied by tie-breaking and must be re-seeded onto a data point.
        let pts = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let centers = fit_kmeans(pts.view(), 3, 0, 10).unwrap();
        for c in centers.rows() {
            assert_eq!(c.to_vec(), vec![1.0, 1.0]);
        }
    }

    /// Random-restart oracle: the best of 100 random center draws (each
    /// assigned once, no Lloyd refinement) must not beat the fitted centers.
    #[test]
    fn beats_random_restart_oracle() {
        for trial in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let pts = Array2::from_shape_fn((20, 2), |_| rng.random::<f64>() * 10.0);
            let fitted = inertia(pts.view(), fit_kmeans(pts.view(), 3, trial, 300).unwrap().view());
            let mut best = f64::INFINITY;
            for _ in 0..100 {
                let idx: Vec<usize> = rand::seq::index::sample(&mut rng, 20, 3).into_vec();
                let centers = pts.select(Axis(0), &idx);
                best = best.min(inertia(pts.view(), centers.view()));
            }
            assert!(fitted <= best + 1e-9, "trial {trial}: fitted {fitted} > oracle {best}");
        }
    }
}
