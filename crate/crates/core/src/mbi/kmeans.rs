//! Lloyd's k-means with k-means++ seeding, used to start AECM.

use rand::Rng;

use super::FitError;

const MAX_LLOYD_ITERS: usize = 300;
const RESEED_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// 0-based cluster per point.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_seed<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// One Lloyd run; `None` if a cluster empties.
fn lloyd(points: &[&[f64]], mut centers: Vec<Vec<f64>>) -> Option<KMeansResult> {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for ((center, sum), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            *center = sum.into_iter().map(|s| s / n as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    Some(KMeansResult { labels, centers, inertia })
}

/// Best-inertia clustering over `restarts` k-means++ seeded Lloyd runs.
///
/// A run whose clusters empty is re-seeded up to 10 times before giving up.
pub fn kmeans<R: Rng>(points: &[&[f64]], k: usize, restarts: usize, rng: &mut R) -> Result<KMeansResult, FitError> {
    if k == 0 || points.len() < k {
        return Err(FitError::InitFailed(format!("{} points for {k} clusters", points.len())));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = (0..RESEED_ATTEMPTS).find_map(|_| lloyd(points, plus_plus_seed(points, k, rng)));
        let Some(run) = run else {
            return Err(FitError::InitFailed(format!(
                "k-means left a cluster empty after {RESEED_ATTEMPTS} seedings"
            )));
        };
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mbi::adjusted_rand_index;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let g = i % 3;
            let base = [0.0, 20.0, 40.0][g];
            pts.push(vec![base + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            truth.push(g);
        }
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let km = kmeans(&refs, 3, 10, &mut rng).unwrap();
        assert_eq!(adjusted_rand_index(&km.labels, &truth), 1.0);
    }

    #[test]
    fn too_few_distinct_points_fails() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(kmeans(&refs, 2, 10, &mut rng), Err(FitError::InitFailed(_))));
        assert!(matches!(kmeans(&refs[..1], 2, 10, &mut rng), Err(FitError::InitFailed(_))));
    }
}
