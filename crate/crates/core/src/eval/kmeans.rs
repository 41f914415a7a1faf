use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RtfnError};
use crate::tensor::Tensor;

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `k×F` centroid matrix.
    pub centroids: Tensor,
    /// Sum of squared distances from each point to its own centroid.
    pub inertia: f64,
}

/// One Lloyd run from a single k-means++ seeding.
#[derive(Clone, Debug)]
pub struct KMeansRun {
    pub assignment: ClusterAssignment,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn rows(points: &Tensor) -> Result<(usize, usize)> {
    match *points.shape() {
        [s, f] => Ok((s, f)),
        _ => Err(RtfnError::Dimension(format!(
            "k-means expects an s×F matrix, got {:?}",
            points.shape()
        ))),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `restarts` k-means++ / Lloyd runs by inertia.
pub fn kmeans_fit(points: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<ClusterAssignment> {
    if restarts == 0 {
        return Err(RtfnError::Config("k-means needs at least one restart".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..restarts {
        let run = kmeans_run(points, k, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.assignment.inertia < b.inertia) {
            best = Some(run.assignment);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or [`MAX_ITERATIONS`] is reached. Clusters left empty are moved
/// onto the points farthest from their current centroids.
pub fn kmeans_run<R: Rng + ?Sized>(points: &Tensor, k: usize, rng: &mut R) -> Result<KMeansRun> {
    let (s, f) = rows(points)?;
    if k == 0 || k > s {
        return Err(RtfnError::Config(format!(
            "k-means needs 1 <= k <= number of points, got k={k} for {s} points"
        )));
    }
    let p = points.data();
    let point = |i: usize| &p[i * f..(i + 1) * f];
    let mut centroids = plus_plus_init(points, k, rng);

    let mut trace = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let (labels, dists) = loop {
        let (labels, dists) = assign(p, s, f, &centroids, k);
        trace.push(dists.iter().sum());
        iterations += 1;
        if prev.as_ref() == Some(&labels) || iterations > MAX_ITERATIONS {
            break (labels, dists);
        }
        // update step
        let mut sums = vec![0.0; k * f];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (acc, v) in sums[c * f..(c + 1) * f].iter_mut().zip(point(i)) {
                *acc += v;
            }
        }
        let mut moved = dists.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, acc) in centroids[c * f..(c + 1) * f].iter_mut().zip(&sums[c * f..]) {
                    *dst = acc / counts[c] as f64;
                }
            } else {
                let far = argmax_first(&moved);
                centroids[c * f..(c + 1) * f].copy_from_slice(point(far));
                moved[far] = 0.0;
            }
        }
        prev = Some(labels);
    };
    let inertia = dists.iter().sum();
    Ok(KMeansRun {
        assignment: ClusterAssignment {
            labels,
            centroids: Tensor::new(&[k, f], centroids)?,
            inertia,
        },
        inertia_trace: trace,
        iterations,
    })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Nearest-centroid labels (ties to the lowest id) and squared distances.
fn assign(p: &[f64], s: usize, f: usize, centroids: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut labels = Vec::with_capacity(s);
    let mut dists = Vec::with_capacity(s);
    for i in 0..s {
        let x = &p[i * f..(i + 1) * f];
        let mut best = (0, f64::INFINITY);
        for c in 0..k {
            let d = sq_dist(x, &centroids[c * f..(c + 1) * f]);
            if d < best.1 {
                best = (c, d);
            }
        }
        labels.push(best.0);
        dists.push(best.1);
    }
    (labels, dists)
}

fn plus_plus_init<R: Rng + ?Sized>(points: &Tensor, k: usize, rng: &mut R) -> Vec<f64> {
    let f = points.shape()[1];
    let s = points.shape()[0];
    let p = points.data();
    let point = |i: usize| &p[i * f..(i + 1) * f];
    let mut centroids = Vec::with_capacity(k * f);
    centroids.extend_from_slice(point(rng.random_range(0..s)));
    let mut d2: Vec<f64> = (0..s).map(|i| sq_dist(point(i), &centroids[..f])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total implies a positive distance")
        } else {
            rng.random_range(0..s)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(next));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..start + f]));
        }
    }
    centroids
}
