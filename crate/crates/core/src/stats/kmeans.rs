//! Lloyd's k-means with k-means++ seeding, polished by single-point moves.
//!
//! Points are put into lexicographic order before clustering, so the result
//! does not depend on the order in which the caller lists them. Several
//! seeded restarts are run and the lowest-inertia solution is kept.
//!
//! After Lloyd converges, a point is moved from cluster `a` to `b` whenever
//! `n_b/(n_b+1)·|x − μ_b|² < n_a/(n_a−1)·|x − μ_a|²`, which is exactly the
//! condition for the move to lower inertia. Lloyd's fixed points can fail
//! this test; the refined solutions never can.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LadaError, Result};
use crate::linalg::{lex_cmp, sq_dist};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once a Lloyd iteration improves inertia by less than this.
    pub tol: f64,
    /// Number of independently seeded restarts.
    pub n_init: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            tol: 1e-10,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    /// Cluster index per input point, in the caller's point order.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after seeding and after every Lloyd iteration of the kept restart.
    pub inertia_trace: Vec<f64>,
}

/// k-means with default restarts; see [`kmeans_with`].
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult> {
    let opts = KMeansOptions {
        max_iter,
        tol,
        ..KMeansOptions::default()
    };
    kmeans_with(points, k, seed, &opts)
}

pub fn kmeans_with(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(LadaError::EmptyInput("k-means over zero points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(LadaError::Parameter(format!(
            "k = {k} must lie in 1..={}",
            points.len()
        )));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(LadaError::Shape {
            expected: d,
            actual: p.len(),
        });
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Run> = None;
    for _ in 0..opts.n_init.max(1) {
        let init = plus_plus_init(&sorted, k, &mut rng);
        let run = lloyd(&sorted, init, opts.max_iter, opts.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");

    let mut assignment = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignment[orig] = best.assignment[pos];
    }
    Ok(KMeansResult {
        centers: best.centers,
        assignment,
        inertia: best.inertia,
        iterations: best.iterations,
        inertia_trace: best.trace,
    })
}

struct Run {
    centers: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].to_vec()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // All remaining points coincide with a center.
            chosen.iter().position(|c| !c).expect("k <= n")
        };
        chosen[next] = true;
        let c = points[next].to_vec();
        for (dst, p) in dist.iter_mut().zip(points) {
            *dst = dst.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(points: &[&[f64]], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let dd = sq_dist(p, c);
                if dd < best_d {
                    best = j;
                    best_d = dd;
                }
            }
            inertia += best_d;
            best
        })
        .collect();
    (assignment, inertia)
}

fn inertia_of(points: &[&[f64]], centers: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

/// Means of each cluster. Empty clusters take the point farthest from its
/// own center among clusters with more than one member; `assignment` is
/// updated accordingly.
fn update_centers(points: &[&[f64]], assignment: &mut [usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut centers = means(points, assignment, k, d);
    loop {
        let counts = counts(assignment, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centers;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let dd = sq_dist(p, &centers[assignment[i]]);
            if dd > far_d {
                far_d = dd;
                far = Some(i);
            }
        }
        let far = far.expect("k <= n guarantees a donor cluster");
        assignment[far] = empty;
        centers = means(points, assignment, k, d);
    }
}

fn counts(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &a in assignment {
        c[a] += 1;
    }
    c
}

fn means(points: &[&[f64]], assignment: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            let inv = c as f64;
            s.iter_mut().for_each(|x| *x /= inv);
        }
    }
    sums
}

fn lloyd(points: &[&[f64]], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> Run {
    let k = init.len();
    let (mut assignment, mut inertia) = assign(points, &init);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let centers = update_centers(points, &mut assignment, k);
        let (next, next_inertia) = assign(points, &centers);
        let changed = next != assignment;
        let gain = inertia - next_inertia;
        assignment = next;
        inertia = next_inertia;
        trace.push(inertia);
        if !changed || gain < tol {
            break;
        }
    }
    // Leave the centers as exact means of the final assignment.
    let mut centers = update_centers(points, &mut assignment, k);
    let mut final_inertia = inertia_of(points, &centers, &assignment);
    if final_inertia != inertia {
        trace.push(final_inertia);
    }
    for _ in 0..max_iter {
        if !transfer_pass(points, &mut assignment, &mut centers) {
            break;
        }
        let next = inertia_of(points, &centers, &assignment);
        if next >= final_inertia {
            break;
        }
        final_inertia = next;
        trace.push(final_inertia);
    }
    Run {
        centers,
        assignment,
        inertia: final_inertia,
        iterations,
        trace,
    }
}

/// One sweep of improving single-point moves. Returns whether anything moved.
fn transfer_pass(points: &[&[f64]], assignment: &mut [usize], centers: &mut Vec<Vec<f64>>) -> bool {
    let k = centers.len();
    let d = points[0].len();
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let sizes = counts(assignment, k);
        let a = assignment[i];
        if sizes[a] < 2 {
            continue;
        }
        let na = sizes[a] as f64;
        let removal = na / (na - 1.0) * sq_dist(p, &centers[a]);
        let mut target = None;
        let mut best = removal;
        for (b, c) in centers.iter().enumerate() {
            if b == a {
                continue;
            }
            let nb = sizes[b] as f64;
            let cost = nb / (nb + 1.0) * sq_dist(p, c);
            // Relative margin keeps rounding noise from cycling points back and forth.
            if cost < best * (1.0 - 1e-12) {
                best = cost;
                target = Some(b);
            }
        }
        if let Some(b) = target {
            assignment[i] = b;
            *centers = means(points, assignment, k, d);
            moved = true;
        }
    }
    moved
}
