//! Brute-force reference implementations shared by the integration tests.
//! Everything here is written independently of the library code paths it
//! checks: plain loops, full sorts, exhaustive enumeration.

#![allow(dead_code)]

pub mod grad_cases;

use pointembed::autodiff::{Graph, Tensor, Var};
use pointembed::geometry::Point3;
use pointembed::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(rng, n)).unwrap()
}

/// Points on a small integer lattice, so many distances tie exactly.
pub fn lattice_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| [0; 3].map(|_| rng.random_range(-2..=2) as f64))
        .collect();
    PointCloud::new(pts).unwrap()
}

pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// FPS recomputing every candidate's distance to the whole selected set at
/// each step. Ties go to the lowest index.
pub fn fps_oracle(pts: &[Point3], n: usize, start: usize) -> Vec<usize> {
    let mut selected = vec![start];
    while selected.len() < n {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in pts.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            let d = selected
                .iter()
                .map(|&s| sq_dist(p, &pts[s]))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        selected.push(best.unwrap().1);
    }
    selected
}

/// KNN by fully sorting every reference point by (distance, index).
pub fn knn_oracle(queries: &[Point3], reference: &[Point3], k: usize) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = reference
                .iter()
                .enumerate()
                .map(|(j, r)| (sq_dist(q, r), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn nearest_dist(p: &Point3, set: &[Point3]) -> f64 {
    let mut best = f64::INFINITY;
    for q in set {
        let d = sq_dist(p, q);
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

pub fn chamfer_sum_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        ab += nearest_dist(p, b);
    }
    let mut ba = 0.0;
    for q in b {
        ba += nearest_dist(q, a);
    }
    ab + ba
}

pub fn chamfer_mean_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        ab += nearest_dist(p, b);
    }
    let mut ba = 0.0;
    for q in b {
        ba += nearest_dist(q, a);
    }
    ab / a.len() as f64 + ba / b.len() as f64
}

pub fn hausdorff_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let mut h: f64 = 0.0;
    for p in a {
        h = h.max(nearest_dist(p, b));
    }
    for q in b {
        h = h.max(nearest_dist(q, a));
    }
    h
}

/// Minimum mean matched distance over every permutation (Heap's algorithm).
pub fn emd_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let n = a.len();
    assert_eq!(n, b.len());
    let cost = |perm: &[usize]| -> f64 {
        let mut s = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            s += sq_dist(&a[i], &b[j]).sqrt();
        }
        s
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cost(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Norm-wise relative error `|a - b| / |b|` (absolute when `b` vanishes).
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of a scalar graph function against reverse
/// mode, for every input. `build` receives the input variables and returns a
/// single-element output. Returns the worst norm-wise relative error.
pub fn gradient_check<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).into_data();
        let mut numeric = vec![0.0; analytic.len()];
        let mut work = inputs.to_vec();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work);
            work[k].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, so relu and sqrt-like kinks are not hit.
pub fn tie_free_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts `v` with fixed pseudo-random weights into a scalar so every
/// output element receives a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let mut r = rng(seed);
    let w = g.constant(random_tensor(&mut r, &shape));
    let p = g.mul(v, w).unwrap();
    g.sum_all(p)
}

// Loop references for the network blocks, on plain row-major slices.

pub fn mat_row(x: &[f64], cols: usize, i: usize) -> &[f64] {
    &x[i * cols..(i + 1) * cols]
}

/// `x * w + b` for one row.
pub fn affine_row(x: &[f64], w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    (0..out)
        .map(|o| {
            b[o] + x
                .iter()
                .enumerate()
                .map(|(i, &xi)| xi * w[i * out + o])
                .sum::<f64>()
        })
        .collect()
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}
