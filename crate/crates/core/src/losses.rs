//! Training losses on the autodiff graph and plain evaluation metrics.
//!
//! Nearest-neighbour selections inside the differentiable losses are computed
//! from forward values and held fixed for the backward pass, so gradients flow
//! through the selected pairs only.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Tensor, Var, NORM_EPS};
use crate::error::{ensure, Error, Result};
use crate::geometry::{distance, knn_rows, squared_distance, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Parameters of the point distribution loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    pub m: usize,
    pub beta: f64,
    pub skip_nearest: bool,
    pub angle_eps: f64,
}

impl DistributionSpec {
    /// `m` neighbours, weight `beta`, nearest restored point skipped and the
    /// default cosine floor.
    pub fn new(m: usize, beta: f64) -> Self {
        Self {
            m,
            beta,
            skip_nearest: true,
            angle_eps: NORM_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the distribution loss.
    pub alpha: f64,
    /// Weight of the angle term inside the distribution loss.
    pub beta: f64,
    /// Weight of the conformity loss.
    pub lambda: f64,
    /// Dead zone of the conformity loss.
    pub tau: f64,
    /// Neighbours per point in the distribution loss.
    pub m: usize,
    /// Skip each point's nearest restored point in the distribution loss.
    pub skip_nearest: bool,
    /// Floor on vector lengths in the cosine of the angle term.
    pub angle_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 2.0,
            lambda: 100.0,
            tau: 1e-6,
            m: 8,
            skip_nearest: true,
            angle_eps: NORM_EPS,
        }
    }
}

impl LossWeights {
    pub fn distribution(&self) -> DistributionSpec {
        DistributionSpec {
            m: self.m,
            beta: self.beta,
            skip_nearest: self.skip_nearest,
            angle_eps: self.angle_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha >= 0.0 && self.beta >= 0.0 && self.lambda >= 0.0,
            Config,
            "loss weights must be non-negative"
        );
        ensure!(self.tau > 0.0, Config, "tau must be positive");
        ensure!(self.m >= 1, Config, "m must be at least 1");
        ensure!(self.angle_eps > 0.0, Config, "angle_eps must be positive");
        Ok(())
    }
}

fn nonempty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    ensure!(
        !a.is_empty() && !b.is_empty(),
        InvalidArgument,
        "empty point cloud"
    );
    Ok(())
}

fn directed_nearest<'a>(a: &'a PointCloud, b: &'a PointCloud) -> impl Iterator<Item = f64> + 'a {
    let bp = b.points();
    a.points().iter().map(move |p| {
        bp.iter()
            .map(|q| squared_distance(p, q))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    })
}

/// Bidirectional closest-point distance. `Mean` divides each directed sum by
/// its source count.
pub fn chamfer(a: &PointCloud, b: &PointCloud, reduction: Reduction) -> Result<f64> {
    nonempty(a, b)?;
    let ab: f64 = directed_nearest(a, b).sum();
    let ba: f64 = directed_nearest(b, a).sum();
    Ok(match reduction {
        Reduction::Sum => ab + ba,
        Reduction::Mean => ab / a.len() as f64 + ba / b.len() as f64,
    })
}

/// Mean distance from each point of `a` to its closest point in `b`.
pub fn directed_chamfer_mean(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    nonempty(a, b)?;
    Ok(directed_nearest(a, b).sum::<f64>() / a.len() as f64)
}

/// Symmetric Hausdorff distance.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    nonempty(a, b)?;
    let ab = directed_nearest(a, b).fold(0.0, f64::max);
    let ba = directed_nearest(b, a).fold(0.0, f64::max);
    Ok(ab.max(ba))
}

/// Largest size solved exactly by the Hungarian method.
pub const EMD_EXACT_LIMIT: usize = 1024;
/// Final epsilon of the auction fallback, in mean-distance units.
pub const AUCTION_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmdResult {
    /// Mean matched distance.
    pub value: f64,
    /// `assignment[i]` is the point of `b` matched to `a[i]`.
    pub assignment: Vec<usize>,
    pub exact: bool,
    /// Upper bound on `value - optimum`; zero when exact.
    pub bound: f64,
}

/// Earth mover's distance between equal-size clouds: the mean distance under
/// the optimal bijection.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(emd_detailed(a, b)?.value)
}

pub fn emd_detailed(a: &PointCloud, b: &PointCloud) -> Result<EmdResult> {
    nonempty(a, b)?;
    ensure!(
        a.len() == b.len(),
        InvalidArgument,
        "EMD needs equal sizes, got {} and {}",
        a.len(),
        b.len()
    );
    let n = a.len();
    let cost: Vec<f64> = a
        .points()
        .iter()
        .flat_map(|p| b.points().iter().map(move |q| distance(p, q)))
        .collect();
    let (assignment, exact, bound) = if n <= EMD_EXACT_LIMIT {
        (hungarian(&cost, n), true, 0.0)
    } else {
        (auction(&cost, n, AUCTION_EPS), false, AUCTION_EPS)
    };
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(EmdResult {
        value: total / n as f64,
        assignment,
        exact,
        bound,
    })
}

/// Minimum-cost perfect assignment of a square cost matrix via shortest
/// augmenting paths with row/column potentials, O(n^3).
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(r0 - 1) * n + (j - 1)] - u[r0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Forward auction with epsilon scaling. The returned assignment costs at
/// most `n * eps_final` more than the optimum.
pub fn auction(cost: &[f64], n: usize, eps_final: f64) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let mut prices = vec![0.0; n];
    let mut eps = (max_cost / 4.0).max(eps_final);
    let mut owner_of: Vec<Option<usize>>;
    let mut assigned: Vec<Option<usize>>;
    loop {
        owner_of = vec![None; n];
        assigned = vec![None; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let row = &cost[i * n..(i + 1) * n];
            let (mut best, mut best_v, mut second_v) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, &c) in row.iter().enumerate() {
                let val = -c - prices[j];
                if val > best_v {
                    second_v = best_v;
                    best_v = val;
                    best = j;
                } else if val > second_v {
                    second_v = val;
                }
            }
            let bid = if second_v.is_finite() {
                best_v - second_v + eps
            } else {
                eps
            };
            prices[best] += bid;
            if let Some(prev) = owner_of[best].replace(i) {
                assigned[prev] = None;
                queue.push(prev);
            }
            assigned[i] = Some(best);
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    assigned
        .into_iter()
        .map(|j| j.expect("auction assigns everyone"))
        .collect()
}

/// Per-shape evaluation metrics between an original and a restored cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub emd: f64,
    pub hd: f64,
    pub cd: f64,
}

impl MetricsReport {
    /// EMD is only defined for equal sizes; other pairs report NaN for it.
    pub fn compute(original: &PointCloud, restored: &PointCloud) -> Result<Self> {
        let emd = if original.len() == restored.len() {
            emd(original, restored)?
        } else {
            f64::NAN
        };
        Ok(Self {
            emd,
            hd: hausdorff(original, restored)?,
            cd: chamfer(original, restored, Reduction::Mean)?,
        })
    }

    pub fn mean(reports: &[MetricsReport]) -> Self {
        let n = reports.len().max(1) as f64;
        Self {
            emd: reports.iter().map(|r| r.emd).sum::<f64>() / n,
            hd: reports.iter().map(|r| r.hd).sum::<f64>() / n,
            cd: reports.iter().map(|r| r.cd).sum::<f64>() / n,
        }
    }
}

pub const METRICS_CSV_HEADER: &str = "shape_id,emd,hd,cd";

pub fn metrics_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for (id, m) in rows {
        out.push_str(&format!("{id},{:.6},{:.6},{:.6}\n", m.emd, m.hd, m.cd));
    }
    out
}

fn cloud_of<T: Scalar>(g: &Graph<T>, v: Var) -> Result<(usize, &[T])> {
    let s = g.shape(v);
    ensure!(
        s.len() == 2 && s[1] == 3,
        Shape,
        "expected a points x 3 tensor, got {s:?}"
    );
    Ok((s[0], g.value(v).data()))
}

/// Mean (or summed) distance from each row of `a` to its nearest row of `b`.
fn directed_chamfer_graph<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, reduction: Reduction) -> Result<Var> {
    let nearest = {
        let (_, av) = cloud_of(g, a)?;
        let (_, bv) = cloud_of(g, b)?;
        knn_rows(av, bv, 3, 1)?
    };
    let matched = g.gather(b, 0, &nearest)?;
    let diff = g.sub(matched, a)?;
    let d = g.norm(diff, 1, T::zero())?;
    Ok(match reduction {
        Reduction::Sum => g.sum_all(d),
        Reduction::Mean => g.mean_all(d),
    })
}

pub fn chamfer_graph<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, reduction: Reduction) -> Result<Var> {
    let ab = directed_chamfer_graph(g, a, b, reduction)?;
    let ba = directed_chamfer_graph(g, b, a, reduction)?;
    g.add(ab, ba)
}

/// Row-major `N x m` neighbour indices of each point of `p` inside `p`,
/// excluding the point itself.
fn neighbours_excluding_self<T: Scalar>(pv: &[T], m: usize) -> Result<Vec<usize>> {
    let n = pv.len() / 3;
    let with_self = knn_rows(pv, pv, 3, m + 1)?;
    let mut out = Vec::with_capacity(n * m);
    for (i, row) in with_self.chunks_exact(m + 1).enumerate() {
        let skip = row.iter().position(|&j| j == i).unwrap_or(m);
        out.extend(
            row.iter()
                .enumerate()
                .filter(|&(s, _)| s != skip)
                .map(|(_, &j)| j),
        );
    }
    Ok(out)
}

/// Point distribution loss between the original `p` (held constant) and the
/// restored `r`.
///
/// For each `p_i` the displacement vectors to its `m` nearest neighbours in
/// `p` (excluding `p_i`) and in `r` are paired in ascending-length order;
/// the loss is the mean over points of the mean vector difference length plus
/// `beta` times the mean `1 - cos` between paired vectors.
///
/// With `skip_nearest` the nearest point of `r` is treated as the
/// counterpart of `p_i` and skipped, mirroring the exclusion on the `p` side;
/// then `distribution(p, p) == 0`. Without it a restored point lying on `p_i`
/// contributes a zero vector, so the loss is not minimised at `r == p`.
pub fn distribution_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: Var,
    r: Var,
    spec: &DistributionSpec,
) -> Result<Var> {
    let DistributionSpec {
        m,
        beta,
        skip_nearest,
        angle_eps,
    } = *spec;
    ensure!(angle_eps > 0.0, InvalidArgument, "angle_eps must be positive");
    let (n, pv) = cloud_of(g, p)?;
    let (nr, rv) = cloud_of(g, r)?;
    let need = m + usize::from(skip_nearest);
    ensure!(
        m >= 1 && m < n && need <= nr,
        InvalidArgument,
        "m = {m} out of range for clouds of {n} and {nr} points"
    );
    let p_nbrs = neighbours_excluding_self(pv, m)?;
    let r_nbrs = if skip_nearest {
        knn_rows(pv, rv, 3, need)?
            .chunks_exact(need)
            .flat_map(|row| row[1..].to_vec())
            .collect()
    } else {
        knn_rows(pv, rv, 3, m)?
    };
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();

    let p_center = g.gather(p, 0, &centers)?;
    let p_nbr = g.gather(p, 0, &p_nbrs)?;
    let v_p = g.sub(p_nbr, p_center)?;
    let r_nbr = g.gather(r, 0, &r_nbrs)?;
    let v_r = g.sub(r_nbr, p_center)?;

    let diff = g.sub(v_p, v_r)?;
    let diff_len = g.norm(diff, 1, T::zero())?;
    let l_norm = g.mean_all(diff_len);

    let eps = T::lit(angle_eps);
    let prod = g.mul(v_p, v_r)?;
    let dot = g.sum(prod, 1)?;
    let len_p = g.norm(v_p, 1, eps)?;
    let len_r = g.norm(v_r, 1, eps)?;
    let denom = g.mul(len_p, len_r)?;
    let cos = g.div(dot, denom)?;
    let mean_cos = g.mean_all(cos);
    let neg = g.scale(mean_cos, -T::one());
    let l_angle = g.add_scalar(neg, T::one());

    let weighted = g.scale(l_angle, T::lit(beta));
    g.add(l_norm, weighted)
}

/// Mean over rows of `max(0, |dq_i| - tau)`.
pub fn conformity_graph<T: Scalar>(g: &mut Graph<T>, delta_q: Var, tau: f64) -> Result<Var> {
    ensure!(tau > 0.0, InvalidArgument, "tau must be positive");
    let lens = g.norm(delta_q, 1, T::zero())?;
    let shifted = g.add_scalar(lens, T::lit(-tau));
    let hinge = g.relu(shifted);
    Ok(g.mean_all(hinge))
}

/// Joint objective and its components.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub shape: Var,
    pub dist: Var,
    pub conform: Var,
}

/// `chamfer(R, P, mean) + alpha * distribution(P, R) + lambda * conformity(dQ)`.
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: Var,
    r: Var,
    delta_q: Var,
    w: &LossWeights,
) -> Result<LossTerms> {
    w.validate()?;
    let shape = chamfer_graph(g, r, p, Reduction::Mean)?;
    let dist = distribution_graph(g, p, r, &w.distribution())?;
    let conform = conformity_graph(g, delta_q, w.tau)?;
    let a = g.scale(dist, T::lit(w.alpha));
    let l = g.scale(conform, T::lit(w.lambda));
    let total = g.add(shape, a)?;
    let total = g.add(total, l)?;
    Ok(LossTerms {
        total,
        shape,
        dist,
        conform,
    })
}

fn cloud_tensor(c: &PointCloud) -> Tensor<f64> {
    Tensor::new(&[c.len(), 3], c.to_flat()).expect("cloud shape")
}

/// Value of [`distribution_graph`] in double precision.
pub fn distribution_loss(p: &PointCloud, r: &PointCloud, spec: &DistributionSpec) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let pv = g.constant(cloud_tensor(p));
    let rv = g.constant(cloud_tensor(r));
    let l = distribution_graph(&mut g, pv, rv, spec)?;
    g.value(l).item()
}

/// Value of [`conformity_graph`] for `n x 3` offsets.
pub fn conformity_loss(delta_q: &[[f64; 3]], tau: f64) -> Result<f64> {
    ensure!(!delta_q.is_empty(), InvalidArgument, "no offsets");
    let mut g = Graph::<f64>::new();
    let d = g.constant(Tensor::new(
        &[delta_q.len(), 3],
        delta_q.iter().flatten().copied().collect(),
    )?);
    let l = conformity_graph(&mut g, d, tau)?;
    g.value(l).item()
}

/// Component values of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub shape: f64,
    pub dist: f64,
    pub conform: f64,
}

impl LossBreakdown {
    pub fn read<T: Scalar>(g: &Graph<T>, t: &LossTerms) -> Result<Self> {
        let get = |v: Var| -> Result<f64> {
            g.value(v)
                .item()?
                .to_f64()
                .ok_or_else(|| Error::InvalidInput("loss not representable".into()))
        };
        Ok(Self {
            total: get(t.total)?,
            shape: get(t.shape)?,
            dist: get(t.dist)?,
            conform: get(t.conform)?,
        })
    }
}

pub fn total_loss(
    p: &PointCloud,
    r: &PointCloud,
    delta_q: &[[f64; 3]],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::<f64>::new();
    let pv = g.constant(cloud_tensor(p));
    let rv = g.constant(cloud_tensor(r));
    let d = g.constant(Tensor::new(
        &[delta_q.len(), 3],
        delta_q.iter().flatten().copied().collect(),
    )?);
    let t = total_loss_graph(&mut g, pv, rv, d, w)?;
    LossBreakdown::read(&g, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(p.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_single_pair() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b, Reduction::Sum).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &b, Reduction::Mean).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a, Reduction::Sum).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_one_sided_extreme() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0; 3]]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&b, &a).unwrap(), 1.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn emd_permutation_is_free() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0; 3]]);
        let res = emd_detailed(&a, &b).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.assignment, vec![1, 0]);
        assert!(emd(&a, &cloud(&[[0.0; 3]])).is_err());
    }

    #[test]
    fn auction_matches_hungarian_on_small_problem() {
        let n = 12;
        let cost: Vec<f64> = (0..n * n).map(|i| ((i * 37 % 101) as f64).sqrt()).collect();
        let exact = hungarian(&cost, n);
        let approx = auction(&cost, n, 1e-9);
        let total = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>();
        assert!(total(&approx) - total(&exact) <= n as f64 * 1e-9 + 1e-12);
    }

    #[test]
    fn conformity_examples() {
        assert_eq!(conformity_loss(&[[0.0; 3]], 1e-6).unwrap(), 0.0);
        let v = conformity_loss(&[[0.3, 0.4, 0.0]], 1e-6).unwrap();
        assert!((v - (0.5 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn distribution_of_identical_clouds_is_zero() {
        let p = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.1, 0.0],
            [0.2, 1.3, 0.0],
            [0.5, 0.4, 1.7],
            [2.1, 0.9, 0.3],
        ]);
        let v = distribution_loss(&p, &p, &DistributionSpec::new(2, 2.0)).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
        assert!(distribution_loss(&p, &p, &DistributionSpec::new(5, 2.0)).is_err());
    }

    #[test]
    fn opposite_vectors_cost_two_in_angle_term() {
        // p0's single neighbour in P is +x, its nearest point in R is -x.
        let p = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let r = cloud(&[[-1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let mut g = Graph::<f64>::new();
        let pv = g.constant(cloud_tensor(&p));
        let rv = g.constant(cloud_tensor(&r));
        let l = distribution_graph(
            &mut g,
            pv,
            rv,
            &DistributionSpec {
                skip_nearest: false,
                ..DistributionSpec::new(1, 1.0)
            },
        )
        .unwrap();
        let total = g.value(l).item().unwrap();
        // p0: |(1,0,0) - (-1,0,0)| = 2 and 1 - cos = 2.
        // p1: (-1,0,0) against (-2,0,0) gives length 1 and 1 - cos = 0.
        assert!((total - (2.0 + 2.0 + 1.0) / 2.0).abs() < 1e-12, "{total}");
    }
}
