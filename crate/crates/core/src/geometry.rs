//! Point-set primitives: unit-sphere normalization, farthest point sampling,
//! exact k-nearest-neighbour search and patch split/merge for large inputs.
//!
//! Distances are compared as squared Euclidean distances accumulated in x, y, z
//! order. Ties are always broken towards the lowest index.

use std::collections::HashMap;

use num_traits::Float;

use crate::error::{ensure, Error, Result};

pub type Point3 = [f64; 3];

/// Ordered, non-empty list of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        ensure!(!points.is_empty(), InvalidInput, "point cloud has no points");
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a row-major `count x 3` buffer.
    pub fn from_flat<T: Float>(flat: &[T]) -> Result<Self> {
        ensure!(
            flat.len().is_multiple_of(3),
            Shape,
            "flat buffer length {} is not a multiple of 3",
            flat.len()
        );
        let points = flat
            .chunks_exact(3)
            .map(|c| {
                [
                    c[0].to_f64().unwrap_or(f64::NAN),
                    c[1].to_f64().unwrap_or(f64::NAN),
                    c[2].to_f64().unwrap_or(f64::NAN),
                ]
            })
            .collect();
        Self::new(points)
    }

    pub fn to_flat<T: Float>(&self) -> Vec<T> {
        self.points
            .iter()
            .flat_map(|p| p.iter().map(|&c| T::from(c).unwrap()))
            .collect()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
        }
    }

    /// Concatenates clouds in order.
    pub fn concat(clouds: &[PointCloud]) -> Result<PointCloud> {
        PointCloud::new(clouds.iter().flat_map(|c| c.points.iter().copied()).collect())
    }
}

#[inline]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Maps `p` to `(p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.center[0]) / self.scale,
            (p[1] - self.center[1]) / self.scale,
            (p[2] - self.center[2]) / self.scale,
        ]
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        [
            p[0] * self.scale + self.center[0],
            p[1] * self.scale + self.center[1],
            p[2] * self.scale + self.center[2],
        ]
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply(p))
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.invert(p))
    }
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// unit norm. A cloud whose points all coincide keeps scale 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> (PointCloud, NormalizationTransform) {
    let center = cloud.centroid();
    let max_norm = cloud
        .points()
        .iter()
        .map(|p| distance(p, &center))
        .fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    let t = NormalizationTransform { center, scale };
    (t.apply_cloud(cloud), t)
}

/// Greedy farthest point sampling starting from `start_index`.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, start_index: usize) -> Result<Vec<usize>> {
    let pts = cloud.points();
    ensure!(n >= 1, InvalidArgument, "sample count must be positive");
    ensure!(
        n <= pts.len(),
        InvalidArgument,
        "cannot sample {n} points from a cloud of {}",
        pts.len()
    );
    ensure!(
        start_index < pts.len(),
        InvalidArgument,
        "start index {start_index} out of range for {} points",
        pts.len()
    );

    let mut min_dist = vec![f64::INFINITY; pts.len()];
    let mut selected = Vec::with_capacity(n);
    let mut current = start_index;
    selected.push(current);
    // Selected points are parked at -1 so they never win the argmax.
    min_dist[current] = -1.0;
    while selected.len() < n {
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if min_dist[i] < 0.0 {
                continue;
            }
            let d = squared_distance(p, &c);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_d {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
        min_dist[current] = -1.0;
        selected.push(current);
    }
    Ok(selected)
}

/// Exact K nearest neighbours of each query row among the reference rows.
///
/// Both buffers are row-major with `dim` columns. Returns a row-major
/// `queries x k` index matrix, each row sorted by ascending squared distance
/// with ties resolved by lower index.
pub fn knn_rows<T: Float>(queries: &[T], reference: &[T], dim: usize, k: usize) -> Result<Vec<usize>> {
    ensure!(dim > 0, InvalidArgument, "dimension must be positive");
    ensure!(
        queries.len().is_multiple_of(dim) && reference.len().is_multiple_of(dim),
        Shape,
        "buffer lengths are not multiples of dim {dim}"
    );
    let n_ref = reference.len() / dim;
    ensure!(k >= 1, InvalidArgument, "k must be positive");
    ensure!(
        k <= n_ref,
        InvalidArgument,
        "k = {k} exceeds the reference size {n_ref}"
    );
    let mut out = Vec::with_capacity(queries.len() / dim * k);
    // Sorted best-so-far list. References are scanned in index order and a
    // candidate goes after every entry it ties with, so ties keep the lower
    // index.
    let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
    let offer = |best: &mut Vec<(T, usize)>, d: T, j: usize| {
        if best.len() == k && !(d < best[k - 1].0) {
            return;
        }
        let pos = best.partition_point(|e| !(e.0 > d));
        best.insert(pos, (d, j));
        best.truncate(k);
    };
    for q in queries.chunks_exact(dim) {
        best.clear();
        // Four independent accumulation chains; each distance is still summed
        // in coordinate order, so results match the one-row loop exactly.
        let mut blocks = reference.chunks_exact(4 * dim);
        let mut j = 0;
        for block in &mut blocks {
            let mut d = [T::zero(); 4];
            for c in 0..dim {
                let a = q[c];
                for (r, acc) in d.iter_mut().enumerate() {
                    let diff = a - block[r * dim + c];
                    *acc = *acc + diff * diff;
                }
            }
            for (r, &dist) in d.iter().enumerate() {
                offer(&mut best, dist, j + r);
            }
            j += 4;
        }
        for r in blocks.remainder().chunks_exact(dim) {
            let mut d = T::zero();
            for (a, b) in q.iter().zip(r) {
                let diff = *a - *b;
                d = d + diff * diff;
            }
            offer(&mut best, d, j);
            j += 1;
        }
        out.extend(best.iter().map(|&(_, j)| j));
    }
    Ok(out)
}

/// K nearest neighbours in 3D; see [`knn_rows`].
pub fn knn(queries: &PointCloud, reference: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let flat = knn_rows(&queries.to_flat::<f64>(), &reference.to_flat::<f64>(), 3, k)?;
    Ok(flat.chunks_exact(k).map(|r| r.to_vec()).collect())
}

pub const DEFAULT_OVERLAP_FACTOR: f64 = 2.0;
pub const DEFAULT_DEDUP_RADIUS: f64 = 1e-6;

/// Everything needed to map per-patch results back into the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLayout {
    pub seed_indices: Vec<usize>,
    pub patch_member_indices: Vec<Vec<usize>>,
    pub transforms: Vec<NormalizationTransform>,
}

impl PatchLayout {
    pub fn len(&self) -> usize {
        self.seed_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seed_indices.is_empty()
    }
}

/// Splits a large cloud into overlapping, individually normalized patches of
/// exactly `patch_size` points.
///
/// Seeds come from FPS; ceil(overlap_factor * count / patch_size) seeds are
/// used first, and more FPS seeds are appended while any point is uncovered.
pub fn split_patches(
    cloud: &PointCloud,
    patch_size: usize,
    overlap_factor: f64,
) -> Result<(Vec<PointCloud>, PatchLayout)> {
    let count = cloud.len();
    ensure!(patch_size >= 1, InvalidArgument, "patch size must be positive");
    ensure!(
        patch_size <= count,
        InvalidArgument,
        "patch size {patch_size} exceeds cloud size {count}"
    );
    ensure!(
        overlap_factor.is_finite() && overlap_factor > 0.0,
        InvalidArgument,
        "overlap factor must be positive, got {overlap_factor}"
    );
    let initial = ((overlap_factor * count as f64 / patch_size as f64).ceil() as usize).clamp(1, count);
    // The full FPS order is only materialized lazily in chunks.
    let mut order = farthest_point_sample(cloud, initial, 0)?;
    let flat = cloud.to_flat::<f64>();
    let mut covered = vec![false; count];
    let mut n_covered = 0;
    let mut seeds = Vec::new();
    let mut members = Vec::new();
    let mut next = 0;
    while n_covered < count || seeds.len() < initial {
        if next == order.len() {
            let grow = (order.len() * 2).min(count);
            order = farthest_point_sample(cloud, grow, 0)?;
        }
        let seed = order[next];
        next += 1;
        if seeds.len() >= initial && covered[seed] {
            continue;
        }
        let p = cloud.points()[seed];
        let mut idx = knn_rows(&p, &flat, 3, patch_size)?;
        if !idx.contains(&seed) {
            // only possible with more coincident points than the patch holds
            *idx.last_mut().unwrap() = seed;
        }
        for &i in &idx {
            if !covered[i] {
                covered[i] = true;
                n_covered += 1;
            }
        }
        seeds.push(seed);
        members.push(idx);
    }

    let mut patches = Vec::with_capacity(seeds.len());
    let mut transforms = Vec::with_capacity(seeds.len());
    for idx in &members {
        let (normed, t) = normalize_unit_sphere(&cloud.select(idx));
        patches.push(normed);
        transforms.push(t);
    }
    Ok((
        patches,
        PatchLayout {
            seed_indices: seeds,
            patch_member_indices: members,
            transforms,
        },
    ))
}

/// De-normalizes each patch, concatenates them and collapses points closer
/// than `dedup_radius` into their centroid. Clusters are emitted in order of
/// their first member.
pub fn merge_patches(patches: &[PointCloud], layout: &PatchLayout, dedup_radius: f64) -> Result<PointCloud> {
    ensure!(
        patches.len() == layout.transforms.len(),
        InvalidArgument,
        "got {} patches for a layout of {}",
        patches.len(),
        layout.transforms.len()
    );
    let mut all = Vec::new();
    for (patch, t) in patches.iter().zip(&layout.transforms) {
        all.extend(patch.points().iter().map(|p| t.invert(p)));
    }
    PointCloud::new(dedup_points(&all, dedup_radius))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering at `radius`, each cluster replaced by its centroid.
pub fn dedup_points(points: &[Point3], radius: f64) -> Vec<Point3> {
    if radius <= 0.0 {
        return points.to_vec();
    }
    let cell = |p: &Point3| p.map(|c| (c / radius).floor() as i64);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut parent: Vec<usize> = (0..points.len()).collect();
    for (i, p) in points.iter().enumerate() {
        let c = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && squared_distance(p, &points[j]) < r2 {
                            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                            if a != b {
                                parent[a.max(b)] = a.min(b);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut sums: Vec<(Point3, usize)> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let root = find(&mut parent, i);
        let s = *slot.entry(root).or_insert_with(|| {
            sums.push(([0.0; 3], 0));
            sums.len() - 1
        });
        let (acc, n) = &mut sums[s];
        for d in 0..3 {
            acc[d] += p[d];
        }
        *n += 1;
    }
    sums.into_iter()
        .map(|(acc, n)| if n == 1 { acc } else { acc.map(|v| v / n as f64) })
        .collect()
}
