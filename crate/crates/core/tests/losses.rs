mod common;

use common::{random_cloud, rng, sq_dist};
use pointembed::autodiff::NORM_EPS;
use pointembed::geometry::Point3;
use pointembed::losses::{
    chamfer, conformity_loss, distribution_loss, total_loss, DistributionSpec, LossWeights, Reduction,
};
use pointembed::PointCloud;
use rand::Rng;

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn len(v: &Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Offsets from `center` to `candidates`, each list re-sorted by length.
fn sorted_offsets(center: &Point3, candidates: &[Point3]) -> Vec<Point3> {
    let mut v: Vec<Point3> = candidates.iter().map(|c| sub(c, center)).collect();
    v.sort_by(|a, b| len(a).total_cmp(&len(b)));
    v
}

fn nearest_indices(center: &Point3, cloud: &[Point3], skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cloud.len()).filter(|&j| Some(j) != skip).collect();
    idx.sort_by(|&a, &b| {
        sq_dist(center, &cloud[a])
            .total_cmp(&sq_dist(center, &cloud[b]))
            .then(a.cmp(&b))
    });
    idx
}

fn distribution_oracle(p: &[Point3], r: &[Point3], m: usize, beta: f64, skip_nearest: bool, eps: f64) -> f64 {
    let mut total = 0.0;
    for (i, pi) in p.iter().enumerate() {
        let pn: Vec<Point3> = nearest_indices(pi, p, Some(i))[..m]
            .iter()
            .map(|&j| p[j])
            .collect();
        let from = usize::from(skip_nearest);
        let rn: Vec<Point3> = nearest_indices(pi, r, None)[from..from + m]
            .iter()
            .map(|&j| r[j])
            .collect();
        let vp = sorted_offsets(pi, &pn);
        let vr = sorted_offsets(pi, &rn);
        let mut l_norm = 0.0;
        let mut l_angle = 0.0;
        for (a, b) in vp.iter().zip(&vr) {
            l_norm += len(&sub(a, b));
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            l_angle += 1.0 - dot / (len(a).max(eps) * len(b).max(eps));
        }
        total += l_norm / m as f64 + beta * l_angle / m as f64;
    }
    total / p.len() as f64
}

#[test]
fn distribution_matches_nested_loop_reference() {
    let mut r = rng(11);
    for case in 0..40 {
        let p = random_cloud(&mut r, 16);
        let q = random_cloud(&mut r, 16 + case % 5);
        let beta = r.random_range(0.0..3.0);
        for skip_nearest in [false, true] {
            let spec = DistributionSpec {
                skip_nearest,
                ..DistributionSpec::new(4, beta)
            };
            let got = distribution_loss(&p, &q, &spec).unwrap();
            let want = distribution_oracle(p.points(), q.points(), 4, beta, skip_nearest, NORM_EPS);
            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn distribution_of_a_cloud_with_itself_is_zero() {
    let p = random_cloud(&mut rng(12), 64);
    assert_eq!(
        distribution_loss(&p, &p, &DistributionSpec::new(8, 2.0)).unwrap(),
        0.0
    );
}

#[test]
fn distribution_without_mirrored_exclusion_is_not_zero_on_itself() {
    let p = random_cloud(&mut rng(13), 32);
    let spec = DistributionSpec {
        skip_nearest: false,
        ..DistributionSpec::new(4, 2.0)
    };
    assert!(distribution_loss(&p, &p, &spec).unwrap() > 0.0);
}

#[test]
fn opposite_colinear_offsets_cost_two_per_pair() {
    // Each point's single neighbour sits at +x in P and at -x in R.
    let p = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
    let r = PointCloud::new(vec![[-1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
    let spec = DistributionSpec {
        skip_nearest: false,
        ..DistributionSpec::new(1, 1.0)
    };
    // Norm term: |(1,0,0) - (-1,0,0)| = 2 for both points; angle term 2 each.
    assert_eq!(distribution_loss(&p, &r, &spec).unwrap(), 4.0);
}

#[test]
fn distribution_rejects_bad_m() {
    let p = random_cloud(&mut rng(14), 8);
    for m in [0, 8] {
        assert!(distribution_loss(&p, &p, &DistributionSpec::new(m, 1.0)).is_err());
    }
}

#[test]
fn conformity_examples_and_loop_reference() {
    assert_eq!(conformity_loss(&[[0.0; 3]; 5], 1e-6).unwrap(), 0.0);
    assert_eq!(conformity_loss(&[[0.3, 0.4, 0.0]], 1e-6).unwrap(), 0.5 - 1e-6);
    assert!(conformity_loss(&[[1.0, 0.0, 0.0]], 0.0).is_err());

    let mut r = rng(15);
    for _ in 0..20 {
        let tau = r.random_range(0.01..0.5);
        let dq: Vec<Point3> = (0..30)
            .map(|_| [0; 3].map(|_| r.random_range(-0.4..0.4)))
            .collect();
        let want = dq.iter().map(|d| (len(d) - tau).max(0.0)).sum::<f64>() / 30.0;
        let got = conformity_loss(&dq, tau).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        let inside = dq.iter().all(|d| len(d) <= tau);
        assert_eq!(got == 0.0, inside);
    }
}

#[test]
fn total_loss_components() {
    let mut r = rng(16);
    let p = random_cloud(&mut r, 40);
    let zero = vec![[0.0; 3]; 10];
    let w = LossWeights::default();
    let same = total_loss(&p, &p, &zero, &w).unwrap();
    assert_eq!(same.total, 0.0);

    let q = random_cloud(&mut r, 40);
    let dq: Vec<Point3> = (0..10)
        .map(|_| [0; 3].map(|_| r.random_range(-0.1..0.1)))
        .collect();
    let plain = LossWeights {
        alpha: 0.0,
        lambda: 0.0,
        ..LossWeights::default()
    };
    let b = total_loss(&p, &q, &dq, &plain).unwrap();
    assert_eq!(b.total, chamfer(&q, &p, Reduction::Mean).unwrap());

    let full = total_loss(&p, &q, &dq, &w).unwrap();
    let expected = full.shape + w.alpha * full.dist + w.lambda * full.conform;
    assert!((full.total - expected).abs() <= 1e-12 * expected);
    assert_eq!(full.dist, distribution_loss(&p, &q, &w.distribution()).unwrap());
    assert_eq!(full.conform, conformity_loss(&dq, w.tau).unwrap());
}
