//! Restoration network: features of Q, up-shuffle expansion to `r` rows per
//! sparse point, offset regression and `R = R' + dR`.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Tensor, Var};
use crate::config::TrainConfig;
use crate::error::{ensure, Result};
use crate::geometry::PointCloud;
use crate::netblocks::{
    edgeconv_forward, feature_extractor_forward, init_edgeconv, init_extractor, init_mlp, mlp_forward,
    EdgeConvSpec, MlpSpec,
};

pub const PREFIX: &str = "R";

fn expand_spec(cfg: &TrainConfig) -> EdgeConvSpec {
    EdgeConvSpec {
        k: cfg.k_conv,
        in_channels: cfg.channels,
        out_channels: cfg.ratio * cfg.channels,
    }
}

pub fn init_restorer<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &TrainConfig, rng: &mut R) {
    init_extractor(store, "R/extractor", &cfg.extractor_spec(), rng);
    init_edgeconv(store, "R/expand", &expand_spec(cfg), rng);
    init_mlp(store, "R/offset", &cfg.restore_offset_spec(), true, rng);
}

/// Row `i * r + s` of the result is `source[i]` for every replica `s`.
pub fn replica_indices(n: usize, r: usize) -> Vec<usize> {
    (0..n).flat_map(|i| std::iter::repeat_n(i, r)).collect()
}

/// Periodic shuffle of an `n x rC` row-major array into `nr x C`: element
/// `(i, s*C + c)` moves to `(i*r + s, c)`.
pub fn shuffle<T: Copy>(expanded: &[T], n: usize, r: usize, c: usize) -> Vec<T> {
    assert_eq!(expanded.len(), n * r * c);
    let mut out = Vec::with_capacity(expanded.len());
    for i in 0..n {
        for s in 0..r {
            for ch in 0..c {
                out.push(expanded[i * r * c + s * c + ch]);
            }
        }
    }
    out
}

/// Inverse of [`shuffle`].
pub fn unshuffle<T: Copy + Default>(shuffled: &[T], n: usize, r: usize, c: usize) -> Vec<T> {
    assert_eq!(shuffled.len(), n * r * c);
    let mut out = vec![T::default(); shuffled.len()];
    for i in 0..n {
        for s in 0..r {
            for ch in 0..c {
                out[i * r * c + s * c + ch] = shuffled[(i * r + s) * c + ch];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct UpShuffle {
    /// `n x rC` EdgeConv output before shuffling.
    pub expanded: Var,
    pub shuffled: Var,
    /// `r` interleaved copies of Q, `N x 3`.
    pub r_prime: Var,
    /// `N x (C + 3)`.
    pub f_r: Var,
}

/// Expands `n x C` features to `n x rC` with EdgeConv, shuffles them to
/// `N x C` and appends the matching replica coordinates.
pub fn up_shuffle<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    spec: &EdgeConvSpec,
    f_q: Var,
    q: Var,
    r: usize,
) -> Result<UpShuffle> {
    ensure!(r >= 1, InvalidArgument, "ratio must be positive");
    let n = g.shape(q)[0];
    ensure!(
        g.shape(f_q)[0] == n,
        Shape,
        "{} feature rows for {n} points",
        g.shape(f_q)[0]
    );
    ensure!(
        spec.out_channels.is_multiple_of(r),
        Shape,
        "expansion width {} not divisible by r = {r}",
        spec.out_channels
    );
    let c = spec.out_channels / r;
    let expanded = edgeconv_forward(g, bound, prefix, spec, f_q)?;
    // Row-major layout makes the periodic shuffle a plain reshape.
    let shuffled = g.reshape(expanded, &[n * r, c])?;
    let r_prime = g.gather(q, 0, &replica_indices(n, r))?;
    let f_r = g.concat(&[shuffled, r_prime], 1)?;
    Ok(UpShuffle {
        expanded,
        shuffled,
        r_prime,
        f_r,
    })
}

pub fn offset_generator<T: Scalar>(g: &mut Graph<T>, bound: &Bound, spec: &MlpSpec, f_r: Var) -> Result<Var> {
    mlp_forward(g, bound, "R/offset", spec, f_r)
}

#[derive(Debug, Clone, Copy)]
pub struct RestoreVars {
    pub r: Var,
    pub r_prime: Var,
    pub delta_r: Var,
    pub f_r: Var,
}

pub fn restore_graph<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    cfg: &TrainConfig,
    q: Var,
) -> Result<RestoreVars> {
    let n = g.shape(q)[0];
    ensure!(
        n >= cfg.k_conv,
        InvalidArgument,
        "restoring {n} points needs at least k_conv = {} points",
        cfg.k_conv
    );
    let f_q = feature_extractor_forward(g, bound, "R/extractor", &cfg.extractor_spec(), q)?;
    let up = up_shuffle(g, bound, "R/expand", &expand_spec(cfg), f_q, q, cfg.ratio)?;
    let delta_r = offset_generator(g, bound, &cfg.restore_offset_spec(), up.f_r)?;
    let r = g.add(up.r_prime, delta_r)?;
    Ok(RestoreVars {
        r,
        r_prime: up.r_prime,
        delta_r,
        f_r: up.f_r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreResult<T> {
    pub r: Tensor<T>,
    pub r_prime: Tensor<T>,
    pub delta_r: Tensor<T>,
    pub f_r: Tensor<T>,
}

impl<T: Scalar> RestoreResult<T> {
    pub fn from_vars(g: &Graph<T>, v: &RestoreVars) -> Self {
        Self {
            r: g.value(v.r).clone(),
            r_prime: g.value(v.r_prime).clone(),
            delta_r: g.value(v.delta_r).clone(),
            f_r: g.value(v.f_r).clone(),
        }
    }

    pub fn r_cloud(&self) -> Result<PointCloud> {
        PointCloud::from_flat(self.r.data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_small_example() {
        let expanded = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];
        assert_eq!(
            shuffle(&expanded, 2, 2, 2),
            vec!['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h']
        );
        assert_eq!(
            unshuffle(&shuffle(&expanded, 2, 2, 2), 2, 2, 2),
            expanded.to_vec()
        );
    }

    #[test]
    fn shuffle_ratio_one_is_identity() {
        let x: Vec<i32> = (0..12).collect();
        assert_eq!(shuffle(&x, 4, 1, 3), x);
    }

    #[test]
    fn replicas_are_interleaved_blocks() {
        assert_eq!(replica_indices(3, 2), vec![0, 0, 1, 1, 2, 2]);
    }
}
