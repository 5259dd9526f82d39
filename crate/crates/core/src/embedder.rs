//! Self-embedding network: pre-downsample with FPS, aggregate each sample's
//! K-neighbourhood features with attention (down-shuffle), regress small
//! offsets and emit `Q = Q' + dQ`.

use rand::Rng;

use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Tensor, Var};
use crate::config::TrainConfig;
use crate::error::{ensure, Result};
use crate::geometry::{farthest_point_sample, knn_rows, PointCloud};
use crate::netblocks::{
    feature_extractor_forward, init_attention, init_extractor, init_mlp, mlp_forward,
    neighborhood_self_attention, AttentionSpec, MlpSpec,
};

pub const PREFIX: &str = "E";

pub fn init_embedder<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &TrainConfig, rng: &mut R) {
    init_extractor(store, "E/extractor", &cfg.extractor_spec(), rng);
    init_attention(store, "E/attention", &cfg.attention_spec(), rng);
    init_mlp(store, "E/offset", &cfg.embed_offset_spec(), true, rng);
}

#[derive(Debug, Clone)]
pub struct DownShuffle {
    /// FPS subset of the input, `n x 3`.
    pub q_prime: Var,
    /// Embedded features, `n x C'`.
    pub f_e: Var,
    /// Attention weights, `n x K x K`.
    pub attention: Var,
    pub fps_indices: Vec<usize>,
    /// Row-major `n x K` neighbour indices into the input.
    pub group_indices: Vec<usize>,
}

/// Samples `n` points by FPS, groups the features of each sample's `k`
/// nearest neighbours in the full input and aggregates every group with
/// neighbourhood attention. The first member of each group is the sampled
/// point itself, so the sampled feature rows are part of every group.
#[allow(clippy::too_many_arguments)]
pub fn down_shuffle<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    attention: &AttentionSpec,
    points: Var,
    features: Var,
    n: usize,
    k: usize,
    fps_start: usize,
) -> Result<DownShuffle> {
    let big_n = g.shape(points)[0];
    ensure!(
        g.shape(features)[0] == big_n,
        Shape,
        "{} feature rows for {big_n} points",
        g.shape(features)[0]
    );
    ensure!(
        n >= 1 && n <= big_n,
        InvalidArgument,
        "cannot sample {n} of {big_n} points"
    );
    ensure!(k > big_n / n, Config, "K = {k} must exceed N/n = {}", big_n / n);
    ensure!(k <= big_n, Config, "K = {k} exceeds N = {big_n}");

    let cloud = PointCloud::from_flat(g.value(points).data())?;
    let fps_indices = farthest_point_sample(&cloud, n, fps_start)?;
    let q_prime = g.gather(points, 0, &fps_indices)?;
    let flat = cloud.to_flat::<f64>();
    let seeds = cloud.select(&fps_indices).to_flat::<f64>();
    let group_indices = knn_rows(&seeds, &flat, 3, k)?;

    let c = g.shape(features)[1];
    let grouped = g.gather(features, 0, &group_indices)?;
    let grouped = g.reshape(grouped, &[n, k, c])?;
    let att = neighborhood_self_attention(g, bound, prefix, attention, grouped)?;
    Ok(DownShuffle {
        q_prime,
        f_e: att.features,
        attention: att.weights,
        fps_indices,
        group_indices,
    })
}

/// Per-row MLP regressing `n x 3` offsets from the embedded features.
pub fn offset_generator<T: Scalar>(g: &mut Graph<T>, bound: &Bound, spec: &MlpSpec, f_e: Var) -> Result<Var> {
    mlp_forward(g, bound, "E/offset", spec, f_e)
}

#[derive(Debug, Clone)]
pub struct EmbedVars {
    pub q: Var,
    pub q_prime: Var,
    pub delta_q: Var,
    pub f_e: Var,
    pub attention: Var,
    pub fps_indices: Vec<usize>,
    pub group_indices: Vec<usize>,
}

/// Full embedder on an `N x 3` input with `n = N / r` samples.
pub fn embed_graph<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    cfg: &TrainConfig,
    points: Var,
) -> Result<EmbedVars> {
    let big_n = g.shape(points)[0];
    ensure!(
        big_n.is_multiple_of(cfg.ratio),
        InvalidArgument,
        "{big_n} points are not divisible by r = {}",
        cfg.ratio
    );
    let n = big_n / cfg.ratio;
    let features = feature_extractor_forward(g, bound, "E/extractor", &cfg.extractor_spec(), points)?;
    let ds = down_shuffle(
        g,
        bound,
        "E/attention",
        &cfg.attention_spec(),
        points,
        features,
        n,
        cfg.k_group,
        cfg.fps_start.min(big_n - 1),
    )?;
    let delta_q = offset_generator(g, bound, &cfg.embed_offset_spec(), ds.f_e)?;
    let q = g.add(ds.q_prime, delta_q)?;
    Ok(EmbedVars {
        q,
        q_prime: ds.q_prime,
        delta_q,
        f_e: ds.f_e,
        attention: ds.attention,
        fps_indices: ds.fps_indices,
        group_indices: ds.group_indices,
    })
}

/// Materialized embedder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResult<T> {
    pub q: Tensor<T>,
    pub q_prime: Tensor<T>,
    pub delta_q: Tensor<T>,
    pub f_e: Tensor<T>,
    pub fps_indices: Vec<usize>,
}

impl<T: Scalar> EmbedResult<T> {
    pub fn from_vars(g: &Graph<T>, v: &EmbedVars) -> Self {
        Self {
            q: g.value(v.q).clone(),
            q_prime: g.value(v.q_prime).clone(),
            delta_q: g.value(v.delta_q).clone(),
            f_e: g.value(v.f_e).clone(),
            fps_indices: v.fps_indices.clone(),
        }
    }

    pub fn q_cloud(&self) -> Result<PointCloud> {
        PointCloud::from_flat(self.q.data())
    }

    pub fn q_prime_cloud(&self) -> Result<PointCloud> {
        PointCloud::from_flat(self.q_prime.data())
    }

    pub fn mean_offset_norm(&self) -> f64 {
        let rows = self.delta_q.data().chunks_exact(3);
        let n = rows.len() as f64;
        rows.map(|r| r.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n
    }

    pub fn max_offset_norm(&self) -> f64 {
        self.delta_q
            .data()
            .chunks_exact(3)
            .map(|r| r.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Writes offsets as `dx,dy,dz` rows.
pub fn offsets_csv<T: Scalar>(delta_q: &Tensor<T>) -> String {
    let mut out = String::from("dx,dy,dz\n");
    for r in delta_q.data().chunks_exact(3) {
        out.push_str(&format!(
            "{:.9},{:.9},{:.9}\n",
            r[0].to_f64().unwrap(),
            r[1].to_f64().unwrap(),
            r[2].to_f64().unwrap()
        ));
    }
    out
}
