//! The jointly trained pair of networks behind one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, Graph, ParamStore, Scalar, Tensor, Var};
use crate::config::TrainConfig;
use crate::embedder::{embed_graph, init_embedder, EmbedResult, EmbedVars};
use crate::error::Result;
use crate::geometry::{farthest_point_sample, PointCloud};
use crate::losses::{total_loss_graph, LossTerms};
use crate::restorer::{init_restorer, replica_indices, restore_graph, RestoreResult, RestoreVars};

/// RNG stream used for parameter initialisation; training uses stream 1.
pub const INIT_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: TrainConfig,
    pub params: ParamStore<T>,
}

pub fn cloud_tensor<T: Scalar>(cloud: &PointCloud) -> Tensor<T> {
    Tensor::new(&[cloud.len(), 3], cloud.to_flat()).expect("cloud shape")
}

/// Full forward pass of one training example.
#[derive(Debug, Clone)]
pub struct Forward {
    pub p: Var,
    pub embed: EmbedVars,
    pub restore: RestoreVars,
    pub loss: LossTerms,
}

impl<T: Scalar> Model<T> {
    /// Glorot-initialised weights with zeroed final offset layers, so a fresh
    /// model embeds to plain FPS and restores to replicated samples.
    pub fn init(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let mut params = ParamStore::new();
        init_embedder(&mut params, &config, &mut rng);
        init_restorer(&mut params, &config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn embed(&self, cloud: &PointCloud) -> Result<EmbedResult<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let p = g.constant(cloud_tensor(cloud));
        let v = embed_graph(&mut g, &bound, &self.config, p)?;
        Ok(EmbedResult::from_vars(&g, &v))
    }

    pub fn restore(&self, q: &PointCloud) -> Result<RestoreResult<T>> {
        self.restore_tensor(cloud_tensor(q))
    }

    /// Restores from an `n x 3` tensor without a round trip through `f64`.
    pub fn restore_tensor(&self, q: Tensor<T>) -> Result<RestoreResult<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let q = g.constant(q);
        let v = restore_graph(&mut g, &bound, &self.config, q)?;
        Ok(RestoreResult::from_vars(&g, &v))
    }

    /// Builds embed -> restore -> joint loss for `cloud` on `g`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, cloud: &PointCloud) -> Result<Forward> {
        let p = g.constant(cloud_tensor(cloud));
        let embed = embed_graph(g, bound, &self.config, p)?;
        let restore = restore_graph(g, bound, &self.config, embed.q)?;
        let loss = total_loss_graph(g, p, restore.r, embed.delta_q, &self.config.loss_weights())?;
        Ok(Forward {
            p,
            embed,
            restore,
            loss,
        })
    }
}

/// Zero-offset restoration: `r` interleaved copies of the FPS samples of
/// `cloud`, computed at the model precision `T`.
pub fn duplication_baseline<T: Scalar>(cloud: &PointCloud, r: usize, fps_start: usize) -> Result<PointCloud> {
    let rounded = PointCloud::from_flat(&cloud.to_flat::<T>())?;
    let n = rounded.len() / r;
    let fps = farthest_point_sample(&rounded, n, fps_start)?;
    let q = rounded.select(&fps);
    Ok(q.select(&replica_indices(n, r)))
}
