//! Shared network blocks built on the autodiff graph: MLP stacks, EdgeConv,
//! the densely connected EdgeConv feature extractor and K-neighbourhood
//! self-attention.
//!
//! Parameters live in a [`ParamStore`] under `<prefix>/<name>` keys. Every
//! block has an `init_*` function that registers its tensors and a
//! `*_forward` function that reads them back through a [`Bound`] map.

use rand::Rng;

use crate::autodiff::{glorot, Bound, Graph, ParamStore, Scalar, Tensor, Var};
use crate::error::{ensure, Error, Result};
use crate::geometry::knn_rows;

/// Layer widths of a per-row MLP, input width first. Hidden layers use ReLU,
/// the final layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        ensure!(widths.len() >= 2, Config, "an MLP needs at least one layer");
        ensure!(
            widths.iter().all(|&w| w > 0),
            Config,
            "MLP widths must be positive"
        );
        Ok(Self { widths })
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    zero: bool,
    rng: &mut R,
) {
    let w = if zero {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        glorot(fan_in, fan_out, rng)
    };
    store.insert(format!("{prefix}/w"), w);
    store.insert(format!("{prefix}/b"), Tensor::zeros(&[1, fan_out]));
}

/// `x * W + b` for `x` of shape `rows x in`. The bias is tiled with a gather.
pub fn linear<T: Scalar>(g: &mut Graph<T>, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.get(&format!("{prefix}/w"))?;
    let b = bound.get(&format!("{prefix}/b"))?;
    let rows = g.shape(x)[0];
    let xw = g.matmul(x, w)?;
    let tiled = g.gather(b, 0, &vec![0; rows])?;
    g.add(xw, tiled)
}

/// Registers an MLP. With `zero_last` the final layer starts at exactly zero.
pub fn init_mlp<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &MlpSpec,
    zero_last: bool,
    rng: &mut R,
) {
    for l in 0..spec.layers() {
        let last = l + 1 == spec.layers();
        init_linear(
            store,
            &format!("{prefix}/l{l}"),
            spec.widths[l],
            spec.widths[l + 1],
            zero_last && last,
            rng,
        );
    }
}

pub fn mlp_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    spec: &MlpSpec,
    x: Var,
) -> Result<Var> {
    let shape = g.shape(x);
    ensure!(
        shape.len() == 2 && shape[1] == spec.in_width(),
        Shape,
        "MLP `{prefix}` expects rows x {}, got {shape:?}",
        spec.in_width()
    );
    let mut h = x;
    for l in 0..spec.layers() {
        h = linear(g, bound, &format!("{prefix}/l{l}"), h)?;
        if l + 1 < spec.layers() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// EdgeConv layer: `out_i = max_j relu(W_s f_i + W_e (f_j - f_i) + b)` over
/// the `k` nearest neighbours `j` of row `i` in feature space (self included).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeConvSpec {
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

pub fn init_edgeconv<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &EdgeConvSpec,
    rng: &mut R,
) {
    // Glorot over the concatenated [f_i ; f_j - f_i] input.
    let both: Tensor<T> = glorot(2 * spec.in_channels, spec.out_channels, rng);
    let (top, bottom) = both.data().split_at(spec.in_channels * spec.out_channels);
    let shape = [spec.in_channels, spec.out_channels];
    store.insert(
        format!("{prefix}/w_self"),
        Tensor::new(&shape, top.to_vec()).unwrap(),
    );
    store.insert(
        format!("{prefix}/w_edge"),
        Tensor::new(&shape, bottom.to_vec()).unwrap(),
    );
    store.insert(format!("{prefix}/b"), Tensor::zeros(&[1, spec.out_channels]));
}

/// Neighbour graph of the rows of `features` (row-major, `dim` columns).
pub fn feature_knn<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<Vec<usize>> {
    let dim = features.shape()[1];
    knn_rows(features.data(), features.data(), dim, k)
}

pub fn edgeconv_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    spec: &EdgeConvSpec,
    features: Var,
) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    ensure!(
        shape.len() == 2 && shape[1] == spec.in_channels,
        Shape,
        "EdgeConv `{prefix}` expects rows x {}, got {shape:?}",
        spec.in_channels
    );
    let m = shape[0];
    ensure!(
        spec.k >= 1 && spec.k <= m,
        InvalidArgument,
        "EdgeConv k = {} with {m} points",
        spec.k
    );
    let nbrs = feature_knn(g.value(features), spec.k)?;
    let centers: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, spec.k)).collect();

    let w_self = bound.get(&format!("{prefix}/w_self"))?;
    let w_edge = bound.get(&format!("{prefix}/w_edge"))?;
    let b = bound.get(&format!("{prefix}/b"))?;
    let a = g.matmul(features, w_self)?;
    let e = g.matmul(features, w_edge)?;
    let center_term = g.sub(a, e)?;
    let center_rows = g.gather(center_term, 0, &centers)?;
    let nbr_rows = g.gather(e, 0, &nbrs)?;
    let bias = g.gather(b, 0, &vec![0; m * spec.k])?;
    let pre = g.add(center_rows, nbr_rows)?;
    let pre = g.add(pre, bias)?;
    let act = g.relu(pre);
    let grouped = g.reshape(act, &[m, spec.k, spec.out_channels])?;
    g.max(grouped, 1)
}

/// Stack of EdgeConv blocks followed by a linear projection to
/// `out_channels`. With dense connections, every block (and the projection)
/// sees the raw coordinates concatenated with all earlier block outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub blocks: usize,
    pub growth: usize,
    pub k: usize,
    pub dense: bool,
    pub out_channels: usize,
}

impl ExtractorSpec {
    fn block_spec(&self, b: usize) -> EdgeConvSpec {
        let in_channels = if b == 0 {
            3
        } else if self.dense {
            3 + b * self.growth
        } else {
            self.growth
        };
        EdgeConvSpec {
            k: self.k,
            in_channels,
            out_channels: self.growth,
        }
    }

    fn projection_in(&self) -> usize {
        if self.dense {
            3 + self.blocks * self.growth
        } else {
            self.growth
        }
    }
}

pub fn init_extractor<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &ExtractorSpec,
    rng: &mut R,
) {
    for b in 0..spec.blocks {
        init_edgeconv(store, &format!("{prefix}/ec{b}"), &spec.block_spec(b), rng);
    }
    init_linear(
        store,
        &format!("{prefix}/proj"),
        spec.projection_in(),
        spec.out_channels,
        false,
        rng,
    );
}

pub fn feature_extractor_forward<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    spec: &ExtractorSpec,
    points: Var,
) -> Result<Var> {
    ensure!(spec.blocks >= 1, Config, "extractor needs at least one block");
    let mut collected = vec![points];
    let mut last = points;
    for b in 0..spec.blocks {
        let input = if spec.dense && collected.len() > 1 {
            g.concat(&collected, 1)?
        } else {
            last
        };
        last = edgeconv_forward(g, bound, &format!("{prefix}/ec{b}"), &spec.block_spec(b), input)?;
        collected.push(last);
    }
    let head = if spec.dense {
        g.concat(&collected, 1)?
    } else {
        last
    };
    linear(g, bound, &format!("{prefix}/proj"), head)
}

/// Projections of the neighbourhood attention: queries `theta`, keys `phi`
/// and values `gamma`, each `in_channels -> out_channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    pub in_channels: usize,
    pub out_channels: usize,
}

pub fn init_attention<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &AttentionSpec,
    rng: &mut R,
) {
    for name in ["theta", "phi", "gamma"] {
        init_linear(
            store,
            &format!("{prefix}/{name}"),
            spec.in_channels,
            spec.out_channels,
            false,
            rng,
        );
    }
}

/// Output of [`neighborhood_self_attention`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// Aggregated features, `groups x out_channels`.
    pub features: Var,
    /// Attention weights, `groups x K x K`; row `j` holds the weights of
    /// query `j` over the keys.
    pub weights: Var,
}

/// Scaled dot-product self-attention inside each group of K neighbour
/// features (`groups x K x C`), followed by a mean over the K updated
/// features.
pub fn neighborhood_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    spec: &AttentionSpec,
    groups: Var,
) -> Result<AttentionVars> {
    let shape = g.shape(groups).to_vec();
    let &[n, k, c] = shape.as_slice() else {
        return Err(Error::Shape(format!(
            "attention expects groups x K x C, got {shape:?}"
        )));
    };
    ensure!(
        c == spec.in_channels,
        Shape,
        "attention `{prefix}` expects {} channels, got {c}",
        spec.in_channels
    );
    let co = spec.out_channels;
    let flat = g.reshape(groups, &[n * k, c])?;
    let mut project = |name: &str| -> Result<Var> {
        let h = linear(g, bound, &format!("{prefix}/{name}"), flat)?;
        g.reshape(h, &[n, k, co])
    };
    let query = project("theta")?;
    let key = project("phi")?;
    let value = project("gamma")?;
    let key_t = g.transpose(key)?;
    let scores = g.matmul(query, key_t)?;
    let scores = g.scale(scores, T::one() / T::lit(co as f64).sqrt());
    let weights = g.softmax(scores, 2)?;
    let updated = g.matmul(weights, value)?;
    let features = g.mean(updated, 1)?;
    Ok(AttentionVars { features, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_mlp_gives_zero() {
        let spec = MlpSpec::new(vec![4, 8, 3]).unwrap();
        let mut store = ParamStore::<f64>::new();
        init_mlp(&mut store, "m", &spec, false, &mut rng());
        for (_, t) in store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(Tensor::from_fn(&[5, 4], |i| i as f64 - 3.0));
        let y = mlp_forward(&mut g, &bound, "m", &spec, x).unwrap();
        assert_eq!(g.shape(y), &[5, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let spec = MlpSpec::new(vec![4, 3]).unwrap();
        let mut store = ParamStore::<f64>::new();
        init_mlp(&mut store, "m", &spec, false, &mut rng());
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[2, 5]));
        assert!(matches!(
            mlp_forward(&mut g, &bound, "m", &spec, x),
            Err(Error::Shape(_))
        ));
        assert!(MlpSpec::new(vec![3]).is_err());
    }

    #[test]
    fn edgeconv_k_exceeding_rows_is_an_error() {
        let spec = EdgeConvSpec {
            k: 4,
            in_channels: 2,
            out_channels: 3,
        };
        let mut store = ParamStore::<f64>::new();
        init_edgeconv(&mut store, "e", &spec, &mut rng());
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            edgeconv_forward(&mut g, &bound, "e", &spec, x),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn attention_single_neighbour_is_value_projection() {
        let spec = AttentionSpec {
            in_channels: 3,
            out_channels: 5,
        };
        let mut store = ParamStore::<f64>::new();
        init_attention(&mut store, "a", &spec, &mut rng());
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = g.constant(Tensor::from_fn(&[2, 1, 3], |i| (i as f64).sin()));
        let out = neighborhood_self_attention(&mut g, &bound, "a", &spec, x).unwrap();
        assert!(g.value(out.weights).data().iter().all(|&w| w == 1.0));
        let flat = g.reshape(x, &[2, 3]).unwrap();
        let gamma = linear(&mut g, &bound, "a/gamma", flat).unwrap();
        assert_eq!(g.value(out.features).data(), g.value(gamma).data());
    }
}
