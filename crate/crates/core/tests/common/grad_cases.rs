//! Finite-difference cases for every graph op and every loss. Each case
//! records its worst norm-wise relative error.

use super::*;
use pointembed::autodiff::{Bound, Graph, Tensor, Var};
use pointembed::losses::{
    chamfer_graph, conformity_graph, distribution_graph, total_loss_graph, DistributionSpec, LossWeights,
    Reduction,
};
use pointembed::{Model, TrainConfig};
use rand::Rng;

fn check(
    out: &mut Vec<(String, f64)>,
    name: &str,
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) {
    out.push((name.to_string(), gradient_check(inputs, build)));
}

/// One entry per op application in the catalogue.
pub fn op_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    elementwise_binary_ops(&mut out);
    matmul_plain_and_batched(&mut out);
    shape_ops(&mut out);
    reductions(&mut out);
    unary_ops(&mut out);
    out
}

/// Chamfer (both reductions), distribution, conformity and total loss.
pub fn loss_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    chamfer_loss_gradients(&mut out);
    distribution_loss_gradients(&mut out);
    conformity_loss_gradients(&mut out);
    total_loss_gradients(&mut out);
    out
}

fn elementwise_binary_ops(out: &mut Vec<(String, f64)>) {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[3, 4]);
    let b = tie_free_tensor(&mut r, &[3, 4]);
    check(out, "add", &[a.clone(), b.clone()], |g, v| {
        let o = g.add(v[0], v[1]).unwrap();
        weighted_sum(g, o, 1)
    });
    check(out, "sub", &[a.clone(), b.clone()], |g, v| {
        let o = g.sub(v[0], v[1]).unwrap();
        weighted_sum(g, o, 2)
    });
    check(out, "mul", &[a.clone(), b.clone()], |g, v| {
        let o = g.mul(v[0], v[1]).unwrap();
        weighted_sum(g, o, 3)
    });
    check(out, "div", &[a, b], |g, v| {
        let o = g.div(v[0], v[1]).unwrap();
        weighted_sum(g, o, 4)
    });
}

fn matmul_plain_and_batched(out: &mut Vec<(String, f64)>) {
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[3, 5]);
    let b = random_tensor(&mut r, &[5, 2]);
    check(out, "matmul", &[a, b], |g, v| {
        let o = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, o, 5)
    });
    let a = random_tensor(&mut r, &[2, 3, 4]);
    let b = random_tensor(&mut r, &[2, 4, 3]);
    check(out, "batched matmul", &[a, b], |g, v| {
        let o = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, o, 6)
    });
}

fn shape_ops(out: &mut Vec<(String, f64)>) {
    let mut r = rng(3);
    let a = random_tensor(&mut r, &[2, 3, 4]);
    let b = random_tensor(&mut r, &[2, 2, 4]);
    check(out, "concat", &[a.clone(), b], |g, v| {
        let o = g.concat(&[v[0], v[1]], 1).unwrap();
        weighted_sum(g, o, 7)
    });
    check(out, "reshape", std::slice::from_ref(&a), |g, v| {
        let o = g.reshape(v[0], &[6, 4]).unwrap();
        weighted_sum(g, o, 8)
    });
    check(out, "permute", std::slice::from_ref(&a), |g, v| {
        let o = g.permute(v[0], &[2, 0, 1]).unwrap();
        weighted_sum(g, o, 9)
    });
    check(out, "transpose", std::slice::from_ref(&a), |g, v| {
        let o = g.transpose(v[0]).unwrap();
        weighted_sum(g, o, 10)
    });
    check(out, "gather with repeats", &[a], |g, v| {
        let o = g.gather(v[0], 1, &[2, 0, 2, 1, 2]).unwrap();
        weighted_sum(g, o, 11)
    });
}

fn reductions(out: &mut Vec<(String, f64)>) {
    let mut r = rng(4);
    let a = random_tensor(&mut r, &[3, 4, 2]);
    for axis in 0..3 {
        check(out, "sum", std::slice::from_ref(&a), |g, v| {
            let o = g.sum(v[0], axis).unwrap();
            weighted_sum(g, o, 12)
        });
        check(out, "mean", std::slice::from_ref(&a), |g, v| {
            let o = g.mean(v[0], axis).unwrap();
            weighted_sum(g, o, 13)
        });
        // Continuous random entries have a unique maximum along every axis.
        check(out, "max", std::slice::from_ref(&a), |g, v| {
            let o = g.max(v[0], axis).unwrap();
            weighted_sum(g, o, 14)
        });
        check(out, "softmax", std::slice::from_ref(&a), |g, v| {
            let o = g.softmax(v[0], axis).unwrap();
            weighted_sum(g, o, 15)
        });
        check(out, "norm", std::slice::from_ref(&a), |g, v| {
            let o = g.norm(v[0], axis, 1e-12).unwrap();
            weighted_sum(g, o, 16)
        });
    }
    check(out, "sum_all", std::slice::from_ref(&a), |g, v| {
        let o = g.sum_all(v[0]);
        g.scale(o, 0.7)
    });
    check(out, "mean_all", &[a], |g, v| {
        let o = g.mean_all(v[0]);
        g.scale(o, 1.3)
    });
}

fn unary_ops(out: &mut Vec<(String, f64)>) {
    let mut r = rng(5);
    let a = tie_free_tensor(&mut r, &[4, 3]);
    let pos = Tensor::from_fn(&[4, 3], |_| r.random_range(0.2..2.0));
    check(out, "relu", std::slice::from_ref(&a), |g, v| {
        let o = g.relu(v[0]);
        weighted_sum(g, o, 17)
    });
    check(out, "tanh", std::slice::from_ref(&a), |g, v| {
        let o = g.tanh(v[0]);
        weighted_sum(g, o, 18)
    });
    check(out, "square", std::slice::from_ref(&a), |g, v| {
        let o = g.square(v[0]);
        weighted_sum(g, o, 19)
    });
    check(out, "sqrt", &[pos], |g, v| {
        let o = g.sqrt(v[0]).unwrap();
        weighted_sum(g, o, 20)
    });
    check(out, "scale", std::slice::from_ref(&a), |g, v| {
        let o = g.scale(v[0], -2.5);
        weighted_sum(g, o, 21)
    });
    check(out, "div_scalar", std::slice::from_ref(&a), |g, v| {
        let o = g.div_scalar(v[0], 3.0).unwrap();
        weighted_sum(g, o, 22)
    });
    check(out, "add_scalar", &[a], |g, v| {
        let o = g.add_scalar(v[0], 0.25);
        let o = g.square(o);
        weighted_sum(g, o, 23)
    });
}

fn tie_free_pair(seed: u64, n: usize, m: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    (random_tensor(&mut r, &[n, 3]), random_tensor(&mut r, &[m, 3]))
}

fn chamfer_loss_gradients(out: &mut Vec<(String, f64)>) {
    let (a, b) = tie_free_pair(30, 12, 9);
    for red in [Reduction::Sum, Reduction::Mean] {
        check(out, "chamfer", &[a.clone(), b.clone()], |g, v| {
            chamfer_graph(g, v[0], v[1], red).unwrap()
        });
    }
}

fn distribution_loss_gradients(out: &mut Vec<(String, f64)>) {
    let (p, r) = tie_free_pair(31, 14, 20);
    for skip in [false, true] {
        for eps in [1e-12, 1e-3] {
            let spec = DistributionSpec {
                skip_nearest: skip,
                angle_eps: eps,
                ..DistributionSpec::new(4, 2.0)
            };
            check(out, "distribution", &[p.clone(), r.clone()], |g, v| {
                distribution_graph(g, v[0], v[1], &spec).unwrap()
            });
        }
    }
}

fn conformity_loss_gradients(out: &mut Vec<(String, f64)>) {
    let mut r = rng(32);
    let dq = Tensor::from_fn(&[10, 3], |_| r.random_range(-0.1..0.1));
    check(out, "conformity", &[dq], |g, v| {
        conformity_graph(g, v[0], 1e-6).unwrap()
    });
}

fn total_loss_gradients(out: &mut Vec<(String, f64)>) {
    let (p, rr) = tie_free_pair(33, 16, 16);
    let mut r = rng(34);
    let dq = Tensor::from_fn(&[4, 3], |_| r.random_range(-0.1..0.1));
    let w = LossWeights {
        m: 4,
        ..LossWeights::default()
    };
    check(out, "total", &[p, rr, dq], |g, v| {
        total_loss_graph(g, v[0], v[1], v[2], &w).unwrap().total
    });
}

/// Every parameter of both networks on a tiny instance (N = 16, r = 2, C = 4).
pub fn end_to_end_error() -> f64 {
    let cfg = TrainConfig {
        n_points: 16,
        n_sparse: 8,
        ratio: 2,
        k_group: 4,
        m_dist: 3,
        channels: 4,
        attn_channels: 4,
        k_conv: 3,
        extractor_blocks: 2,
        extractor_growth: 4,
        ..TrainConfig::default()
    };
    let mut r = rng(35);
    let cloud = random_cloud(&mut r, 16);
    let mut model = Model::<f64>::init(cfg).unwrap();
    // Move away from the zero-initialized offset layers and from ties.
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let names: Vec<String> = model.params.iter().map(|(k, _)| k.to_string()).collect();
    let inputs: Vec<Tensor<f64>> = names
        .iter()
        .map(|k| model.params.get(k).unwrap().clone())
        .collect();
    gradient_check(&inputs, |g, vars| {
        let bound = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
        model.forward(g, &bound, &cloud).unwrap().loss.total
    })
}
