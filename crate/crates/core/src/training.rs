//! Joint training of the embedder and restorer, evaluation, and the offset
//! permutation experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Graph, ParamStore, Scalar, Tensor};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{augment, epoch_batches, AugmentSpec};
use crate::embedder::EmbedResult;
use crate::error::{ensure, Error, Result};
use crate::geometry::{normalize_unit_sphere, PointCloud};
use crate::losses::{chamfer, LossBreakdown, MetricsReport, Reduction};
use crate::model::{duplication_baseline, Model};

/// RNG stream driving batch order and augmentation.
pub const TRAIN_STREAM: u64 = 1;

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub const LOG_CSV_HEADER: &str = "epoch,lr,total,shape,dist,conform,mean_dq";

/// Per-epoch means over every training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub shape: f64,
    pub dist: f64,
    pub conform: f64,
    pub mean_dq: f64,
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = format!("{LOG_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.lr, r.total, r.shape, r.dist, r.conform, r.mean_dq
        ));
    }
    out
}

/// Loss and gradients of a single training example.
struct StepOutput {
    loss: LossBreakdown,
    mean_dq: f64,
    grads: ParamStore<f32>,
}

fn example_grads(model: &Model<f32>, cloud: &PointCloud) -> Result<StepOutput> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let fwd = model.forward(&mut g, &bound, cloud)?;
    let loss = LossBreakdown::read(&g, &fwd.loss)?;
    let mean_dq = EmbedResult::from_vars(&g, &fwd.embed).mean_offset_norm();
    g.backward(fwd.loss.total)?;
    let grads = model.params.grads_from(&g, &bound)?;
    Ok(StepOutput { loss, mean_dq, grads })
}

/// Stateful training loop; `Checkpoint` captures everything needed to resume.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let model = Model::init(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            adam: AdamState::new(&model.params),
            model,
            epoch: 0,
            rng,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.config.seed);
        rng.set_stream(TRAIN_STREAM);
        rng.set_word_pos(ckpt.rng_state);
        Ok(Self {
            model: ckpt.model(),
            adam: ckpt.adam.clone(),
            epoch: usize::try_from(ckpt.epoch)
                .map_err(|_| Error::Checkpoint("epoch counter overflows".into()))?,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch as u64,
            rng_state: self.rng.get_word_pos(),
        }
    }

    fn check_dataset(&self, dataset: &[PointCloud]) -> Result<()> {
        ensure!(!dataset.is_empty(), InvalidArgument, "training set is empty");
        let n = self.model.config.n_points;
        for (i, c) in dataset.iter().enumerate() {
            ensure!(
                c.len() == n,
                InvalidArgument,
                "shape {i} has {} points, config expects {n}",
                c.len()
            );
        }
        Ok(())
    }

    fn prepare(&mut self, cloud: &PointCloud) -> Result<PointCloud> {
        let cfg = &self.model.config;
        let cloud = if cfg.augment {
            let spec = AugmentSpec {
                scale_range: cfg.scale_range,
                jitter_sigma: cfg.jitter_sigma,
                jitter_clip: cfg.jitter_clip,
            };
            augment(cloud, &spec, &mut self.rng)?
        } else {
            cloud.clone()
        };
        Ok(normalize_unit_sphere(&cloud).0)
    }

    /// Runs the per-example passes, on worker threads when configured, and
    /// returns the outputs in batch order.
    fn batch_outputs(&self, clouds: &[PointCloud]) -> Result<Vec<StepOutput>> {
        let threads = self.model.config.threads.min(clouds.len()).max(1);
        if threads == 1 {
            return clouds.iter().map(|c| example_grads(&self.model, c)).collect();
        }
        let chunk = clouds.len().div_ceil(threads);
        let model = &self.model;
        let parts: Vec<Result<Vec<StepOutput>>> = std::thread::scope(|s| {
            let handles: Vec<_> = clouds
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|c| example_grads(model, c)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(clouds.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// One pass over `dataset` with a single Adam step per mini-batch.
    pub fn run_epoch(&mut self, dataset: &[PointCloud]) -> Result<EpochLog> {
        self.check_dataset(dataset)?;
        let epoch = self.epoch;
        let lr = self.model.config.lr_at(epoch);
        let batches = epoch_batches(dataset.len(), self.model.config.batch_size, &mut self.rng);
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for batch in batches {
            let clouds = batch
                .iter()
                .map(|&i| self.prepare(&dataset[i]))
                .collect::<Result<Vec<_>>>()?;
            let outputs = self.batch_outputs(&clouds)?;
            let mut grads = self.model.params.zeros_like();
            for o in &outputs {
                let total = o.loss.total;
                if !total.is_finite() || total > DIVERGENCE_LIMIT {
                    return Err(Error::Diverged { epoch, loss: total });
                }
                grads.add_assign(&o.grads)?;
                sums[0] += o.loss.total;
                sums[1] += o.loss.shape;
                sums[2] += o.loss.dist;
                sums[3] += o.loss.conform;
                sums[4] += o.mean_dq;
                steps += 1;
            }
            grads.scale(1.0 / outputs.len() as f32);
            clip_grad_norm(&mut grads, self.model.config.grad_clip);
            self.adam.step(&mut self.model.params, &grads, lr)?;
        }
        self.epoch += 1;
        let m = |i: usize| sums[i] / steps as f64;
        Ok(EpochLog {
            epoch,
            lr,
            total: m(0),
            shape: m(1),
            dist: m(2),
            conform: m(3),
            mean_dq: m(4),
        })
    }

    /// Trains until `config.epochs` epochs have completed.
    pub fn run(
        &mut self,
        dataset: &[PointCloud],
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut log = Vec::new();
        while self.epoch < self.model.config.epochs {
            let row = self.run_epoch(dataset)?;
            on_epoch(&row);
            log.push(row);
        }
        Ok(log)
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; a
/// non-positive bound disables clipping.
pub fn clip_grad_norm(grads: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
    norm
}

/// Trains a fresh model on `dataset` and returns the final checkpoint with the
/// per-epoch log.
pub fn train(config: TrainConfig, dataset: &[PointCloud]) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(config)?;
    if trainer.model.config.epochs > 0 {
        trainer.check_dataset(dataset)?;
    }
    let log = trainer.run(dataset, |_| {})?;
    Ok((trainer.checkpoint(), log))
}

/// Evaluation of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub metrics: MetricsReport,
    pub mean_dq: f64,
    pub max_dq: f64,
    /// Chamfer distance between the self-embedded set and plain FPS output.
    pub cd_q_qprime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub mean: MetricsReport,
    pub mean_dq: f64,
    pub max_dq: f64,
    pub mean_cd_q_qprime: f64,
}

impl Evaluation {
    pub fn metrics_rows(&self) -> Vec<(String, MetricsReport)> {
        self.rows.iter().map(|r| (r.id.clone(), r.metrics)).collect()
    }
}

fn check_size(config: &TrainConfig, cloud: &PointCloud) -> Result<()> {
    ensure!(
        cloud.len() == config.n_points,
        InvalidArgument,
        "cloud has {} points, checkpoint expects {}",
        cloud.len(),
        config.n_points
    );
    Ok(())
}

/// Embeds and restores every shape and scores the result against the input.
/// Clouds are used as given; callers normalize beforehand.
pub fn evaluate<T: Scalar>(model: &Model<T>, shapes: &[(String, PointCloud)]) -> Result<Evaluation> {
    let mut rows = Vec::with_capacity(shapes.len());
    for (id, cloud) in shapes {
        check_size(&model.config, cloud)?;
        let e = model.embed(cloud)?;
        let r = model.restore_tensor(e.q.clone())?;
        rows.push(EvalRow {
            id: id.clone(),
            metrics: MetricsReport::compute(cloud, &r.r_cloud()?)?,
            mean_dq: e.mean_offset_norm(),
            max_dq: e.max_offset_norm(),
            cd_q_qprime: chamfer(&e.q_cloud()?, &e.q_prime_cloud()?, Reduction::Mean)?,
        });
    }
    let n = rows.len().max(1) as f64;
    let metrics: Vec<_> = rows.iter().map(|r| r.metrics).collect();
    Ok(Evaluation {
        mean: MetricsReport::mean(&metrics),
        mean_dq: rows.iter().map(|r| r.mean_dq).sum::<f64>() / n,
        max_dq: rows.iter().map(|r| r.max_dq).fold(0.0, f64::max),
        mean_cd_q_qprime: rows.iter().map(|r| r.cd_q_qprime).sum::<f64>() / n,
        rows,
    })
}

/// Metrics of the zero-offset duplication baseline for each shape.
pub fn baseline_metrics(config: &TrainConfig, shapes: &[(String, PointCloud)]) -> Result<Vec<MetricsReport>> {
    shapes
        .iter()
        .map(|(_, cloud)| {
            check_size(config, cloud)?;
            let dup = duplication_baseline::<f32>(cloud, config.ratio, config.fps_start)?;
            MetricsReport::compute(cloud, &dup)
        })
        .collect()
}

/// Uniformly random row permutation of `0..n`, never the identity for n > 1.
pub fn non_identity_permutation<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// `Q' + pi(dQ)` for a random non-identity row permutation `pi`.
pub fn perturb_embedding<T: Scalar, R: rand::Rng + ?Sized>(
    result: &EmbedResult<T>,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let n = result.q_prime.shape()[0];
    let perm = non_identity_permutation(n, rng);
    let qp = result.q_prime.data();
    let dq = result.delta_q.data();
    let mut data = Vec::with_capacity(3 * n);
    for (i, &p) in perm.iter().enumerate() {
        for c in 0..3 {
            data.push(qp[3 * i + c] + dq[3 * p + c]);
        }
    }
    Tensor::new(&[n, 3], data)
}

/// Restoration quality from Q, from a permuted-offset Q and from plain Q'.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRow {
    pub id: String,
    pub cd_q: f64,
    pub cd_perturbed: f64,
    pub cd_q_prime: f64,
}

pub const PERTURB_CSV_HEADER: &str = "shape_id,cd_q,cd_perturbed,cd_q_prime";

pub fn perturb_csv(rows: &[PerturbRow]) -> String {
    let mut out = format!("{PERTURB_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.id, r.cd_q, r.cd_perturbed, r.cd_q_prime
        ));
    }
    out
}

pub fn perturbation_experiment<T: Scalar, R: rand::Rng + ?Sized>(
    model: &Model<T>,
    id: &str,
    cloud: &PointCloud,
    rng: &mut R,
) -> Result<PerturbRow> {
    check_size(&model.config, cloud)?;
    let e = model.embed(cloud)?;
    let cd_of = |q: Tensor<T>| -> Result<f64> {
        let r = model.restore_tensor(q)?;
        chamfer(cloud, &r.r_cloud()?, Reduction::Mean)
    };
    Ok(PerturbRow {
        id: id.to_string(),
        cd_q: cd_of(e.q.clone())?,
        cd_perturbed: cd_of(perturb_embedding(&e, rng)?)?,
        cd_q_prime: cd_of(e.q_prime.clone())?,
    })
}
