//! Graph VAE without node compression: one latent vector per mesh node.
//!
//! Encoder and decoder each run two message-passing layers over the mesh
//! edges, with edge features initialised from relative node positions.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::meshgraph::{Dataset, FieldState, MeshGraph, Space, System};
use crate::numcore::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numcore::{
    rng, Activation, Adam, LayerNorm, Linear, Mlp, ParamBuilder, ParamStore, PlateauSchedule, Tape, Var,
};
use crate::{Error, Result};

/// Message-passing layers in each of encoder and decoder.
pub const MP_LAYERS: usize = 2;
/// Standard deviation of the noise added to sampled latents during training.
pub const LATENT_NOISE_STD: f64 = 0.01;
pub const KL_WEIGHT: f64 = 1e-6;
pub const VAE_LEARNING_RATE: f64 = 1e-4;

/// Directed edge lists plus per-edge displacement features. Several
/// snapshots of one graph can be stacked into a block-diagonal batch.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub num_nodes: usize,
    pub displacements: Array2<f64>,
}

impl EdgeIndex {
    pub fn from_graph(graph: &MeshGraph) -> Self {
        Self {
            senders: graph.senders(),
            receivers: graph.receivers(),
            num_nodes: graph.num_nodes(),
            displacements: graph.edge_displacements().clone(),
        }
    }

    /// `copies` disjoint copies; copy `b` owns nodes `b*n .. (b+1)*n`.
    pub fn repeat(&self, copies: usize) -> Self {
        let n = self.num_nodes;
        let shift =
            |v: &[usize]| -> Vec<usize> { (0..copies).flat_map(|b| v.iter().map(move |&i| i + b * n)).collect() };
        let views: Vec<_> = (0..copies).map(|_| self.displacements.view()).collect();
        Self {
            senders: shift(&self.senders),
            receivers: shift(&self.receivers),
            num_nodes: n * copies,
            displacements: concatenate(Axis(0), &views).expect("equal widths"),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }
}

/// `e <- W_e e + MLP_e(LN([e | v_i | v_j]))`,
/// `v_j <- W_v v_j + MLP_v(LN([sum_i e_ij | v_j]))`.
#[derive(Debug, Clone)]
pub struct MpLayer {
    pub edge_skip: Linear,
    pub edge_norm: LayerNorm,
    pub edge_mlp: Mlp,
    pub node_skip: Linear,
    pub node_norm: LayerNorm,
    pub node_mlp: Mlp,
}

impl MpLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize) -> Self {
        let mut sub = pb.sub(name);
        Self {
            edge_skip: Linear::no_bias(&mut sub, "edge_skip", width, width),
            edge_norm: LayerNorm::new(&mut sub, "edge_norm", 3 * width),
            edge_mlp: Mlp::new(&mut sub, "edge_mlp", 3 * width, width, width, Activation::Selu),
            node_skip: Linear::no_bias(&mut sub, "node_skip", width, width),
            node_norm: LayerNorm::new(&mut sub, "node_norm", 2 * width),
            node_mlp: Mlp::new(&mut sub, "node_mlp", 2 * width, width, width, Activation::Selu),
        }
    }

    /// Returns updated `(nodes, edges)`.
    pub fn forward(&self, t: &Tape, v: Var, e: Var, edges: &EdgeIndex) -> (Var, Var) {
        let vi = t.gather_rows(v, &edges.senders);
        let vj = t.gather_rows(v, &edges.receivers);
        let msg_in = self.edge_norm.forward(t, t.concat_cols(&[e, vi, vj]));
        let e = t.add(self.edge_skip.forward(t, e), self.edge_mlp.forward(t, msg_in));
        let agg = t.scatter_add_rows(e, &edges.receivers, edges.num_nodes);
        let node_in = self.node_norm.forward(t, t.concat_cols(&[agg, v]));
        let v = t.add(self.node_skip.forward(t, v), self.node_mlp.forward(t, node_in));
        (v, e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    /// Physical channels F.
    pub channels: usize,
    /// Spatial dimension of node positions.
    pub dim: usize,
    /// Hidden width F_VAE.
    pub width: usize,
    /// Latent channels F_L.
    pub latent: usize,
    pub seed: u64,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dim == 0 || self.width == 0 || self.latent == 0 {
            return Err(Error::Config(format!("VAE sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Coder {
    node_lift: Linear,
    edge_lift: Linear,
    layers: Vec<MpLayer>,
    head: Linear,
}

impl Coder {
    fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, dim: usize, width: usize, out: usize) -> Self {
        let mut sub = pb.sub(name);
        Self {
            node_lift: Linear::new(&mut sub, "node_lift", in_dim, width),
            edge_lift: Linear::new(&mut sub, "edge_lift", dim, width),
            layers: (0..MP_LAYERS)
                .map(|i| MpLayer::new(&mut sub, &format!("mp{i}"), width))
                .collect(),
            head: Linear::new(&mut sub, "head", width, out),
        }
    }

    fn forward(&self, t: &Tape, x: Var, edges: &EdgeIndex) -> Var {
        let mut v = self.node_lift.forward(t, x);
        let mut e = self.edge_lift.forward(t, t.constant(edges.displacements.clone()));
        for layer in &self.layers {
            (v, e) = layer.forward(t, v, e, edges);
        }
        self.head.forward(t, v)
    }
}

/// Trained or freshly initialised VAE together with its parameters.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub params: ParamStore,
    encoder: Coder,
    decoder: Coder,
}

/// Tape handles of one VAE forward pass.
pub struct VaeForward {
    pub mu: Var,
    pub log_sigma: Var,
    pub latent: Var,
    pub reconstruction: Var,
}

impl VaeModel {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init_rng = rng::stream(config.seed, "vae_init", 0);
        let mut pb = ParamBuilder::new(&mut params, &mut init_rng);
        let c = &config;
        let encoder = Coder::new(&mut pb, "encoder", c.channels, c.dim, c.width, 2 * c.latent);
        let decoder = Coder::new(&mut pb, "decoder", c.latent, c.dim, c.width, c.channels);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn num_encoder_layers(&self) -> usize {
        self.encoder.layers.len()
    }

    pub fn num_decoder_layers(&self) -> usize {
        self.decoder.layers.len()
    }

    /// `(mu, log_sigma)` on the tape.
    pub fn encode_on(&self, t: &Tape, x: Var, edges: &EdgeIndex) -> (Var, Var) {
        let h = self.encoder.forward(t, x, edges);
        let l = self.config.latent;
        (t.slice_cols(h, 0, l), t.slice_cols(h, l, l))
    }

    pub fn decode_on(&self, t: &Tape, z: Var, edges: &EdgeIndex) -> Var {
        self.decoder.forward(t, z, edges)
    }

    /// Full pass with `z = mu + sigma * eps + noise` where `eps` and `noise`
    /// are supplied by the caller (zeros give the deterministic pass).
    pub fn forward_on(
        &self,
        t: &Tape,
        x: Var,
        edges: &EdgeIndex,
        eps: &Array2<f64>,
        noise: &Array2<f64>,
    ) -> VaeForward {
        let (mu, log_sigma) = self.encode_on(t, x, edges);
        let sigma = t.exp(log_sigma);
        let z = t.add(mu, t.mul(sigma, t.constant(eps.clone())));
        let latent = t.add(z, t.constant(noise.clone()));
        let reconstruction = self.decode_on(t, latent, edges);
        VaeForward {
            mu,
            log_sigma,
            latent,
            reconstruction,
        }
    }

    pub fn encode(&self, graph: &MeshGraph, field: &FieldState) -> Result<(Array2<f64>, Array2<f64>)> {
        field.check_against(graph)?;
        if field.space != Space::Physical || field.channels() != self.config.channels {
            return Err(Error::Config(format!(
                "encode expects a physical field with {} channels",
                self.config.channels
            )));
        }
        let t = Tape::with_params(&self.params);
        let (mu, ls) = self.encode_on(&t, t.constant(field.values.clone()), &EdgeIndex::from_graph(graph));
        let (mu, ls) = (t.value(mu), t.value(ls));
        if !mu.iter().chain(ls.iter()).all(|x| x.is_finite()) {
            return Err(Error::Numerical("non-finite VAE encoder output".into()));
        }
        Ok((mu, ls))
    }

    pub fn decode(&self, graph: &MeshGraph, latent: &FieldState) -> Result<FieldState> {
        latent.check_against(graph)?;
        if latent.channels() != self.config.latent {
            return Err(Error::Config(format!(
                "decode expects {} latent channels, got {}",
                self.config.latent,
                latent.channels()
            )));
        }
        let t = Tape::with_params(&self.params);
        let out = self.decode_on(&t, t.constant(latent.values.clone()), &EdgeIndex::from_graph(graph));
        Ok(FieldState::physical(t.value(out)))
    }

    /// Deterministic reconstruction `decode(mu)`.
    pub fn reconstruct(&self, graph: &MeshGraph, field: &FieldState) -> Result<FieldState> {
        let (mu, _) = self.encode(graph, field)?;
        self.decode(graph, &FieldState::latent(mu))
    }

    /// Maps every snapshot to its latent mean. Channel statistics of the
    /// result are identity; callers normalize latents separately if needed.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        let systems = dataset
            .systems
            .iter()
            .map(|s| {
                let snapshots = s
                    .snapshots
                    .iter()
                    .map(|f| self.encode(&s.graph, f).map(|(mu, _)| FieldState::latent(mu)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(System {
                    graph: s.graph.clone(),
                    snapshots,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::from_systems(systems, Space::Latent)?)
    }

    pub fn save(&self, manifest: &Path, config_hash: &str) -> Result<()> {
        let cfg = serde_json::to_value(&self.config)?;
        save_checkpoint(manifest, "vae", &cfg, config_hash, &self.params, None)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let ck = load_checkpoint(manifest)?;
        if ck.manifest.kind != "vae" {
            return Err(Error::Format(format!(
                "{} is a '{}' checkpoint, not a VAE",
                manifest.display(),
                ck.manifest.kind
            )));
        }
        let config: VaeConfig = serde_json::from_value(ck.manifest.config)?;
        let mut model = Self::new(config)?;
        model.params.load_from(&ck.params)?;
        Ok(model)
    }
}

/// `z = mu + exp(log_sigma) * eps`, `eps ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(mu: &Array2<f64>, log_sigma: &Array2<f64>, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, "reparameterize", 0);
    let eps = rng::normal_matrix(&mut r, mu.nrows(), mu.ncols(), 1.0);
    mu + &(log_sigma.mapv(f64::exp) * eps)
}

/// Node-mean KL divergence of `N(mu, sigma^2)` from `N(0, I)`, summed over
/// latent channels.
pub fn kl_term(t: &Tape, mu: Var, log_sigma: Var) -> Var {
    let (n, d) = t.shape(mu);
    let two_ls = t.scale(log_sigma, 2.0);
    let inner = t.sub(t.add(t.square(mu), t.exp(two_ls)), two_ls);
    let total = t.add(t.sum(inner), t.scalar(-((n * d) as f64)));
    t.scale(total, 0.5 / n as f64)
}

/// Mean squared reconstruction error plus `KL_WEIGHT` times the KL term.
pub fn vae_loss(t: &Tape, x: Var, x_rec: Var, mu: Var, log_sigma: Var) -> Var {
    let kl = kl_term(t, mu, log_sigma);
    t.add(t.mse(x_rec, x), t.scale(kl, KL_WEIGHT))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub learning_rate: f64,
    pub patience_epochs: usize,
    pub batch_size: usize,
    /// Hard cap in case the schedule never reaches its floor.
    pub max_epochs: usize,
    pub latent_noise: f64,
    pub floor_lr: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: VAE_LEARNING_RATE,
            patience_epochs: 10,
            batch_size: 2,
            max_epochs: 400,
            latent_noise: LATENT_NOISE_STD,
            floor_lr: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// True when the learning rate fell below the floor.
    pub converged: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.10e},{:.3e}\n", e.epoch, e.loss, e.lr));
        }
        s
    }
}

/// One optimisation step on a stack of snapshots of one graph; returns the
/// batch loss.
fn vae_step(
    model: &mut VaeModel,
    adam: &mut Adam,
    edges: &EdgeIndex,
    batch: &[&FieldState],
    lr: f64,
    noise_std: f64,
    seed: u64,
) -> Result<f64> {
    let views: Vec<_> = batch.iter().map(|f| f.values.view()).collect();
    let x = concatenate(Axis(0), &views).expect("equal widths");
    let big = edges.repeat(batch.len());
    let mut r = rng::stream(seed, "vae_batch", 0);
    let l = model.config.latent;
    let eps = rng::normal_matrix(&mut r, x.nrows(), l, 1.0);
    let noise = rng::normal_matrix(&mut r, x.nrows(), l, noise_std);
    let (loss, mut grads) = {
        let t = Tape::with_params(&model.params);
        let xv = t.constant(x);
        let f = model.forward_on(&t, xv, &big, &eps, &noise);
        let loss = vae_loss(&t, xv, f.reconstruction, f.mu, f.log_sigma);
        let value = t.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("VAE loss became {value}")));
        }
        (value, t.backward(loss)?.param_grads(&model.params))
    };
    grads.fill_missing(&model.params);
    adam.step(&mut model.params, &grads, lr)?;
    Ok(loss)
}

/// Trains with Adam under the plateau schedule until the rate falls below
/// `floor_lr` or `max_epochs` is reached.
pub fn train_vae(dataset: &Dataset, vae: VaeConfig, train: &VaeTrainConfig) -> Result<(VaeModel, TrainLog)> {
    if dataset.space != Space::Physical {
        return Err(Error::Config("train_vae needs a physical-space dataset".into()));
    }
    if !dataset.normalized {
        return Err(Error::Config("train_vae needs a normalized dataset".into()));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let schedule = PlateauSchedule {
        initial_lr: train.learning_rate,
        reduction_factor: 10.0,
        patience_epochs: train.patience_epochs,
        floor_lr: train.floor_lr,
    };
    schedule.validate().map_err(Error::Config)?;
    let mut model = VaeModel::new(vae)?;
    let mut adam = Adam::new(&model.params);
    let mut tracker = schedule.tracker();
    let mut log = TrainLog::default();
    let graphs: Vec<EdgeIndex> = dataset
        .systems
        .iter()
        .map(|s| EdgeIndex::from_graph(&s.graph))
        .collect();
    let mut order: Vec<(usize, usize)> = dataset
        .systems
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.snapshots.len()).map(move |k| (si, k)))
        .collect();
    let mut step = 0u64;
    for epoch in 0..train.max_epochs {
        let mut shuffle = rng::stream(train.seed, "vae_epoch", epoch as u64);
        order.shuffle(&mut shuffle);
        order.sort_by_key(|&(si, _)| si);
        let (mut total, mut count) = (0.0, 0usize);
        for si in 0..dataset.systems.len() {
            let ids: Vec<usize> = order.iter().filter(|p| p.0 == si).map(|p| p.1).collect();
            for chunk in ids.chunks(train.batch_size) {
                let batch: Vec<&FieldState> = chunk.iter().map(|&k| &dataset.systems[si].snapshots[k]).collect();
                let seed = train.seed ^ step.wrapping_mul(0x9E37_79B9);
                let loss = vae_step(
                    &mut model,
                    &mut adam,
                    &graphs[si],
                    &batch,
                    tracker.lr(),
                    train.latent_noise,
                    seed,
                )?;
                total += loss * chunk.len() as f64;
                count += chunk.len();
                step += 1;
            }
        }
        let epoch_loss = total / count.max(1) as f64;
        let lr = tracker.lr();
        log.epochs.push(EpochLog {
            epoch,
            loss: epoch_loss,
            lr,
        });
        log::debug!("vae epoch {epoch}: loss {epoch_loss:.6e} lr {lr:.1e}");
        if tracker.observe(epoch_loss).stop {
            log.converged = true;
            break;
        }
    }
    Ok((model, log))
}

/// Pooled `1 - SS_res / SS_tot` of deterministic reconstructions over all
/// snapshots, nodes and channels.
pub fn reconstruction_r2(model: &VaeModel, dataset: &Dataset) -> Result<f64> {
    let mut all = Vec::new();
    let mut res = 0.0;
    for s in &dataset.systems {
        for f in &s.snapshots {
            let rec = model.reconstruct(&s.graph, f)?;
            res += (&rec.values - &f.values).mapv(|d| d * d).sum();
            all.extend(f.values.iter().copied());
        }
    }
    let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    let tot: f64 = all.iter().map(|v| (v - mean).powi(2)).sum();
    if tot <= 0.0 {
        return Err(Error::Numerical("reference data has zero variance".into()));
    }
    Ok(1.0 - res / tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgraph::triangulated_grid;

    fn small_model() -> VaeModel {
        VaeModel::new(VaeConfig {
            channels: 1,
            dim: 2,
            width: 8,
            latent: 2,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn two_layers_per_coder() {
        let m = small_model();
        assert_eq!(m.num_encoder_layers(), 2);
        assert_eq!(m.num_decoder_layers(), 2);
    }

    #[test]
    fn loss_zero_for_perfect_standard_posterior() {
        let t = Tape::new();
        let x = t.constant(Array2::from_elem((4, 1), 0.3));
        let mu = t.constant(Array2::zeros((4, 2)));
        let ls = t.constant(Array2::zeros((4, 2)));
        assert_eq!(t.scalar_value(vae_loss(&t, x, x, mu, ls)), 0.0);
    }

    #[test]
    fn unit_mean_gives_half_per_channel() {
        let t = Tape::new();
        let x = t.constant(Array2::zeros((5, 1)));
        let mu = t.constant(Array2::ones((5, 3)));
        let ls = t.constant(Array2::zeros((5, 3)));
        let loss = t.scalar_value(vae_loss(&t, x, x, mu, ls));
        assert!((loss - 1e-6 * 0.5 * 3.0).abs() < 1e-18);
    }

    #[test]
    fn isolated_node_gets_empty_sum() {
        let edges = EdgeIndex {
            senders: vec![0],
            receivers: vec![1],
            num_nodes: 3,
            displacements: Array2::zeros((1, 2)),
        };
        let t = Tape::new();
        let e = t.constant(Array2::ones((1, 2)));
        let agg = t.scatter_add_rows(e, &edges.receivers, edges.num_nodes);
        let a = t.value(agg);
        assert_eq!(a.row(2).sum(), 0.0);
        assert_eq!(a.row(0).sum(), 0.0);
        assert_eq!(a.row(1).sum(), 2.0);
    }

    #[test]
    fn decode_is_deterministic() {
        let m = small_model();
        let g = triangulated_grid(3, 3, &[]).unwrap();
        let z = FieldState::latent(Array2::from_shape_fn((9, 2), |(i, j)| (i + j) as f64 * 0.1));
        assert_eq!(m.decode(&g, &z).unwrap().values, m.decode(&g, &z).unwrap().values);
    }

    #[test]
    fn repeated_index_offsets_copies() {
        let g = triangulated_grid(2, 2, &[]).unwrap();
        let e = EdgeIndex::from_graph(&g);
        let r = e.repeat(3);
        assert_eq!(r.num_nodes, 12);
        assert_eq!(r.num_edges(), 3 * e.num_edges());
        assert_eq!(r.senders[2 * e.num_edges()], e.senders[0] + 8);
    }
}
