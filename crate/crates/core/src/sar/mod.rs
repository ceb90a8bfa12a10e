//! Scale-autoregressive model: condition encoder, autoregressive module and
//! flow-matching sampler.
//!
//! Scale `k` of a field is generated from noise by integrating the sampler's
//! velocity, conditioned on `Z_k`, the AR module's summary of the values
//! already generated on scales `1..k`. The condition encoder output `Y`
//! depends only on the mesh and is computed once per system.

pub mod sample;
pub mod train;

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::hierarchy::ScaleHierarchy;
use crate::meshgraph::{ChannelStats, MeshGraph};
use crate::numcore::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numcore::{rng, Activation, Init, Linear, Mlp, ParamBuilder, ParamId, ParamStore, Tape, Var};
use crate::transolver::{sinusoidal_embedding, AdaTransolver, AttentionConfig, Transolver};
use crate::vae::VaeModel;
use crate::{Error, Result};

pub use sample::{euler_integrate, generate, sample_scale, DenoisingSchedule, Generated};
pub use train::{draw_training_sample, fm_loss, train_sar, SarTrainConfig, FM_DRAWS, INPUT_NOISE_STD};

/// Standard deviation of the mask and scale embedding initialisation.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SarConfig {
    /// Channels the sampler generates: F_L in latent mode, F otherwise.
    pub channels: usize,
    /// Spatial dimension of node positions.
    pub dim: usize,
    /// Per-node condition features.
    pub num_conditions: usize,
    /// Number of scales K.
    pub num_scales: usize,
    /// F_model.
    pub width: usize,
    /// F_emb, width of the denoising-time embedding.
    pub emb_width: usize,
    pub heads: usize,
    pub slices: usize,
    pub cond_layers: usize,
    pub ar_layers: usize,
    pub sampler_layers: usize,
    pub latent_mode: bool,
    /// Replace the sampler's attention with a per-node MLP.
    pub nodewise_sampler: bool,
    /// When false, `Y` is a linear lift of the raw node inputs.
    pub cond_encoder: bool,
    pub seed: u64,
}

impl Default for SarConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            dim: 2,
            num_conditions: 1,
            num_scales: 3,
            width: 128,
            emb_width: 128,
            heads: 4,
            slices: 32,
            cond_layers: 2,
            ar_layers: 2,
            sampler_layers: 2,
            latent_mode: true,
            nodewise_sampler: false,
            cond_encoder: true,
            seed: 0,
        }
    }
}

impl SarConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            width: self.width,
            heads: self.heads,
            slices: self.slices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dim == 0 || self.width == 0 {
            return Err(Error::Config("SAR channels, dim and width must be positive".into()));
        }
        if self.num_scales == 0 {
            return Err(Error::Config("number of scales must be at least 1".into()));
        }
        if self.emb_width == 0 || !self.emb_width.is_multiple_of(2) {
            return Err(Error::Config(format!("emb_width must be even, got {}", self.emb_width)));
        }
        self.attention().validate()?;
        Ok(())
    }

    /// Width of `[x, v_c, onehot]`.
    pub fn node_input_width(&self) -> usize {
        self.dim + self.num_conditions + self.num_scales
    }
}

/// Per-system quantities that do not depend on the field.
#[derive(Debug, Clone)]
pub struct SarContext {
    pub graph: MeshGraph,
    pub hierarchy: ScaleHierarchy,
    /// `[x, v_c, onehot(scale)]` per node.
    pub node_inputs: Array2<f64>,
    /// `[x, onehot(scale)]` per node.
    pub position_scale: Array2<f64>,
}

impl SarContext {
    pub fn new(graph: &MeshGraph, num_scales: usize) -> Result<Self> {
        let hierarchy = ScaleHierarchy::build(graph, num_scales)?;
        Ok(Self::with_hierarchy(graph, hierarchy))
    }

    pub fn with_hierarchy(graph: &MeshGraph, hierarchy: ScaleHierarchy) -> Self {
        let onehot = hierarchy.scale_onehot();
        let x = graph.positions();
        let node_inputs =
            concatenate(Axis(1), &[x.view(), graph.node_conditions().view(), onehot.view()]).expect("row counts agree");
        let position_scale = concatenate(Axis(1), &[x.view(), onehot.view()]).expect("row counts agree");
        Self {
            graph: graph.clone(),
            hierarchy,
            node_inputs,
            position_scale,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

#[derive(Debug, Clone)]
pub enum ConditionEncoder {
    Transolver(Transolver),
    /// Ablation without an encoder.
    Lift(Linear),
}

#[derive(Debug, Clone)]
pub struct ArModule {
    pub net: AdaTransolver,
    /// Lift of coarser-scale values to F_model.
    pub value_lift: Linear,
    /// `1 x F_model`.
    pub mask: ParamId,
    /// `K x F_model`, row `k - 1` conditions scale `k`.
    pub scale_embeddings: ParamId,
}

#[derive(Debug, Clone)]
pub struct Sampler {
    /// `MLP([x, onehot])`.
    pub position_mlp: Mlp,
    /// `MLP(y)`.
    pub condition_mlp: Mlp,
    /// `MLP([s_r, z, position + condition])`.
    pub input_mlp: Mlp,
    pub net: AdaTransolver,
}

/// Parameters of all three networks plus the optional companion VAE.
#[derive(Debug, Clone)]
pub struct SarModel {
    pub config: SarConfig,
    pub params: ParamStore,
    pub encoder: ConditionEncoder,
    pub ar: ArModule,
    pub sampler: Sampler,
    /// Maps raw sampler-space values to the standardised values the sampler
    /// works with. Identity in physical mode, latent statistics otherwise.
    pub field_stats: ChannelStats,
    pub vae: Option<VaeModel>,
}

impl SarModel {
    pub fn new(config: SarConfig, vae: Option<VaeModel>, field_stats: ChannelStats) -> Result<Self> {
        config.validate()?;
        if config.latent_mode {
            let v = vae
                .as_ref()
                .ok_or_else(|| Error::MissingPrerequisite("latent-mode SAR needs a trained VAE".into()))?;
            if v.config.latent != config.channels {
                return Err(Error::Config(format!(
                    "SAR channels {} differ from VAE latent width {}",
                    config.channels, v.config.latent
                )));
            }
        }
        if field_stats.mean.len() != config.channels {
            return Err(Error::Config("field statistics do not match the channel count".into()));
        }
        field_stats.validate()?;
        let mut params = ParamStore::new();
        let mut init_rng = rng::stream(config.seed, "sar_init", 0);
        let mut pb = ParamBuilder::new(&mut params, &mut init_rng);
        let c = &config;
        let att = c.attention();
        let (w, f) = (c.width, c.channels);
        let encoder = if c.cond_encoder {
            ConditionEncoder::Transolver(Transolver::new(
                &mut pb,
                "cond",
                c.node_input_width(),
                w,
                c.cond_layers,
                att,
            )?)
        } else {
            ConditionEncoder::Lift(Linear::new(&mut pb, "cond_lift", c.node_input_width(), w))
        };
        let ar = {
            let mut sub = pb.sub("ar");
            ArModule {
                net: AdaTransolver::new(&mut sub, "net", 2 * w, w, c.ar_layers, att, w, false)?,
                value_lift: Linear::new(&mut sub, "value_lift", f, w),
                mask: sub.param("mask", 1, w, Init::Normal(EMBEDDING_INIT_STD)),
                scale_embeddings: sub.param("scale_emb", c.num_scales, w, Init::Normal(EMBEDDING_INIT_STD)),
            }
        };
        let sampler = {
            let mut sub = pb.sub("sampler");
            Sampler {
                position_mlp: Mlp::new(&mut sub, "pos_mlp", c.dim + c.num_scales, w, w, Activation::Gelu),
                condition_mlp: Mlp::new(&mut sub, "cond_mlp", w, w, w, Activation::Gelu),
                input_mlp: Mlp::new(&mut sub, "in_mlp", f + 2 * w, w, w, Activation::Gelu),
                net: AdaTransolver::new(
                    &mut sub,
                    "net",
                    w + c.emb_width,
                    f,
                    c.sampler_layers,
                    att,
                    c.emb_width,
                    c.nodewise_sampler,
                )?,
            }
        };
        Ok(Self {
            config,
            params,
            encoder,
            ar,
            sampler,
            field_stats,
            vae,
        })
    }

    pub fn num_scales(&self) -> usize {
        self.config.num_scales
    }

    fn check_context(&self, ctx: &SarContext) -> Result<()> {
        let c = &self.config;
        if ctx.hierarchy.num_scales() != c.num_scales {
            return Err(Error::Config(format!(
                "hierarchy has {} scales, model expects {}",
                ctx.hierarchy.num_scales(),
                c.num_scales
            )));
        }
        if ctx.graph.dim() != c.dim || ctx.graph.num_conditions() != c.num_conditions {
            return Err(Error::Config(
                "graph dimension or condition width differs from the model".into(),
            ));
        }
        Ok(())
    }

    /// `Y` on the tape, one `F_model` row per node.
    pub fn encode_conditions_on(&self, t: &Tape, ctx: &SarContext) -> Var {
        let x = t.constant(ctx.node_inputs.clone());
        match &self.encoder {
            ConditionEncoder::Transolver(net) => net.forward(t, x),
            ConditionEncoder::Lift(lin) => lin.forward(t, x),
        }
    }

    /// `Y` for caching across samples of one system.
    pub fn encode_conditions(&self, ctx: &SarContext) -> Result<Array2<f64>> {
        self.check_context(ctx)?;
        let t = Tape::with_params(&self.params);
        let y = self.encode_conditions_on(&t, ctx);
        Ok(t.value(y))
    }

    /// `Z_k` on the tape. `coarse` holds the values of the nodes of
    /// `S_1..S_{k-1}` in prefix order and is ignored for `k = 1`.
    pub fn ar_step_on(&self, t: &Tape, k: usize, ctx: &SarContext, y: Var, coarse: Option<Var>) -> Var {
        let h = &ctx.hierarchy;
        let target = h.partition(k);
        let w = self.config.width;
        let mask = t.gather_rows(t.param(self.ar.mask), &vec![0; target.len()]);
        let target_rows = t.concat_cols(&[mask, t.gather_rows(y, target)]);
        let (rows, n_coarse) = match (k, coarse) {
            (1, _) | (_, None) => (target_rows, 0),
            (_, Some(values)) => {
                let prefix = h.prefix(k - 1);
                let lifted = self.ar.value_lift.forward(t, values);
                let coarse_rows = t.concat_cols(&[lifted, t.gather_rows(y, &prefix)]);
                (t.concat_rows(&[coarse_rows, target_rows]), prefix.len())
            }
        };
        debug_assert_eq!(t.shape(rows).1, 2 * w);
        let emb = t.gather_rows(t.param(self.ar.scale_embeddings), &[k - 1]);
        let out = self.ar.net.forward(t, rows, emb);
        t.slice_rows(out, n_coarse, target.len())
    }

    /// `Z_k` from full-size node values; only rows of scales `< k` are read.
    pub fn ar_step(&self, k: usize, ctx: &SarContext, y: &Array2<f64>, values: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_context(ctx)?;
        self.check_scale(k)?;
        self.check_values(ctx, values)?;
        let t = Tape::with_params(&self.params);
        let yv = t.constant(y.clone());
        let coarse = (k > 1).then(|| t.constant(values.select(Axis(0), &ctx.hierarchy.prefix(k - 1))));
        let z = self.ar_step_on(&t, k, ctx, yv, coarse);
        Ok(t.value(z))
    }

    pub(crate) fn check_scale(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.config.num_scales {
            return Err(Error::Config(format!(
                "scale {k} outside 1..={}",
                self.config.num_scales
            )));
        }
        Ok(())
    }

    pub(crate) fn check_values(&self, ctx: &SarContext, values: &Array2<f64>) -> Result<()> {
        if values.dim() != (ctx.num_nodes(), self.config.channels) {
            return Err(Error::Config(format!(
                "coarser values have shape {:?}, expected ({}, {})",
                values.dim(),
                ctx.num_nodes(),
                self.config.channels
            )));
        }
        Ok(())
    }

    /// Per-node sampler input before the Transolver lift:
    /// `[MLP([s, z, MLP([x, onehot]) + MLP(y)]), emb(r)]`.
    pub fn sampler_input_on(&self, t: &Tape, s: Var, r: f64, ctx: &SarContext, k: usize, y: Var, z: Var) -> (Var, Var) {
        let nodes = ctx.hierarchy.partition(k);
        let sm = &self.sampler;
        let pos = sm
            .position_mlp
            .forward(t, t.constant(ctx.position_scale.select(Axis(0), nodes)));
        let cond = sm.condition_mlp.forward(t, t.gather_rows(y, nodes));
        let mixed = sm.input_mlp.forward(t, t.concat_cols(&[s, z, t.add(pos, cond)]));
        let emb_row = sinusoidal_embedding(r, self.config.emb_width).expect("validated width");
        let emb = t.constant(emb_row);
        let tiled = t.gather_rows(emb, &vec![0; nodes.len()]);
        (t.concat_cols(&[mixed, tiled]), emb)
    }

    /// Velocity `u` on the nodes of `S_k`.
    pub fn sampler_velocity_on(&self, t: &Tape, s: Var, r: f64, ctx: &SarContext, k: usize, y: Var, z: Var) -> Var {
        let (input, emb) = self.sampler_input_on(t, s, r, ctx, k, y, z);
        self.sampler.net.forward(t, input, emb)
    }

    pub fn sampler_velocity(
        &self,
        s: &Array2<f64>,
        r: f64,
        ctx: &SarContext,
        k: usize,
        y: &Array2<f64>,
        z: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_scale(k)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Config(format!("denoising time {r} outside [0, 1]")));
        }
        let t = Tape::with_params(&self.params);
        let u = self.sampler_velocity_on(
            &t,
            t.constant(s.clone()),
            r,
            ctx,
            k,
            t.constant(y.clone()),
            t.constant(z.clone()),
        );
        Ok(t.value(u))
    }

    /// Saves parameters; the VAE is referenced by path, not copied.
    pub fn save(&self, manifest: &Path, config_hash: &str, vae_manifest: Option<&Path>) -> Result<()> {
        if self.config.latent_mode && vae_manifest.is_none() {
            return Err(Error::MissingPrerequisite(
                "latent-mode checkpoint needs the VAE checkpoint path".into(),
            ));
        }
        let meta = SarCheckpointMeta {
            sar: self.config.clone(),
            field_stats: self.field_stats.clone(),
            vae_checkpoint: vae_manifest.map(Path::to_path_buf),
        };
        save_checkpoint(
            manifest,
            "sar",
            &serde_json::to_value(&meta)?,
            config_hash,
            &self.params,
            None,
        )
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let ck = load_checkpoint(manifest)?;
        if ck.manifest.kind != "sar" {
            return Err(Error::Format(format!(
                "{} is a '{}' checkpoint, not SAR",
                manifest.display(),
                ck.manifest.kind
            )));
        }
        let meta: SarCheckpointMeta = serde_json::from_value(ck.manifest.config)?;
        let vae = match (&meta.vae_checkpoint, meta.sar.latent_mode) {
            (Some(p), true) => {
                if !p.exists() {
                    return Err(Error::MissingPrerequisite(format!(
                        "VAE checkpoint {} not found",
                        p.display()
                    )));
                }
                Some(VaeModel::load(p)?)
            }
            (None, true) => return Err(Error::Format("latent-mode checkpoint without a VAE reference".into())),
            _ => None,
        };
        let mut model = Self::new(meta.sar, vae, meta.field_stats)?;
        model.params.load_from(&ck.params)?;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SarCheckpointMeta {
    sar: SarConfig,
    field_stats: ChannelStats,
    vae_checkpoint: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgraph::triangulated_grid;

    pub(crate) fn tiny(num_scales: usize) -> (SarModel, SarContext) {
        let config = SarConfig {
            num_scales,
            width: 8,
            emb_width: 8,
            heads: 2,
            slices: 3,
            cond_layers: 1,
            ar_layers: 1,
            sampler_layers: 1,
            latent_mode: false,
            seed: 5,
            ..SarConfig::default()
        };
        let model = SarModel::new(config, None, ChannelStats::identity(1)).unwrap();
        let g = triangulated_grid(4, 4, &[0.5]).unwrap();
        let ctx = SarContext::new(&g, num_scales).unwrap();
        (model, ctx)
    }

    #[test]
    fn first_scale_has_no_prefix_and_output_rows_match() {
        let (m, ctx) = tiny(3);
        let y = m.encode_conditions(&ctx).unwrap();
        let values = Array2::zeros((16, 1));
        for k in 1..=3 {
            let z = m.ar_step(k, &ctx, &y, &values).unwrap();
            assert_eq!(z.dim(), (ctx.hierarchy.partition(k).len(), 8));
        }
    }

    #[test]
    fn finer_values_are_never_read() {
        let (m, ctx) = tiny(3);
        let y = m.encode_conditions(&ctx).unwrap();
        let mut values = Array2::from_shape_fn((16, 1), |(i, _)| i as f64 * 0.1);
        let z = m.ar_step(2, &ctx, &y, &values).unwrap();
        for &i in ctx.hierarchy.partition(2).iter().chain(ctx.hierarchy.partition(3)) {
            values[[i, 0]] = 100.0;
        }
        assert_eq!(z, m.ar_step(2, &ctx, &y, &values).unwrap());
    }

    #[test]
    fn coarse_perturbation_changes_z() {
        // Zero-initialised gates make every block the identity; move off init.
        let (mut m, ctx) = tiny(3);
        let mut r = crate::numcore::rng::stream(9, "test", 0);
        for id in m.params.ids().collect::<Vec<_>>() {
            let v = m.params.value_mut(id);
            *v += &crate::numcore::rng::normal_matrix(&mut r, v.nrows(), v.ncols(), 0.1);
        }
        let y = m.encode_conditions(&ctx).unwrap();
        let mut values = Array2::zeros((16, 1));
        let z0 = m.ar_step(3, &ctx, &y, &values).unwrap();
        values[[ctx.hierarchy.partition(1)[0], 0]] = 1.0;
        let z1 = m.ar_step(3, &ctx, &y, &values).unwrap();
        assert!((&z1 - &z0).iter().any(|d| d.abs() > 0.0));
    }

    #[test]
    fn out_of_range_scale_rejected() {
        let (m, ctx) = tiny(2);
        let y = m.encode_conditions(&ctx).unwrap();
        let v = Array2::zeros((16, 1));
        assert!(m.ar_step(0, &ctx, &y, &v).is_err());
        assert!(m.ar_step(3, &ctx, &y, &v).is_err());
    }

    #[test]
    fn latent_mode_requires_vae() {
        let config = SarConfig {
            latent_mode: true,
            width: 8,
            emb_width: 8,
            heads: 2,
            ..SarConfig::default()
        };
        assert!(matches!(
            SarModel::new(config, None, ChannelStats::identity(1)),
            Err(Error::MissingPrerequisite(_))
        ));
    }
}
