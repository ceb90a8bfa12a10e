//! Coarse-to-fine inference with per-scale Euler step counts.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{SarContext, SarModel};
use crate::meshgraph::FieldState;
use crate::numcore::{rng, Tape};
use crate::{Error, Result};

/// Euler steps per scale, coarse to fine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoisingSchedule {
    pub steps_per_scale: Vec<usize>,
}

impl DenoisingSchedule {
    pub fn new(steps_per_scale: Vec<usize>) -> Result<Self> {
        if steps_per_scale.is_empty() || steps_per_scale.contains(&0) {
            return Err(Error::Config(format!(
                "every scale needs at least one step, got {steps_per_scale:?}"
            )));
        }
        Ok(Self { steps_per_scale })
    }

    /// Same step count on every scale.
    pub fn uniform(steps: usize, num_scales: usize) -> Result<Self> {
        Self::new(vec![steps; num_scales])
    }

    /// Parses `"10,6,1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let steps = text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad step count '{p}' in '{text}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }

    pub fn num_scales(&self) -> usize {
        self.steps_per_scale.len()
    }

    pub fn check_scales(&self, num_scales: usize) -> Result<()> {
        if self.num_scales() != num_scales {
            return Err(Error::Config(format!(
                "schedule {:?} has {} entries for a {}-scale model",
                self.steps_per_scale,
                self.num_scales(),
                num_scales
            )));
        }
        Ok(())
    }

    /// Sampler node evaluations `sum_k steps_k * |S_k|`.
    pub fn node_evaluations(&self, scale_sizes: &[usize]) -> usize {
        self.steps_per_scale.iter().zip(scale_sizes).map(|(s, n)| s * n).sum()
    }
}

impl std::fmt::Display for DenoisingSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.steps_per_scale.iter().map(|s| s.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Forward Euler from `r = 0` to `r = 1` on the grid `r_m = m / n_steps`.
pub fn euler_integrate(
    start: Array2<f64>,
    n_steps: usize,
    mut velocity: impl FnMut(&Array2<f64>, f64) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let dt = 1.0 / n_steps as f64;
    let mut s = start;
    for m in 0..n_steps {
        let u = velocity(&s, m as f64 / n_steps as f64)?;
        s.scaled_add(dt, &u);
    }
    Ok(s)
}

/// Draws the values of scale `k` given full-size node values of which only
/// the rows of scales `< k` are read. Returns `|S_k| x F`.
pub fn sample_scale(
    model: &SarModel,
    k: usize,
    ctx: &SarContext,
    y: &Array2<f64>,
    values: &Array2<f64>,
    n_steps: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let z = model.ar_step(k, ctx, y, values)?;
    let n_k = ctx.hierarchy.partition(k).len();
    let mut r = rng::stream(seed, "sample_scale", k as u64);
    let eps = rng::normal_matrix(&mut r, n_k, model.config.channels, 1.0);
    let s = euler_integrate(eps, n_steps, |s, time| {
        let t = Tape::with_params(&model.params);
        let u = model.sampler_velocity_on(
            &t,
            t.constant(s.clone()),
            time,
            ctx,
            k,
            t.constant(y.clone()),
            t.constant(z.clone()),
        );
        Ok(t.value(u))
    })?;
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite sample on scale {k}")));
    }
    Ok(s)
}

/// Result of [`generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    /// Normalized physical field.
    pub field: FieldState,
    /// Standardised sampler-space values in node order (latents in latent
    /// mode).
    pub sampler_values: Array2<f64>,
    pub node_evaluations: usize,
}

/// Samples all scales coarse to fine and, in latent mode, decodes with the
/// VAE. `y_cache` skips the condition encoder.
pub fn generate(
    model: &SarModel,
    ctx: &SarContext,
    schedule: &DenoisingSchedule,
    seed: u64,
    y_cache: Option<&Array2<f64>>,
) -> Result<Generated> {
    schedule.check_scales(model.num_scales())?;
    let fresh;
    let y = match y_cache {
        Some(y) => y,
        None => {
            fresh = model.encode_conditions(ctx)?;
            &fresh
        }
    };
    let n = ctx.num_nodes();
    let mut values = Array2::zeros((n, model.config.channels));
    for (idx, &steps) in schedule.steps_per_scale.iter().enumerate() {
        let k = idx + 1;
        let s_k = sample_scale(model, k, ctx, y, &values, steps, seed)?;
        for (row, &node) in ctx.hierarchy.partition(k).iter().enumerate() {
            values.row_mut(node).assign(&s_k.row(row));
        }
    }
    let raw = model.field_stats.invert(&values);
    let field = if model.config.latent_mode {
        let vae = model
            .vae
            .as_ref()
            .ok_or_else(|| Error::MissingPrerequisite("latent-mode SAR has no VAE".into()))?;
        vae.decode(&ctx.graph, &FieldState::latent(raw))?
    } else {
        FieldState::physical(raw)
    };
    Ok(Generated {
        field,
        sampler_values: values,
        node_evaluations: schedule.node_evaluations(&ctx.hierarchy.sizes()),
    })
}

/// `count` samples with seeds `base_seed + i`, sharing one `Y`.
pub fn generate_many(
    model: &SarModel,
    ctx: &SarContext,
    schedule: &DenoisingSchedule,
    base_seed: u64,
    count: usize,
) -> Result<Vec<Generated>> {
    use rayon::prelude::*;
    let y = model.encode_conditions(ctx)?;
    (0..count)
        .into_par_iter()
        .map(|i| generate(model, ctx, schedule, base_seed.wrapping_add(i as u64), Some(&y)))
        .collect()
}

/// Rows of `values` belonging to scale `k`.
pub fn scale_rows(ctx: &SarContext, values: &Array2<f64>, k: usize) -> Array2<f64> {
    values.select(Axis(0), ctx.hierarchy.partition(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sar::tests::tiny;

    #[test]
    fn schedule_parsing_and_cost() {
        let s = DenoisingSchedule::parse("10,6,1").unwrap();
        assert_eq!(s.steps_per_scale, vec![10, 6, 1]);
        assert_eq!(s.node_evaluations(&[8, 24, 72]), 296);
        assert_eq!(
            DenoisingSchedule::uniform(10, 3)
                .unwrap()
                .node_evaluations(&[8, 24, 72]),
            1040
        );
        assert!(DenoisingSchedule::parse("3,0").is_err());
        assert!(DenoisingSchedule::parse("a,1").is_err());
    }

    #[test]
    fn schedule_length_must_match() {
        let (m, ctx) = tiny(3);
        let s = DenoisingSchedule::parse("3,3").unwrap();
        assert!(matches!(generate(&m, &ctx, &s, 0, None), Err(Error::Config(_))));
    }

    #[test]
    fn euler_with_exact_point_mass_field_hits_target() {
        let target = Array2::from_elem((3, 2), 0.7);
        for n in [1, 2, 5, 17] {
            let start = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - j as f64);
            let out = euler_integrate(start, n, |s, r| Ok((&target - s) / (1.0 - r))).unwrap();
            assert!((&out - &target).iter().all(|d| d.abs() < 1e-12), "n = {n}");
        }
    }

    #[test]
    fn single_step_is_noise_plus_initial_velocity() {
        let (m, ctx) = tiny(2);
        let y = m.encode_conditions(&ctx).unwrap();
        let values = Array2::zeros((16, 1));
        let s = sample_scale(&m, 1, &ctx, &y, &values, 1, 9).unwrap();
        let n1 = ctx.hierarchy.partition(1).len();
        let mut r = rng::stream(9, "sample_scale", 1);
        let eps = rng::normal_matrix(&mut r, n1, 1, 1.0);
        let z = m.ar_step(1, &ctx, &y, &values).unwrap();
        let u = m.sampler_velocity(&eps, 0.0, &ctx, 1, &y, &z).unwrap();
        assert_eq!(s, &eps + &u);
    }

    #[test]
    fn cached_and_fresh_condition_encoding_agree() {
        let (m, ctx) = tiny(3);
        let sched = DenoisingSchedule::parse("2,2,1").unwrap();
        let y = m.encode_conditions(&ctx).unwrap();
        let a = generate(&m, &ctx, &sched, 4, None).unwrap();
        let b = generate(&m, &ctx, &sched, 4, Some(&y)).unwrap();
        assert_eq!(a.field.values, b.field.values);
        assert_eq!(a.node_evaluations, sched.node_evaluations(&ctx.hierarchy.sizes()));
    }
}
