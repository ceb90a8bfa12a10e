//! Compares denoising schedules on an untrained 3-scale model: sampler
//! node-evaluations, wall clock, and cached versus recomputed conditions.

use std::time::Instant;

use sarmesh::meshgraph::{triangulated_grid, ChannelStats};
use sarmesh::sar::{generate, DenoisingSchedule, SarConfig, SarContext, SarModel};

fn main() -> sarmesh::Result<()> {
    let g = triangulated_grid(8, 8, &[1.0])?;
    let model = SarModel::new(
        SarConfig {
            width: 32,
            emb_width: 32,
            latent_mode: false,
            ..SarConfig::default()
        },
        None,
        ChannelStats::identity(1),
    )?;
    let ctx = SarContext::new(&g, 3)?;
    println!("scale sizes {:?}", ctx.hierarchy.sizes());
    let y = model.encode_conditions(&ctx)?;
    for text in ["1,1,1", "10,6,1", "10,10,10", "20,10,5"] {
        let s = DenoisingSchedule::parse(text)?;
        let start = Instant::now();
        let mut evals = 0;
        for seed in 0..20 {
            evals = generate(&model, &ctx, &s, seed, Some(&y))?.node_evaluations;
        }
        let cached = start.elapsed().as_secs_f64() / 20.0;
        let start = Instant::now();
        for seed in 0..20 {
            generate(&model, &ctx, &s, seed, None)?;
        }
        let fresh = start.elapsed().as_secs_f64() / 20.0;
        println!(
            "[{text:>8}] {evals:5} node evaluations, {:.1} ms cached Y, {:.1} ms fresh Y",
            1e3 * cached,
            1e3 * fresh
        );
    }
    Ok(())
}
