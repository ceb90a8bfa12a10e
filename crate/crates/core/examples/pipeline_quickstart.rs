//! Runs the file-based pipeline end to end on a tiny configuration: data,
//! hierarchy, VAE, latents, SAR, samples, metrics, bench and plots.
//!
//! Usage: `cargo run --example pipeline_quickstart -- [out_dir]`

use sarmesh::config::RunConfig;
use sarmesh::pipeline;

fn main() -> sarmesh::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.out_dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "quickstart_out".into())
        .into();
    cfg.data.nx = 6;
    cfg.data.ny = 6;
    cfg.data.snapshots = 64;
    cfg.data.heldout_snapshots = 32;
    cfg.model.f_model = 16;
    cfg.model.f_emb = 16;
    cfg.model.f_vae = 16;
    cfg.model.slices = 8;
    cfg.vae_train.max_epochs = 5;
    cfg.sar_train.max_steps = 200;
    cfg.sampling.num_samples = 32;
    cfg.validate()?;
    let steps: [(&str, fn(&RunConfig) -> sarmesh::Result<Vec<std::path::PathBuf>>); 9] = [
        ("gen-data", pipeline::gen_data),
        ("hierarchy", pipeline::hierarchy),
        ("train-vae", pipeline::train_vae_cmd),
        ("encode-latents", pipeline::encode_latents),
        ("train-sar", pipeline::train_sar_cmd),
        ("sample", pipeline::sample),
        ("eval", pipeline::eval_cmd),
        ("bench", pipeline::bench),
        ("plot", pipeline::plot_cmd),
    ];
    for (name, run) in steps {
        let out = run(&cfg)?;
        println!(
            "{name}: {}",
            out.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}
