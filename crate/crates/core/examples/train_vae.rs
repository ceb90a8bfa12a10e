//! Trains the graph VAE on the quasi-periodic toy and reports reconstruction R².

use sarmesh::meshgraph::{gen_quasiperiodic, normalize};
use sarmesh::vae::{reconstruction_r2, train_vae, VaeConfig, VaeTrainConfig};

fn main() -> sarmesh::Result<()> {
    env_logger::init();
    let data = normalize(&gen_quasiperiodic(8, 8, 1.0, 512, 7)?)?;
    let vae = VaeConfig {
        channels: 1,
        dim: 2,
        width: 64,
        latent: 1,
        seed: 1,
    };
    let train = VaeTrainConfig {
        patience_epochs: 5,
        max_epochs: 20,
        ..VaeTrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (model, log) = train_vae(&data, vae, &train)?;
    for e in &log.epochs {
        println!("epoch {:3} loss {:.5e} lr {:.0e}", e.epoch, e.loss, e.lr);
    }
    println!(
        "converged {} after {:.1}s, R2 = {:.5}",
        log.converged,
        start.elapsed().as_secs_f64(),
        reconstruction_r2(&model, &data)?
    );
    Ok(())
}
