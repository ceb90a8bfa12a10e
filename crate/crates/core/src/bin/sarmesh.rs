use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sarmesh::config::{default_config_path, load_config, resolve_config_path, RunConfig};
use sarmesh::{pipeline, Error, Result};

#[derive(Parser)]
#[command(
    name = "sarmesh",
    version,
    about = "Coarse-to-fine flow-matching generation on mesh graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy training and held-out datasets.
    GenData,
    /// Export the scale hierarchy of the dataset mesh.
    Hierarchy,
    /// Train the graph VAE.
    TrainVae,
    /// Encode the training set into VAE latents.
    EncodeLatents,
    /// Train the condition encoder, AR module and sampler jointly.
    TrainSar,
    /// Draw samples with the trained model.
    Sample,
    /// Compute distributional metrics against the held-out set.
    Eval,
    /// Sweep denoising schedules and record cost and quality.
    Bench,
    /// Render CSV outputs to SVG.
    Plot,
}

#[derive(Args)]
struct Overrides {
    /// JSON config or a manifest written by a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Denoising steps per scale, e.g. `10,6,1`.
    #[arg(long, global = true, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    /// Number of scales K.
    #[arg(long, global = true)]
    scales: Option<usize>,
    #[arg(long, global = true)]
    num_samples: Option<usize>,
    /// Train and sample in physical space.
    #[arg(long, global = true)]
    no_latent: bool,
    /// Replace sampler attention with a per-node MLP.
    #[arg(long, global = true)]
    nodewise_sampler: bool,
    /// Replace the condition encoder with a linear lift.
    #[arg(long, global = true)]
    no_cond_encoder: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match self
            .config
            .as_deref()
            .map(resolve_config_path)
            .or_else(default_config_path)
        {
            Some(p) => load_config(&p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(s) = &self.steps {
            cfg.sampling.steps_per_scale = s.clone();
        }
        if let Some(k) = self.scales {
            cfg.model.k = k;
            if self.steps.is_none() && cfg.sampling.steps_per_scale.len() != k {
                log::warn!("--scales {k} without --steps: using 10 steps per scale");
                cfg.sampling.steps_per_scale = vec![10; k];
            }
            cfg.sampling.bench_schedules.retain(|s| s.len() == k);
            if cfg.sampling.bench_schedules.is_empty() {
                cfg.sampling.bench_schedules.push(cfg.sampling.steps_per_scale.clone());
            }
        }
        if let Some(n) = self.num_samples {
            cfg.sampling.num_samples = n;
        }
        cfg.ablation.latent &= !self.no_latent;
        cfg.ablation.nodewise_sampler |= self.nodewise_sampler;
        cfg.ablation.cond_encoder &= !self.no_cond_encoder;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.opts.resolve()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    match cli.command {
        Command::GenData => pipeline::gen_data(&cfg),
        Command::Hierarchy => pipeline::hierarchy(&cfg),
        Command::TrainVae => pipeline::train_vae_cmd(&cfg),
        Command::EncodeLatents => pipeline::encode_latents(&cfg),
        Command::TrainSar => pipeline::train_sar_cmd(&cfg),
        Command::Sample => pipeline::sample(&cfg),
        Command::Eval => pipeline::eval_cmd(&cfg),
        Command::Bench => pipeline::bench(&cfg),
        Command::Plot => pipeline::plot_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
