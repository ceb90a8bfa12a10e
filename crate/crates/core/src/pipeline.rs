//! The command pipeline behind the `sarmesh` binary. Every command reads
//! its inputs from, and writes its outputs plus a manifest to, `out_dir`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RunManifest};
use crate::eval::{self, MetricReport};
use crate::hierarchy::ScaleHierarchy;
use crate::meshgraph::{normalize, ChannelStats, Dataset, FieldState, Space, System};
use crate::plot;
use crate::sar::sample::generate_many;
use crate::sar::{train_sar, DenoisingSchedule, SarContext, SarModel};
use crate::vae::{reconstruction_r2, train_vae, VaeModel};
use crate::{Error, Result};

pub const DATASET_FILE: &str = "dataset.json";
pub const HELDOUT_FILE: &str = "heldout.json";
pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const VAE_FILE: &str = "vae.json";
pub const LATENTS_FILE: &str = "latents.json";
pub const SAR_FILE: &str = "sar.json";
pub const SAMPLES_FILE: &str = "samples.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const BENCH_CSV: &str = "bench.csv";
pub const VAE_LOG: &str = "vae_log.csv";
pub const SAR_LOG: &str = "sar_log.csv";

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite(format!(
            "{} not found; run `{what}` first",
            path.display()
        )))
    }
}

fn finish(cfg: &RunConfig, command: &str, outputs: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let manifest = RunManifest::new(command, cfg, outputs.clone()).write(&cfg.out_dir)?;
    let mut all = outputs;
    all.push(manifest);
    Ok(all)
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// Writes normalized training and held-out datasets. The held-out set is
/// normalized with the training statistics.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out_dir)?;
    let (train, heldout) = cfg.data.generate()?;
    let train = normalize(&train)?;
    let heldout = apply_stats(&heldout, &train.channel_stats)?;
    let (a, b) = (out(cfg, DATASET_FILE), out(cfg, HELDOUT_FILE));
    train.save_json(&a)?;
    heldout.save_json(&b)?;
    finish(cfg, "gen-data", vec![a, b])
}

/// Standardizes `data` with existing statistics.
pub fn apply_stats(data: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    stats.validate()?;
    let systems = data
        .systems
        .iter()
        .map(|s| System {
            graph: s.graph.clone(),
            snapshots: s
                .snapshots
                .iter()
                .map(|f| FieldState {
                    values: stats.apply(&f.values),
                    space: f.space,
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        systems,
        channel_stats: stats.clone(),
        normalized: true,
        space: data.space,
    })
}

fn load_dataset(cfg: &RunConfig, name: &str) -> Result<Dataset> {
    let p = out(cfg, name);
    require(&p, "gen-data")?;
    Dataset::load_json(&p)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HierarchyExport {
    pub num_scales: usize,
    pub sizes: Vec<usize>,
    pub scales: Vec<usize>,
    pub level_edges: Vec<Vec<(usize, usize)>>,
}

pub fn hierarchy(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let h = ScaleHierarchy::build(&data.systems[0].graph, cfg.model.k)?;
    let export = HierarchyExport {
        num_scales: h.num_scales(),
        sizes: h.sizes(),
        scales: h.scales().to_vec(),
        level_edges: h.level_edges().to_vec(),
    };
    let p = out(cfg, HIERARCHY_FILE);
    fs::write(&p, serde_json::to_string_pretty(&export)?)?;
    finish(cfg, "hierarchy", vec![p])
}

pub fn train_vae_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let g = &data.systems[0].graph;
    let mut train = cfg.vae_train.clone();
    train.seed ^= cfg.seed;
    let (model, log) = train_vae(&data, cfg.vae_config(data.channels(), g.dim()), &train)?;
    let r2 = reconstruction_r2(&model, &data)?;
    log::info!("VAE reconstruction R2 = {r2:.5}");
    let (ck, csv) = (out(cfg, VAE_FILE), out(cfg, VAE_LOG));
    model.save(&ck, &cfg.vae_hash())?;
    fs::write(&csv, log.to_csv())?;
    finish(
        cfg,
        "train-vae",
        vec![ck, crate::numcore::checkpoint::blob_path(&out(cfg, VAE_FILE)), csv],
    )
}

fn load_vae(cfg: &RunConfig) -> Result<VaeModel> {
    let p = out(cfg, VAE_FILE);
    require(&p, "train-vae")?;
    let ck = crate::numcore::checkpoint::load_checkpoint(&p)?;
    if ck.manifest.config_hash != cfg.vae_hash() {
        return Err(Error::Config(format!(
            "{} was trained with a different configuration",
            p.display()
        )));
    }
    VaeModel::load(&p)
}

/// Encodes the training set to latent means and standardizes them; the
/// latent statistics are kept in the dataset's channel statistics.
pub fn encode_latents(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let vae = load_vae(cfg)?;
    let latents = normalize(&vae.encode_dataset(&data)?)?;
    let p = out(cfg, LATENTS_FILE);
    latents.save_json(&p)?;
    finish(cfg, "encode-latents", vec![p])
}

pub fn train_sar_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let g = &data.systems[0].graph;
    let sar_cfg = cfg.sar_config(data.channels(), g.dim(), g.num_conditions());
    let (mut model, train_set) = if cfg.ablation.latent {
        let vae = load_vae(cfg)?;
        let p = out(cfg, LATENTS_FILE);
        require(&p, "encode-latents")?;
        let latents = Dataset::load_json(&p)?;
        if latents.space != Space::Latent {
            return Err(Error::Format(format!("{} is not a latent dataset", p.display())));
        }
        let stats = latents.channel_stats.clone();
        (SarModel::new(sar_cfg, Some(vae), stats)?, latents)
    } else {
        let stats = ChannelStats::identity(data.channels());
        (SarModel::new(sar_cfg, None, stats)?, data)
    };
    let mut train = cfg.sar_train.clone();
    train.seed ^= cfg.seed;
    let log = train_sar(&mut model, &train_set, &train)?;
    let (ck, csv) = (out(cfg, SAR_FILE), out(cfg, SAR_LOG));
    let vae_path = cfg.ablation.latent.then(|| out(cfg, VAE_FILE));
    model.save(&ck, &cfg.sar_hash(), vae_path.as_deref())?;
    fs::write(&csv, log.to_csv())?;
    finish(
        cfg,
        "train-sar",
        vec![ck, crate::numcore::checkpoint::blob_path(&out(cfg, SAR_FILE)), csv],
    )
}

pub fn load_sar(cfg: &RunConfig) -> Result<SarModel> {
    let p = out(cfg, SAR_FILE);
    require(&p, "train-sar")?;
    let ck = crate::numcore::checkpoint::load_checkpoint(&p)?;
    if ck.manifest.config_hash != cfg.sar_hash() {
        return Err(Error::Config(format!(
            "{} was trained with a different configuration",
            p.display()
        )));
    }
    SarModel::load(&p)
}

/// Draws `num_samples` fields with seeds `seed, seed + 1, ...`.
pub fn draw_samples(
    cfg: &RunConfig,
    model: &SarModel,
    data: &Dataset,
    schedule: &DenoisingSchedule,
) -> Result<Vec<FieldState>> {
    let ctx = SarContext::new(&data.systems[0].graph, model.num_scales())?;
    let gens = generate_many(model, &ctx, schedule, cfg.seed, cfg.sampling.num_samples)?;
    Ok(gens.into_iter().map(|g| g.field).collect())
}

pub fn sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let model = load_sar(cfg)?;
    let schedule = cfg.schedule()?;
    schedule.check_scales(model.num_scales())?;
    let fields = draw_samples(cfg, &model, &data, &schedule)?;
    let samples = Dataset {
        systems: vec![System {
            graph: data.systems[0].graph.clone(),
            snapshots: fields,
        }],
        channel_stats: data.channel_stats.clone(),
        normalized: true,
        space: Space::Physical,
    };
    let p = out(cfg, SAMPLES_FILE);
    samples.save_json(&p)?;
    finish(cfg, "sample", vec![p])
}

/// Metrics of generated samples against the held-out set.
pub fn evaluate(
    samples: &[FieldState],
    heldout: &[FieldState],
    train: &[FieldState],
    envelope: &[f64],
) -> Result<Vec<MetricReport>> {
    let settings = serde_json::json!({"cost": "squared euclidean", "space": "normalized"});
    let counts = vec![samples.len(), heldout.len()];
    let mut reports = vec![MetricReport::scalar(
        "w2_generated_heldout",
        eval::w2_distance(samples, heldout)?,
        counts.clone(),
        settings.clone(),
    )];
    let reference: Vec<FieldState> = train.iter().take(heldout.len()).cloned().collect();
    reports.push(MetricReport::scalar(
        "w2_train_heldout",
        eval::w2_distance(&reference, heldout)?,
        vec![reference.len(), heldout.len()],
        settings.clone(),
    ));
    let r2: Vec<f64> = samples
        .iter()
        .map(|s| eval::r2_best_match(s, heldout))
        .collect::<std::result::Result<_, _>>()?;
    reports.push(MetricReport {
        metric: "r2_best_match".into(),
        values: r2,
        sample_counts: counts.clone(),
        settings: serde_json::json!({"reference": "heldout"}),
    });
    if samples.len() >= 2 {
        let stats = eval::per_node_stats(samples)?;
        for (name, arr) in [("node_mean", &stats.mean), ("node_std", &stats.std)] {
            reports.push(MetricReport {
                metric: name.into(),
                values: arr.iter().copied().collect(),
                sample_counts: vec![samples.len()],
                settings: serde_json::json!({"layout": "node-major"}),
            });
        }
    }
    if samples[0].channels() == 1 {
        let sign = eval::sign_agreement(samples, envelope, SIGN_ENVELOPE_THRESHOLD)?;
        reports.push(MetricReport {
            metric: "sign_agreement".into(),
            values: vec![sign.pair_agreement, sign.coherent_fraction, sign.positive_fraction],
            sample_counts: vec![samples.len()],
            settings: serde_json::json!({"envelope_threshold": SIGN_ENVELOPE_THRESHOLD, "values": ["pair_agreement", "coherent_fraction", "positive_fraction"]}),
        });
    }
    Ok(reports)
}

/// Nodes whose envelope weight is below this are left out of sign checks.
pub const SIGN_ENVELOPE_THRESHOLD: f64 = 0.25;

pub fn eval_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let heldout = load_dataset(cfg, HELDOUT_FILE)?;
    let p = out(cfg, SAMPLES_FILE);
    require(&p, "sample")?;
    let samples = Dataset::load_json(&p)?;
    let graph = &data.systems[0].graph;
    let envelope = graph.envelope();
    let reports = evaluate(samples.snapshots(0), heldout.snapshots(0), data.snapshots(0), &envelope)?;
    if let Some(bad) = reports.iter().find(|r| !r.is_finite()) {
        return Err(Error::Numerical(format!("metric {} is not finite", bad.metric)));
    }
    let node = (0..envelope.len())
        .max_by(|&a, &b| envelope[a].total_cmp(&envelope[b]))
        .expect("nonempty graph");
    let mut hist = String::from("source,bin_center,density\n");
    for (name, set) in [("generated", samples.snapshots(0)), ("heldout", heldout.snapshots(0))] {
        let h = eval::pdf_histogram(set, node, 0, 30)?;
        for (d, e) in h.density.iter().zip(h.edges.windows(2)) {
            hist.push_str(&format!("{name},{:.6e},{:.6e}\n", 0.5 * (e[0] + e[1]), d));
        }
    }
    let (j, c, hp) = (out(cfg, METRICS_JSON), out(cfg, METRICS_CSV), out(cfg, HISTOGRAM_CSV));
    fs::write(&j, serde_json::to_string_pretty(&reports)?)?;
    fs::write(&c, eval::reports_to_csv(&reports))?;
    fs::write(&hp, hist)?;
    finish(cfg, "eval", vec![j, c, hp])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub schedule: String,
    pub node_evaluations: usize,
    pub seconds: f64,
    pub w2: f64,
    pub r2_mean: f64,
}

pub fn bench(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg, DATASET_FILE)?;
    let heldout = load_dataset(cfg, HELDOUT_FILE)?;
    let model = load_sar(cfg)?;
    let mut rows = Vec::new();
    for steps in &cfg.sampling.bench_schedules {
        let schedule = DenoisingSchedule::new(steps.clone())?;
        schedule.check_scales(model.num_scales())?;
        let ctx = SarContext::new(&data.systems[0].graph, model.num_scales())?;
        let start = Instant::now();
        let gens = generate_many(&model, &ctx, &schedule, cfg.seed, cfg.sampling.num_samples)?;
        let seconds = start.elapsed().as_secs_f64();
        let fields: Vec<FieldState> = gens.iter().map(|g| g.field.clone()).collect();
        let r2: Vec<f64> = fields
            .iter()
            .map(|f| eval::r2_best_match(f, heldout.snapshots(0)))
            .collect::<std::result::Result<_, _>>()?;
        rows.push(BenchRow {
            schedule: schedule.to_string(),
            node_evaluations: gens[0].node_evaluations,
            seconds,
            w2: eval::w2_distance(&fields, heldout.snapshots(0))?,
            r2_mean: r2.iter().sum::<f64>() / r2.len() as f64,
        });
    }
    let mut csv = String::from("schedule,node_evaluations,seconds,w2,r2_mean\n");
    for r in &rows {
        csv.push_str(&format!(
            "\"{}\",{},{:.6},{:.6e},{:.6}\n",
            r.schedule, r.node_evaluations, r.seconds, r.w2, r.r2_mean
        ));
    }
    let p = out(cfg, BENCH_CSV);
    fs::write(&p, csv)?;
    finish(cfg, "bench", vec![p])
}

/// Renders every known CSV present in `out_dir` to SVG.
pub fn plot_cmd(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    for log in [VAE_LOG, SAR_LOG] {
        let p = out(cfg, log);
        if p.exists() {
            let table = plot::read_csv(&p)?;
            let svg = plot::line_chart(&table, "step", &["loss"], log, true)?;
            let target = p.with_extension("svg");
            fs::write(&target, svg)?;
            outputs.push(target);
        }
    }
    let p = out(cfg, BENCH_CSV);
    if p.exists() {
        let table = plot::read_csv(&p)?;
        let svg = plot::bar_chart(&table, "schedule", "node_evaluations", "sampler node evaluations")?;
        let target = p.with_extension("svg");
        fs::write(&target, svg)?;
        outputs.push(target);
    }
    let p = out(cfg, HISTOGRAM_CSV);
    if p.exists() {
        let table = plot::read_csv(&p)?;
        let svg = plot::grouped_line_chart(&table, "source", "bin_center", "density", "density at the peak node")?;
        let target = p.with_extension("svg");
        fs::write(&target, svg)?;
        outputs.push(target);
    }
    if outputs.is_empty() {
        return Err(Error::MissingPrerequisite(format!(
            "no CSV files to plot in {}",
            cfg.out_dir.display()
        )));
    }
    finish(cfg, "plot", outputs)
}
