use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use resunet_sv::backend::{
    apply_calibration, durations_from_manifest, fuse, read_calibration, score_trials, sub_mean, train_calibration,
    write_calibration, CalibrationParams,
};
use resunet_sv::clustering::{
    cluster_cascade, filter_min_count, read_pseudo_labels, write_pseudo_labels, CascadeParams, Linkage,
};
use resunet_sv::config::{RunConfig, CONFIG_ENV};
use resunet_sv::corpus::{
    read_embeddings, read_manifest, read_scores, read_trials, read_wav, write_embeddings, write_scores, Domain,
    EmbeddingSet, Manifest,
};
use resunet_sv::dsp::{build_plan, cmn, expansion_counts, fbank, read_features, write_features, write_plan, AugAssets};
use resunet_sv::metrics::{det_curve, eer_from_curve, min_dcf_from_curve, DcfParams};
use resunet_sv::pipeline::{
    run_synthetic_demo, run_until_converged, stage1_joint_adapt, write_round_log, AdaptationData, Embedder,
    LabeledUtterances, ResUnetEmbedder, RoundReport,
};
use resunet_sv::resunet::{load_checkpoint, param_count, save_checkpoint, ResUnet, ResUnetConfig, VARIANTS};
use resunet_sv::schedule::crop_frames;
use resunet_sv::{Error, Result};

#[derive(Parser)]
#[command(name = "resunet-sv", version, about = "ResUnet speaker verification with pseudo-label domain adaptation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log-Mel filterbanks with mean normalization, one file per utterance.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Embeddings from a checkpoint or a freshly initialized network.
    ExtractEmbeddings {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "init_seed")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        init_seed: Option<u64>,
        #[command(flatten)]
        variant: VariantArg,
    },
    /// Augmentation recipe for every utterance of a manifest.
    AugmentPlan {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise: Vec<PathBuf>,
        #[arg(long)]
        music: Vec<PathBuf>,
        #[arg(long)]
        babble: Vec<PathBuf>,
        #[arg(long)]
        rir: Vec<PathBuf>,
    },
    /// k-means, agglomerative clustering and size filtering into pseudo labels.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cluster: ClusterArgs,
    },
    /// Re-filters an existing pseudo-label file.
    PseudoLabel {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_count: Option<usize>,
    },
    /// Cosine scores for a trial list.
    Score {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subtract the mean embedding before scoring.
        #[arg(long)]
        sub_mean: bool,
        /// Embeddings the mean is taken over; defaults to `--embeddings`.
        #[arg(long)]
        mean_pool: Option<PathBuf>,
    },
    /// Trains a calibration model, or applies one with `--apply`.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        /// Manifest providing utterance durations.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Labeled trials, required for training.
        #[arg(long)]
        trials: Option<PathBuf>,
        #[arg(long, requires = "out")]
        apply: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equal-weight mean of aligned score files.
    Fuse {
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// EER and MinDCF of a score file against labeled trials.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        p_target: Option<f64>,
    },
    /// Stage-1 joint training followed by pseudo-label rounds.
    Adapt(AdaptArgs),
}

#[derive(Args)]
struct VariantArg {
    /// Residual depth.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long, value_enum)]
    linkage: Option<LinkageArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Single,
    Complete,
    Average,
}

#[derive(Args)]
struct AdaptArgs {
    /// Runs the built-in planted-partition scenario instead of real data.
    #[arg(long)]
    synthetic_demo: bool,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    skip_stage1: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    variant: VariantArg,
}

fn parse_variant(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if VARIANTS.contains(&v) {
        Ok(v)
    } else {
        Err(format!("variant must be one of {VARIANTS:?}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| dispatch(cli.command, config))
}

fn dispatch(command: Command, mut config: RunConfig) -> Result<()> {
    match command {
        Command::ExtractFeatures { manifest, out_dir } => extract_features(&manifest, &out_dir, &config),
        Command::ExtractEmbeddings {
            manifest,
            features_dir,
            out,
            checkpoint,
            init_seed,
            variant,
        } => {
            let cfg = network_config(&config, variant.variant)?;
            log::info!("residual blocks {}, param_count {}", cfg.residual_blocks, param_count(&cfg)?);
            let net = match checkpoint.or_else(|| config.paths.checkpoint.clone()) {
                Some(p) if init_seed.is_none() => load_checkpoint(p, &cfg)?,
                _ => ResUnet::build(cfg, init_seed.unwrap_or(config.seed))?,
            };
            let manifest = read_manifest(&manifest)?;
            let set = extract_embeddings(&net, &manifest, &features_dir)?;
            write_embeddings(&set, &out)
        }
        Command::AugmentPlan {
            manifest,
            out,
            noise,
            music,
            babble,
            rir,
        } => {
            let manifest = read_manifest(&manifest)?;
            let assets = AugAssets {
                noise,
                music,
                babble,
                rir,
            };
            let plan = build_plan(&manifest, &assets, config.seed)?;
            write_plan(&plan, &out)?;
            let (utts, spks) = expansion_counts(&manifest, &plan)?;
            println!("utterances {utts}");
            println!("speakers {spks}");
            Ok(())
        }
        Command::Cluster {
            embeddings,
            out,
            cluster,
        } => {
            let set = read_embeddings(&embeddings)?.l2_normalized()?;
            let params = cascade_params(&config, &cluster, set.len());
            let (km, labels) = cluster_cascade(&set, &params)?;
            log::info!(
                "k {} inertia {:.4}; {} pseudo-speakers, {} utterances removed",
                km.k,
                km.inertia,
                labels.n_speakers,
                labels.removed.len()
            );
            write_pseudo_labels(&labels, &out)?;
            println!("pseudo_speakers {}", labels.n_speakers);
            Ok(())
        }
        Command::PseudoLabel { labels, out, min_count } => {
            let set = read_pseudo_labels(&labels)?;
            let filtered = filter_min_count(&set, min_count.unwrap_or(config.pipeline.min_count))?;
            write_pseudo_labels(&filtered, &out)?;
            println!("pseudo_speakers {}", filtered.n_speakers);
            Ok(())
        }
        Command::Score {
            embeddings,
            trials,
            out,
            sub_mean: center,
            mean_pool,
        } => {
            let set = read_embeddings(&embeddings)?;
            let trials = read_trials(&trials)?;
            let set = if center {
                let pool = match mean_pool {
                    Some(p) => read_embeddings(&p)?,
                    None => set.clone(),
                };
                sub_mean(&set, &pool)?
            } else {
                set
            };
            write_scores(&score_trials(&set, &trials)?, &out)
        }
        Command::Calibrate {
            scores,
            manifest,
            model,
            trials,
            apply,
            out,
        } => {
            let scores = read_scores(&scores)?;
            let durations = durations_from_manifest(&read_manifest(&manifest)?);
            if apply {
                let m = read_calibration(&model)?;
                let out = out.expect("clap enforces --out with --apply");
                write_scores(&apply_calibration(&m, &scores, &durations)?, &out)
            } else {
                let trials = trials.ok_or_else(|| Error::Config("training a calibration needs --trials".into()))?;
                let trials = read_trials(&trials)?;
                scores.check_aligned_with(&trials)?;
                let labels = trials
                    .labels()
                    .ok_or_else(|| Error::Config("calibration trials must be labeled".into()))?;
                let m = train_calibration(&scores, &labels, &durations, &CalibrationParams::default())?;
                write_calibration(&m, &model)?;
                if let Some(out) = out {
                    write_scores(&apply_calibration(&m, &scores, &durations)?, &out)?;
                }
                Ok(())
            }
        }
        Command::Fuse { scores, out } => {
            let sets = scores.iter().map(read_scores).collect::<Result<Vec<_>>>()?;
            write_scores(&fuse(&sets)?, &out)
        }
        Command::Evaluate {
            scores,
            trials,
            p_target,
        } => {
            let mut dcf = config.pipeline.dcf;
            if let Some(p) = p_target {
                dcf.p_target = p;
            }
            evaluate(&scores, &trials, &dcf)
        }
        Command::Adapt(args) => {
            if let Some(m) = args.max_rounds {
                config.pipeline.max_rounds = m;
            }
            config.validate()?;
            if args.synthetic_demo {
                adapt_demo(&config, &args)
            } else {
                adapt_real(&config, &args)
            }
        }
    }
}

fn network_config(config: &RunConfig, variant: Option<usize>) -> Result<ResUnetConfig> {
    let cfg = ResUnetConfig {
        residual_blocks: variant.unwrap_or(config.resunet.residual_blocks),
        ..config.resunet
    };
    cfg.validate()?;
    Ok(cfg)
}

/// An explicit `--k` is used as given; the configured default is clamped to
/// the number of embeddings.
fn cascade_params(config: &RunConfig, args: &ClusterArgs, n_points: usize) -> CascadeParams {
    let p = config.pipeline();
    CascadeParams {
        kmeans: resunet_sv::clustering::KMeansParams {
            k: args.k.unwrap_or(p.kmeans.k.min(n_points)),
            seed: p.seed,
            ..p.kmeans
        },
        n_clusters: args.n_clusters.unwrap_or(p.ahc_candidates[0]),
        min_count: args.min_count.unwrap_or(p.min_count),
        linkage: match args.linkage {
            Some(LinkageArg::Single) => Linkage::Single,
            Some(LinkageArg::Complete) => Linkage::Complete,
            Some(LinkageArg::Average) => Linkage::Average,
            None => p.linkage,
        },
    }
}

/// Relative audio paths are taken relative to the manifest's directory.
fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.fea"))
}

fn extract_features(manifest_path: &Path, out_dir: &Path, config: &RunConfig) -> Result<()> {
    let manifest = read_manifest(manifest_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    manifest.records().par_iter().try_for_each(|r| {
        let wave = read_wav(resolve(manifest_path, &r.path))?;
        let feats = cmn(&fbank(&wave, &config.fbank)?);
        write_features(&feats, feature_path(out_dir, &r.id))
    })?;
    log::info!("wrote {} feature files to {}", manifest.len(), out_dir.display());
    Ok(())
}

fn extract_embeddings(net: &ResUnet, manifest: &Manifest, features_dir: &Path) -> Result<EmbeddingSet> {
    let rows = manifest
        .records()
        .par_iter()
        .map(|r| net.forward(&read_features(feature_path(features_dir, &r.id))?))
        .collect::<Result<Vec<_>>>()?;
    let mut set = EmbeddingSet::new(net.config().embed_dim)?;
    for (r, v) in manifest.records().iter().zip(rows) {
        set.push(r.id.clone(), &v)?;
    }
    Ok(set)
}

fn evaluate(scores: &Path, trials: &Path, dcf: &DcfParams) -> Result<()> {
    dcf.validate()?;
    let scores = read_scores(scores)?;
    let trials = read_trials(trials)?;
    scores.check_aligned_with(&trials)?;
    let labels = trials
        .labels()
        .ok_or_else(|| Error::Config("evaluation trials must be labeled".into()))?;
    let curve = det_curve(&scores.scores(), &labels)?;
    let eer = eer_from_curve(&curve);
    println!("eer_percent {:?}", 100.0 * eer.eer);
    println!("min_dcf {:?}", min_dcf_from_curve(&curve, dcf));
    println!("p_target {:?}", dcf.p_target);
    println!("threshold {:?}", eer.threshold);
    Ok(())
}

fn print_rounds(reports: &[RoundReport]) {
    for r in reports {
        println!(
            "round {} n_clusters {} n_speakers {} eer_percent {:.4} min_dcf {:.4}",
            r.round,
            r.n_clusters,
            r.n_speakers,
            100.0 * r.eer,
            r.min_dcf
        );
    }
}

fn out_dir(config: &RunConfig, args: &AdaptArgs) -> Result<PathBuf> {
    let dir = args
        .out_dir
        .clone()
        .or_else(|| config.paths.output_dir.clone())
        .ok_or_else(|| Error::Config("adapt needs --out-dir or paths.output_dir".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn adapt_demo(config: &RunConfig, args: &AdaptArgs) -> Result<()> {
    let dir = out_dir(config, args)?;
    let params = resunet_sv::pipeline::ScenarioParams {
        seed: config.seed,
        ..config.synthetic
    };
    let pipeline = params.pipeline_config(&config.pipeline());
    let demo = run_synthetic_demo(&params, &pipeline, args.skip_stage1)?;
    if let Some(s) = &demo.stage1 {
        println!("stage1 joint_loss {:.6} -> {:.6}", s.initial_loss, s.final_loss);
    }
    let reports: Vec<RoundReport> = demo.rounds.iter().map(|o| o.report).collect();
    print_rounds(&reports);
    for (r, p) in reports.iter().zip(&demo.purity) {
        log::info!("round {} purity {p:.4}", r.round);
    }
    write_round_log(&reports, dir.join("rounds.tsv"))?;
    let head = demo.embedder.head();
    let mut state = EmbeddingSet::new(head.in_dim + 1)?;
    for (o, row) in head.weight.chunks_exact(head.in_dim).enumerate() {
        let mut v: Vec<f32> = row.iter().map(|&w| w as f32).collect();
        v.push(head.bias[o] as f32);
        state.push(format!("row{o:04}"), &v)?;
    }
    write_embeddings(&state, dir.join("head.emb"))
}

fn labeled(manifest: &Manifest) -> LabeledUtterances {
    LabeledUtterances::from_speakers(
        manifest
            .records()
            .iter()
            .filter(|r| r.labeled)
            .filter_map(|r| r.speaker.as_deref().map(|s| (r.id.as_str(), s))),
    )
}

fn adapt_real(config: &RunConfig, args: &AdaptArgs) -> Result<()> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("adapt needs paths.{key} in the config")))
    };
    let source = read_manifest(need(&config.paths.source_manifest, "source_manifest")?)?;
    let target = read_manifest(need(&config.paths.target_manifest, "target_manifest")?)?;
    let features_dir = need(&config.paths.features_dir, "features_dir")?;
    let validation = read_trials(need(&config.paths.validation_trials, "validation_trials")?)?;
    let dir = out_dir(config, args)?;

    let target_records = target.filter(|r| r.domain == Domain::Target);
    let data = AdaptationData {
        source: labeled(&source),
        target_unlabeled: target_records
            .records()
            .iter()
            .filter(|r| !r.labeled)
            .map(|r| r.id.clone())
            .collect(),
        target_labeled: labeled(&target_records),
    };
    let mut ids: Vec<String> = data.source.ids.clone();
    ids.extend(data.target_unlabeled.iter().cloned());
    ids.extend(data.target_labeled.ids.iter().cloned());
    for t in validation.trials() {
        ids.push(t.enroll.clone());
        ids.push(t.test.clone());
    }
    ids.sort();
    ids.dedup();
    let features: HashMap<String, _> = ids
        .par_iter()
        .map(|id| Ok((id.clone(), read_features(feature_path(&features_dir, id))?)))
        .collect::<Result<_>>()?;

    let cfg = network_config(config, args.variant.variant)?;
    let net = match &config.paths.checkpoint {
        Some(p) => load_checkpoint(p, &cfg)?,
        None => ResUnet::build(cfg, config.seed)?,
    };
    let pipeline = config.pipeline();
    let crop = crop_frames(&pipeline.adapt_phase, &config.fbank);
    let embedder = ResUnetEmbedder::new(net, features, crop, config.seed)?;
    let start = if args.skip_stage1 {
        embedder
    } else {
        let (e, r) = stage1_joint_adapt(&embedder, &data, &pipeline.stage1())?;
        println!("stage1 joint_loss {:.6} -> {:.6}", r.initial_loss, r.final_loss);
        e
    };
    let (adapted, rounds) = run_until_converged(&start, &data, &validation, &pipeline)?;
    let reports: Vec<RoundReport> = rounds.iter().map(|o| o.report).collect();
    print_rounds(&reports);
    write_round_log(&reports, dir.join("rounds.tsv"))?;
    log::info!("final embedding dimension {}", adapted.dim());
    save_checkpoint(&adapted.to_network(), dir.join("adapted.ckpt"))
}
