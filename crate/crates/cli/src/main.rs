//! `oarseg` command-line tool.

mod config;
mod stage;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use oarseg::features::{self, FeatureMatrix};
use oarseg::metrics::{self, EvalInputs};
use oarseg::phantom::{self, read_dataset, write_dataset};
use oarseg::pipeline::{loocv, segment, segment_features, train_organ, write_run};
use oarseg::sdae::{load_model, save_model};
use oarseg::{CaseRecord, FeatureSetId, LabelMap, SpdmRoi, Volume3D};

use config::RunConfig;
use stage::Stage;

#[derive(Parser)]
#[command(name = "oarseg", version, about = "Voxel-wise organ segmentation with stacked denoising auto-encoders")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    organ: Option<String>,
    /// classical, augmented, textural or aefv.
    #[arg(long, global = true)]
    set: Option<FeatureSetId>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent LOOCV folds.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, or output file for `features` and `evaluate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Phantom(PhantomArgs),
    /// Extract a feature matrix for the ROI voxels of one image.
    Features(FeaturesArgs),
    /// Train one organ model.
    Train(TrainArgs),
    /// Segment an image (or a saved feature matrix) with a trained model.
    Segment(SegmentArgs),
    /// Score a mask against one or more reference masks.
    Evaluate(EvaluateArgs),
    /// Leave-one-out cross-validation with per-fold outputs and summary.csv.
    Loocv(LoocvArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// PhantomSpec JSON; defaults to the config's phantom section.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Image volume to featurize.
    #[arg(long, conflicts_with = "case")]
    image: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Case id within `--data`; its SPDM is built from the other cases.
    #[arg(long, requires = "data")]
    case: Option<String>,
    /// Trained model directory supplying the SPDM and ROI.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Case ids left out of training.
    #[arg(long)]
    exclude: Vec<String>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required_unless_present = "features", conflicts_with = "features")]
    image: Option<PathBuf>,
    /// Feature matrix written by `features`.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Automatic mask.
    #[arg(long)]
    auto: PathBuf,
    /// Reference mask; give several to fuse them by majority vote.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    /// Restrict confusion counts to this mask (e.g. the ROI).
    #[arg(long)]
    domain: Option<PathBuf>,
    #[arg(long, default_value = "case")]
    case_id: String,
}

#[derive(Args)]
struct LoocvArgs {
    /// Dataset directory; the configured phantom suite is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.organ {
        cfg.organ = Some(o.clone());
    }
    if let Some(s) = cli.set {
        cfg.set = s;
    }
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli)?;
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&mut cfg, a),
        Command::Features(a) => {
            if a.data.is_some() {
                cfg.data = a.data.clone();
            }
            cmd_features(&cfg, a)
        }
        Command::Train(a) => {
            if a.data.is_some() {
                cfg.data = a.data.clone();
            }
            cmd_train(&cfg, a)
        }
        Command::Segment(a) => cmd_segment(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Loocv(a) => {
            if a.data.is_some() {
                cfg.data = a.data;
            }
            cmd_loocv(&cfg)
        }
    }
}

fn out_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn organ(cfg: &RunConfig) -> Result<&str> {
    cfg.organ.as_deref().ok_or_else(|| anyhow!("--organ is required"))
}

fn load_cases(cfg: &RunConfig) -> Result<Vec<CaseRecord>> {
    match &cfg.data {
        Some(dir) => read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display())),
        None => {
            info!("no --data given, generating the configured phantom suite");
            Ok(phantom::generate(&cfg.phantom)?)
        }
    }
}

fn cmd_phantom(cfg: &mut RunConfig, a: PhantomArgs) -> Result<()> {
    if let Some(p) = &a.spec {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.phantom = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    let out = out_path(cfg)?;
    let cases = phantom::generate(&cfg.phantom)?;
    let stage = Stage::new(out)?;
    write_dataset(&cases, Some(&cfg.phantom), stage.path())?;
    stage.commit()?;
    println!("wrote {} cases to {}", cases.len(), out.display());
    Ok(())
}

fn read_atlas(dir: &Path, organ: &str) -> Result<SpdmRoi> {
    Ok(SpdmRoi {
        organ_id: organ.to_string(),
        spdm: Volume3D::load(dir.join("spdm.vol"))?,
        roi: LabelMap::load(dir.join("roi.lbl"))?,
    })
}

fn cmd_features(cfg: &RunConfig, a: FeaturesArgs) -> Result<()> {
    let out = out_path(cfg)?;
    let (image, atlas) = match (&a.image, &a.case, &a.model) {
        (Some(img), _, Some(model)) => {
            let m = load_model(model.join("model.sdae.json"))?;
            (Volume3D::load(img)?, read_atlas(model, &m.organ_id)?)
        }
        (None, Some(case_id), model) => {
            let cases = load_cases(cfg)?;
            let held = cases
                .iter()
                .position(|c| &c.case_id == case_id)
                .ok_or_else(|| anyhow!("case {case_id} not in dataset"))?;
            let atlas = match model {
                Some(m) => read_atlas(m, &load_model(m.join("model.sdae.json"))?.organ_id)?,
                None => {
                    let organ = organ(cfg)?;
                    let labels = cases
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != held)
                        .map(|(_, c)| c.label(organ))
                        .collect::<oarseg::Result<Vec<_>>>()?;
                    SpdmRoi::from_labels(
                        organ,
                        &labels,
                        cfg.pipeline.spdm_sigma,
                        cfg.pipeline.roi_threshold,
                    )?
                }
            };
            (cases[held].image.clone(), atlas)
        }
        _ => bail!("give --image with --model, or --data with --case"),
    };
    let fm = features::extract(cfg.set, &image, &atlas.spdm, &atlas.roi)?;
    let name = out
        .file_name()
        .ok_or_else(|| anyhow!("--out must name a file"))?;
    let stage = Stage::for_file(out)?;
    fm.save(stage.path().join(name))?;
    stage.commit()?;
    println!("{} rows x {} features ({})", fm.n_rows(), fm.n_cols(), fm.set_id);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let out = out_path(cfg)?;
    let organ = organ(cfg)?;
    let cases = load_cases(cfg)?;
    for id in &a.exclude {
        if !cases.iter().any(|c| &c.case_id == id) {
            bail!("excluded case {id} not in dataset");
        }
    }
    let train: Vec<&CaseRecord> = cases.iter().filter(|c| !a.exclude.contains(&c.case_id)).collect();
    let trained = train_organ(&train, organ, cfg.set, &cfg.pipeline)?;
    let stage = Stage::new(out)?;
    save_model(&trained.model, stage.path().join("model.sdae.json"))?;
    trained.spdm_roi.spdm.save(stage.path().join("spdm.vol"))?;
    trained.spdm_roi.roi.save(stage.path().join("roi.lbl"))?;
    fs::write(stage.path().join("config.json"), cfg.to_json()?)?;
    stage.commit()?;
    let log = &trained.model.training_log;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "trained {organ}/{} on {} rows; final fine-tune loss {:.6}",
        cfg.set,
        log.n_train_rows,
        log.finetune.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_segment(cfg: &RunConfig, a: SegmentArgs) -> Result<()> {
    let out = out_path(cfg)?;
    let model = load_model(a.model.join("model.sdae.json"))?;
    let atlas = read_atlas(&a.model, &model.organ_id)?;
    let thr = cfg.pipeline.class_threshold;
    let result = match (&a.image, &a.features) {
        (Some(img), _) => segment(&model, &atlas, &Volume3D::load(img)?, thr)?,
        (None, Some(f)) => segment_features(&model, &FeatureMatrix::load(f)?, &atlas.roi, thr)?,
        (None, None) => bail!("give --image or --features"),
    };
    let stage = Stage::new(out)?;
    result.mask_pre.save(stage.path().join("mask_pre.lbl"))?;
    result.mask_post.save(stage.path().join("mask_post.lbl"))?;
    let mut csv = String::from("voxel,probability\n");
    for (v, p) in &result.raw_proba {
        csv.push_str(&format!("{v},{p}\n"));
    }
    fs::write(stage.path().join("proba.csv"), csv)?;
    stage.commit()?;
    println!(
        "{}: {} voxels before, {} after post-processing",
        result.organ_id,
        result.mask_pre.count(),
        result.mask_post.count()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, a: EvaluateArgs) -> Result<()> {
    let auto = LabelMap::load(&a.auto)?;
    let refs = a
        .refs
        .iter()
        .map(LabelMap::load)
        .collect::<oarseg::Result<Vec<_>>>()?;
    let reference = if refs.len() == 1 {
        refs.into_iter().next().unwrap()
    } else {
        metrics::majority_vote(&refs.iter().collect::<Vec<_>>())?
    };
    let domain = a.domain.as_ref().map(LabelMap::load).transpose()?;
    let report = metrics::evaluate(EvalInputs {
        case_id: &a.case_id,
        organ_id: cfg.organ.as_deref().unwrap_or(""),
        auto: &auto,
        auto_pre: None,
        reference: &reference,
        domain: domain.as_ref(),
        thresholds: cfg.pipeline.roc_thresholds,
    })?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &cfg.out {
        let name = out.file_name().ok_or_else(|| anyhow!("--out must name a file"))?;
        let stage = Stage::for_file(out)?;
        fs::write(stage.path().join(name), &json)?;
        stage.commit()?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_loocv(cfg: &RunConfig) -> Result<()> {
    let out = out_path(cfg)?;
    let cases = load_cases(cfg)?;
    let organs: Vec<String> = match &cfg.organ {
        Some(o) => vec![o.clone()],
        None => cases
            .first()
            .map(|c| c.labels.keys().cloned().collect())
            .unwrap_or_default(),
    };
    let stage = Stage::new(out)?;
    let runs = stage.path().join("runs");
    let mut rows = Vec::new();
    for organ in &organs {
        let outcomes = loocv(&cases, organ, cfg.set, &cfg.pipeline, cfg.jobs.max(1))?;
        write_run(&runs, organ, &outcomes)?;
        let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
        let summary = metrics::summary_rows(organ, cfg.set.as_str(), &reports);
        if let Some(d) = summary.iter().find(|r| r.metric == "dsc") {
            println!("{organ}/{}: dsc {:.4} (± {:.4}) over {} folds", cfg.set, d.mean, d.sd, reports.len());
        }
        rows.extend(summary);
    }
    let file = fs::File::create(stage.path().join("summary.csv"))?;
    metrics::write_summary_csv(file, &rows)?;
    fs::write(stage.path().join("config.json"), cfg.to_json()?)?;
    stage.commit()?;
    Ok(())
}
