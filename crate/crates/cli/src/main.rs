use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use semvox::check;
use semvox::eval::{metrics, EvalReport, PcaBasis, SampleMetrics};
use semvox::fusion::{coverage_mask, fuse_ground_truth, incomplete_target, splat_view, ViewObservation, FUSION_EPS};
use semvox::model::{
    masked_cosine_similarity, train_completion, train_student, Checkpoint, CompletionNet, ModelKind, TrainConfig,
    TrainReport, TrainingSample,
};
use semvox::synth::{generate_dataset, scan_from_depth, view_stem, write_views, Manifest, Split, SynthConfig};
use semvox::volume::MaskVolume;
use semvox::vxl;
use semvox::{Error, Result};

/// Semantic voxel completion toolkit.
#[derive(Parser)]
#[command(name = "semvox", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural dataset with a manifest.
    Synth(SynthArgs),
    /// Fuse saved teacher views into a feature volume and validity mask.
    Fuse(FuseArgs),
    /// Train the feature student by distillation.
    DistillTrain(TrainArgs),
    /// Train the completion network.
    CompleteTrain(CompleteTrainArgs),
    /// Run a completion checkpoint on partial scans.
    Complete(CompleteArgs),
    /// Score predicted volumes against ground truth.
    Eval(EvalArgs),
    /// Color feature volumes with a shared PCA basis.
    VizPca(VizArgs),
    /// Run the oracle and gradient suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON synth config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write every rendered view under `<id>/views/`.
    #[arg(long)]
    save_views: bool,
}

#[derive(Args)]
struct FuseArgs {
    /// Directory holding `view_NN.json`, `view_NN_depth.vxl`, `view_NN_feat.vxl`.
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also scan from this view and write `partial.vxl` and `dino_inc.vxl`.
    #[arg(long)]
    scan_view: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// Write the training report JSON here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompleteTrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Student checkpoint to initialize from.
    #[arg(long)]
    student: Option<PathBuf>,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; every entry's partial scan is completed.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    data: Option<PathBuf>,
    /// A single partial scan.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (with `--data`) or file (with `--input`).
    #[arg(long)]
    out: PathBuf,
    /// Restrict to one split: train, val-seen or val-unseen.
    #[arg(long, requires = "data")]
    split: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted volumes.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset directory with a manifest, or a directory of ground-truth volumes.
    #[arg(long)]
    gt: PathBuf,
    /// Print CSV instead of JSON.
    #[arg(long)]
    csv: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VizArgs {
    /// Feature volume; repeat to fit a shared basis.
    #[arg(long = "feat", required = true)]
    feats: Vec<PathBuf>,
    /// Mask for each feature volume, in the same order.
    #[arg(long = "mask", required = true)]
    masks: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Print the results as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn read_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn synth(a: SynthArgs) -> Result<Value> {
    let cfg = match &a.config {
        Some(p) => read_synth_config(p)?,
        None => SynthConfig::default(),
    };
    let root = a.out.clone();
    let manifest = generate_dataset(&a.out, a.n, a.seed, &cfg, |_, entry, record| {
        if a.save_views {
            write_views(&root.join(&entry.id).join("views"), record)?;
        }
        Ok(())
    })?;
    let counts: serde_json::Map<String, Value> = Split::ALL
        .iter()
        .map(|&s| (s.as_str().to_string(), json!(manifest.split(s).count())))
        .collect();
    Ok(json!({
        "out": a.out,
        "samples": manifest.entries.len(),
        "seed": a.seed,
        "splits": counts,
        "config": cfg,
    }))
}

fn fuse(a: FuseArgs) -> Result<Value> {
    let mut views = Vec::new();
    while a.views.join(format!("{}.json", view_stem(views.len()))).exists() {
        views.push(ViewObservation::load(&a.views, &view_stem(views.len()))?);
    }
    if views.is_empty() {
        return Err(Error::Empty(format!("no view_NN files in {}", a.views.display())));
    }
    let gt = vxl::read_tsdf(&a.gt)?;
    let (fused, weights) = fuse_ground_truth(&views, &gt, FUSION_EPS)?;
    let mask = MaskVolume::from_bools(*gt.spec(), weights.iter().map(|&w| w > 0.0))?;
    mkdir(&a.out)?;
    vxl::write_features(a.out.join("dino_gt.vxl"), &fused)?;
    vxl::write_mask(a.out.join("mask.vxl"), &mask)?;
    let mut out = json!({
        "views": views.len(),
        "mask_voxels": mask.count_set(),
        "written": ["dino_gt.vxl", "mask.vxl"],
    });
    if let Some(k) = a.scan_view {
        let scan = views
            .get(k)
            .ok_or_else(|| Error::Config(format!("scan view {k} of {} views", views.len())))?;
        let partial = scan_from_depth(&scan.depth, scan.width, scan.height, &scan.camera, gt.spec())?;
        let cov = coverage_mask(&splat_view(scan, gt.spec()));
        vxl::write_tsdf(a.out.join("partial.vxl"), &partial)?;
        vxl::write_features(a.out.join("dino_inc.vxl"), &incomplete_target(&fused, &cov)?)?;
        out["coverage_voxels"] = json!(cov.count_set());
        out["written"] = json!(["dino_gt.vxl", "mask.vxl", "partial.vxl", "dino_inc.vxl"]);
    }
    Ok(out)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_json(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    Ok(cfg)
}

fn progress(kind: &str) -> impl FnMut(&semvox::model::EpochLog) + '_ {
    move |log| {
        eprintln!(
            "{}",
            json!({"event": "epoch", "model": kind, "epoch": log.epoch, "loss": log.loss})
        )
    }
}

fn report_json(report: &TrainReport, cfg: &TrainConfig) -> Value {
    json!({
        "config": cfg,
        "steps": report.steps,
        "first_loss": report.first_loss(),
        "last_loss": report.last_loss(),
        "empty_support_samples": report.empty_support_samples,
        "epochs": report.epochs,
    })
}

fn finish_training(a: &TrainArgs, ck: &Checkpoint, out: Value) -> Result<Value> {
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    ck.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &out)?;
    }
    Ok(out)
}

fn distill_train(a: TrainArgs) -> Result<Value> {
    let cfg = train_config(&a)?;
    let manifest = Manifest::load(&a.data)?;
    let samples = manifest.load_all()?;
    let (net, store, report) = train_student(&samples, &cfg, progress("student"))?;
    let mut cosine = serde_json::Map::new();
    for split in Split::ALL {
        let vals = samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| Ok(masked_cosine_similarity(&net.predict(&store, &s.partial)?.0, s)))
            .collect::<Result<Vec<_>>>()?;
        let vals: Vec<f64> = vals.into_iter().flatten().collect();
        if !vals.is_empty() {
            cosine.insert(
                split.as_str().into(),
                json!(vals.iter().sum::<f64>() / vals.len() as f64),
            );
        }
    }
    let truncation = samples[0].gt.spec().truncation;
    let ck = Checkpoint::from_store(ModelKind::Student, truncation, &cfg, &store);
    let mut out = report_json(&report, &cfg);
    out["masked_cosine"] = Value::Object(cosine);
    finish_training(&a, &ck, out)
}

fn complete_train(a: CompleteTrainArgs) -> Result<Value> {
    let cfg = train_config(&a.train)?;
    let manifest = Manifest::load(&a.train.data)?;
    let samples = manifest.load_all()?;
    let student = a.student.as_ref().map(Checkpoint::load).transpose()?;
    let (net, store, report) = train_completion(&samples, &cfg, student.as_ref(), progress("completion"))?;
    let mut iou = serde_json::Map::new();
    for split in Split::ALL {
        let rows: Vec<&TrainingSample> = samples.iter().filter(|s| s.split == split).collect();
        if rows.is_empty() {
            continue;
        }
        let (mut model, mut copy) = (0.0, 0.0);
        for s in &rows {
            model += semvox::eval::iou(&net.predict(&store, &s.partial)?, &s.gt)?;
            copy += semvox::eval::iou(&s.partial, &s.gt)?;
        }
        let n = rows.len() as f64;
        iou.insert(
            split.as_str().into(),
            json!({"model": model / n, "copy_input": copy / n}),
        );
    }
    let truncation = samples[0].gt.spec().truncation;
    let ck = Checkpoint::from_store(ModelKind::Completion, truncation, &cfg, &store);
    let mut out = report_json(&report, &cfg);
    out["iou"] = Value::Object(iou);
    finish_training(&a.train, &ck, out)
}

fn load_completion(path: &Path) -> Result<(CompletionNet, semvox::diff::ParamStore)> {
    let ck = Checkpoint::load(path)?;
    if ck.index.kind != ModelKind::Completion {
        return Err(Error::Checkpoint(format!(
            "{} is not a completion checkpoint",
            path.display()
        )));
    }
    let (net, mut store, _) = semvox::model::train::build_completion(&ck.index.config, ck.index.truncation, None)?;
    ck.apply_all(&mut store)?;
    Ok((net, store))
}

fn complete(a: CompleteArgs) -> Result<Value> {
    let (net, store) = load_completion(&a.checkpoint)?;
    if let Some(input) = &a.input {
        let partial = vxl::read_tsdf(input)?;
        let pred = net.predict(&store, &partial)?;
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            mkdir(dir)?;
        }
        vxl::write_tsdf(&a.out, &pred)?;
        return Ok(json!({"written": [a.out]}));
    }
    let data = a.data.as_ref().expect("clap requires --data or --input");
    let manifest = Manifest::load(data)?;
    let split = a.split.as_deref().map(parse_split).transpose()?;
    mkdir(&a.out)?;
    let mut ids = Vec::new();
    for entry in manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
        let partial = vxl::read_tsdf(manifest.path(&entry.files.partial))?;
        vxl::write_tsdf(a.out.join(format!("{}.vxl", entry.id)), &net.predict(&store, &partial)?)?;
        ids.push(entry.id.clone());
    }
    Ok(json!({"out": a.out, "completed": ids.len(), "ids": ids}))
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown split {s:?}; expected train, val-seen or val-unseen")))
}

fn eval(a: EvalArgs) -> Result<(Value, Option<String>)> {
    let mut rows = Vec::new();
    if a.gt.join(semvox::synth::dataset::MANIFEST_FILE).exists() {
        let manifest = Manifest::load(&a.gt)?;
        for e in &manifest.entries {
            let pred = vxl::read_tsdf(a.pred.join(format!("{}.vxl", e.id)))?;
            let gt = vxl::read_tsdf(manifest.path(&e.files.gt))?;
            rows.push(SampleMetrics {
                id: e.id.clone(),
                split: Some(e.split),
                category: Some(e.category.name().to_string()),
                metrics: metrics(&pred, &gt)?,
            });
        }
    } else {
        let mut names: Vec<String> = fs::read_dir(&a.gt)
            .map_err(|e| io_err(&a.gt, e))?
            .filter_map(|d| d.ok())
            .map(|d| d.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".vxl"))
            .collect();
        names.sort();
        for name in names {
            let pred = vxl::read_tsdf(a.pred.join(&name))?;
            let gt = vxl::read_tsdf(a.gt.join(&name))?;
            rows.push(SampleMetrics {
                id: name.trim_end_matches(".vxl").to_string(),
                split: None,
                category: None,
                metrics: metrics(&pred, &gt)?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("no ground-truth volumes in {}", a.gt.display())));
    }
    let report = EvalReport::new(rows, json!({"pred": a.pred, "gt": a.gt}));
    report.validate()?;
    let value = serde_json::to_value(&report)?;
    if let Some(p) = &a.out {
        write_json(p, &value)?;
    }
    let csv = a.csv.then(|| report.to_csv());
    Ok((value, csv))
}

fn viz_pca(a: VizArgs) -> Result<Value> {
    if a.feats.len() != a.masks.len() {
        return Err(Error::Config(format!(
            "{} --feat but {} --mask",
            a.feats.len(),
            a.masks.len()
        )));
    }
    let feats = a.feats.iter().map(vxl::read_features).collect::<Result<Vec<_>>>()?;
    let masks = a.masks.iter().map(vxl::read_mask).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = feats.iter().zip(&masks).collect();
    let basis = PcaBasis::fit(&pairs)?;
    mkdir(&a.out)?;
    let mut written = Vec::new();
    for (k, (f, m)) in pairs.iter().enumerate() {
        let path = a.out.join(format!("rgb_{k:02}.vxl"));
        vxl::write_features(&path, &basis.colorize(f, m)?)?;
        written.push(path);
    }
    let basis_json = serde_json::to_value(&basis)?;
    write_json(&a.out.join("pca_basis.json"), &basis_json)?;
    Ok(json!({"written": written, "components": basis.components.len()}))
}

fn run_check(a: CheckArgs) -> Result<String> {
    let results = check::run_all();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} {}", r.criterion, r.name))
        .collect();
    let text = if a.json {
        serde_json::to_string_pretty(&results)?
    } else {
        check::format_table(&results)
    };
    println!("{text}");
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(Error::Config(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            results.len(),
            failed.join("; ")
        )))
    }
}

fn envelope(kind: &str, message: &str) -> String {
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", envelope("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let is_check = matches!(cli.cmd, Cmd::Check(_));
    let result = match cli.cmd {
        Cmd::Synth(a) => synth(a).map(Some),
        Cmd::Fuse(a) => fuse(a).map(Some),
        Cmd::DistillTrain(a) => distill_train(a).map(Some),
        Cmd::CompleteTrain(a) => complete_train(a).map(Some),
        Cmd::Complete(a) => complete(a).map(Some),
        Cmd::Eval(a) => eval(a).map(|(v, csv)| match csv {
            Some(text) => {
                print!("{text}");
                None
            }
            None => Some(v),
        }),
        Cmd::VizPca(a) => viz_pca(a).map(Some),
        Cmd::Check(a) => run_check(a).map(|_| None),
    };
    match result {
        Ok(Some(v)) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if is_check { "check_failed" } else { e.kind() };
            eprintln!("{}", envelope(kind, &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
