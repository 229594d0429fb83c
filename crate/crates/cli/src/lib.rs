//! `multifruit` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use multifruit::dataset::{
    generate_synthetic, normalize_to_tensor, preprocess, scan_dataset, split_manifest, DatasetManifest, Label, Split, SyntheticParams,
};
use multifruit::image::{read_image, Image};
use multifruit::nn::{load_checkpoint, save_checkpoint, Checkpoint, Model};
use multifruit::silhouette::{extract_silhouette, SilhouetteParams};
use multifruit::tensor::{Dtype, Scalar, Tensor};
use multifruit::train::{compare_report, evaluate, train, ConfigFile, EvalReport, Precision, TrainConfig};
use multifruit::Error;

#[derive(Debug, Parser)]
#[command(name = "multifruit", version, about = "Healthy/defective fruit classification from RGB + silhouette images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fruit corpus.
    Synth(SynthArgs),
    /// Extract silhouettes and drop images the refinement filter rejects.
    Preprocess(PreprocessArgs),
    /// Assign stratified train/val/test splits.
    Split(SplitArgs),
    /// Train a model and save the best-epoch checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Classify a single image.
    Predict(PredictArgs),
    /// Merge evaluation reports into a comparison table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    defect_contrast: Option<f64>,
    #[arg(long)]
    corrupt_frac: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Dataset root with healthy/ and defective/, or a directory holding manifest.jsonl.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Refinement report (JSON Lines); defaults to OUT/refinement.jsonl.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    /// Write here instead of overwriting the input manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    logs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    sil: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    /// Multi-input passes when its mean accuracy >= single - tolerance.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 2,
        Error::NumericFailure(_) => 4,
        _ => 3,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> multifruit::Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => {
            let text = fs::read_to_string(&a.config)?;
            let config = ConfigFile::parse(&text)?.resolve()?;
            match config.precision {
                Precision::F32 => train_cmd::<f32>(&a, &config),
                Precision::F64 => train_cmd::<f64>(&a, &config),
            }
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint(&a.ckpt)?;
            match checkpoint_dtype(&ckpt)? {
                Dtype::F32 => eval_cmd::<f32>(&a, &ckpt),
                Dtype::F64 => eval_cmd::<f64>(&a, &ckpt),
            }
        }
        Command::Predict(a) => {
            let ckpt = load_checkpoint(&a.ckpt)?;
            match checkpoint_dtype(&ckpt)? {
                Dtype::F32 => predict_cmd::<f32>(&a, &ckpt),
                Dtype::F64 => predict_cmd::<f64>(&a, &ckpt),
            }
        }
        Command::Compare(a) => compare_cmd(a),
    }
}

fn synth(a: SynthArgs) -> multifruit::Result<()> {
    let mut p = SyntheticParams { per_class: a.per_class, ..Default::default() };
    if let Some(c) = a.defect_contrast {
        p.defect_contrast = c;
    }
    if let Some(f) = a.corrupt_frac {
        p.corrupt_frac = f;
    }
    if let Some(s) = a.size {
        p.image_size = s;
    }
    let corpus = generate_synthetic(&p, a.seed, &a.out)?;
    let bad = corpus.samples.iter().filter(|s| s.corruption.is_some()).count();
    println!(
        "wrote {} images ({} per class, {bad} corrupted) to {}",
        corpus.samples.len(),
        a.per_class,
        a.out.display()
    );
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs) -> multifruit::Result<()> {
    let existing = a.input.join("manifest.jsonl");
    let manifest = if existing.is_file() { DatasetManifest::read(&existing)? } else { scan_dataset(&a.input)? };
    fs::create_dir_all(&a.out)?;
    let params = SilhouetteParams::default();
    let done = preprocess(&manifest, &a.out, &params)?;
    let report_path = a.report.unwrap_or_else(|| a.out.join("refinement.jsonl"));
    fs::write(&report_path, done.reports_jsonl(&a.input)?)?;
    done.manifest.write(&a.out.join("manifest.jsonl"))?;
    let mut rejected = [0usize; 2];
    for (r, rec) in done.reports.iter().zip(&manifest.records) {
        if !r.report.accepted() {
            rejected[rec.label.index()] += 1;
        }
    }
    println!(
        "accepted {} of {} images (rejected: {} {}, {} {}); report {}",
        done.manifest.len(),
        manifest.len(),
        rejected[0],
        Label::Healthy,
        rejected[1],
        Label::Defective,
        report_path.display()
    );
    Ok(())
}

fn split_cmd(a: SplitArgs) -> multifruit::Result<()> {
    let ratios: [f64; 3] = a.ratios.as_slice().try_into().map_err(|_| Error::InvalidArgument("--ratios needs 3 values".into()))?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split = split_manifest(&manifest, ratios, a.seed)?;
    let out = a.out.unwrap_or(a.manifest);
    split.write(&out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        let c = split.class_counts(Some(s));
        println!("{:<5} healthy {:>6}  defective {:>6}", s.name(), c[0], c[1]);
    }
    Ok(())
}

fn checkpoint_dtype(ckpt: &Checkpoint) -> multifruit::Result<Dtype> {
    ckpt.tensors
        .first()
        .map(|t| t.data.dtype())
        .ok_or_else(|| Error::Format("checkpoint holds no tensors".into()))
}

fn train_cmd<T: Scalar>(a: &TrainArgs, config: &TrainConfig) -> multifruit::Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let mut model = config.build_model::<T>()?;
    let hash = config.hash();
    let mut log_file = a.logs.as_ref().map(fs::File::create).transpose()?;
    let mut write_err: Option<std::io::Error> = None;
    let mut on_epoch = |l: &multifruit::train::EpochLog| {
        println!(
            "epoch {:>3}/{}  loss {:.5}  train_acc {:.4}  val_acc {:.4}",
            l.epoch, config.epochs, l.train_loss, l.train_accuracy, l.val_accuracy
        );
        if let Some(f) = log_file.as_mut() {
            let mut line = serde_json::to_value(l).expect("log serialises");
            line["config_hash"] = hash.clone().into();
            if let Err(e) = writeln!(f, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    };
    let outcome = train(&mut model, &manifest, config, &mut on_epoch)?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&model, &outcome.best.meta, &a.out)?;
    println!(
        "best epoch {} (val_acc {:.4}) saved to {}",
        outcome.best_epoch,
        outcome.best.meta.val_accuracy,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd<T: Scalar>(a: &EvalArgs, ckpt: &Checkpoint) -> multifruit::Result<()> {
    let model = Model::<T>::from_checkpoint(ckpt)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let (cm, _) = evaluate(&model, &manifest, a.split)?;
    let spec = model.spec();
    let mut report = EvalReport::new(spec.arch, spec.backbone, a.split.name(), cm)?;
    report.config = ckpt.meta.config.clone();
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.json {
        fs::write(p, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn to_batch<T: Scalar>(image: Image, size: usize) -> multifruit::Result<Tensor<T>> {
    let image = if (image.width(), image.height()) == (size, size) {
        image
    } else {
        match image {
            Image::Rgb(i) => Image::Rgb(i.resize(size, size)?),
            Image::Gray(g) => Image::Gray(g.resize(size, size)?),
        }
    };
    let c = image.channels();
    normalize_to_tensor::<T>(&image).reshape(&[1, c, size, size])
}

fn predict_cmd<T: Scalar>(a: &PredictArgs, ckpt: &Checkpoint) -> multifruit::Result<()> {
    let model = Model::<T>::from_checkpoint(ckpt)?;
    let size = model.spec().image_size;
    let rgb = read_image(&a.rgb)?.into_rgb();
    let rgb_t = to_batch::<T>(Image::Rgb(rgb.clone()), size)?;
    let (sil_t, source, refinement) = match (&a.sil, model.is_multi_input()) {
        (_, false) => (None, "none", None),
        (Some(p), true) => {
            let g = read_image(p)?.into_gray()?;
            (Some(to_batch::<T>(Image::Gray(g), size)?), "file", None)
        }
        (None, true) => {
            let e = extract_silhouette(&rgb, &SilhouetteParams::default())?;
            let t = to_batch::<T>(Image::Gray(e.silhouette), size)?;
            (Some(t), "auto", Some(e.report))
        }
    };
    let logits = model.predict_logits(&rgb_t, sil_t.as_ref())?;
    let l: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let probs = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    let label = Label::from_index(multifruit::train::predict_class(&l)).expect("two classes");
    let mut out = serde_json::json!({
        "label": label.name(),
        "probabilities": {"healthy": probs[0], "defective": probs[1]},
        "silhouette": source,
    });
    if let Some(r) = refinement {
        out["refinement"] = serde_json::to_value(r)?;
    }
    println!("{out}");
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> multifruit::Result<()> {
    let mut rows = Vec::new();
    for p in &a.results {
        let text = fs::read_to_string(p)?;
        let r: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::DataInvalid(format!("{}: not an evaluation report: {e}", p.display())))?;
        rows.push((r.arch, r.backbone, r.metrics()));
    }
    let report = compare_report(&rows, a.tolerance)?;
    if let Some(p) = &a.json {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    print!("{}", report.render_text());
    Ok(())
}
