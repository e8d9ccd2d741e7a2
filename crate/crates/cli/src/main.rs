use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prosospeaker::audio::{degrade, load_wav, write_wav_pcm16, DegradationProfile, ProfileLabel};
use prosospeaker::classifier::{Grid, SmoParams};
use prosospeaker::dataset::{parse_manifest, Corpus, Partition, Scenario};
use prosospeaker::embeddings::{load_weights, WeightArchive};
use prosospeaker::features::FeatureSlice;
use prosospeaker::pipeline::{
    ablate, calibrate_prosody, correlate, evaluate_model, extract_corpus, render_report, seeded_weights, train_model,
    worker_count, write_ablation, write_correlation, write_evaluation, Extractor, FeatureStore, FeatureTable,
    ModelFile, WeightPreset,
};
use prosospeaker::synth::make_synthetic_corpus;

const SPEAKER_FILE: &str = "speaker.pskt";
const PROSODY_FILE: &str = "prosody.pskt";

/// Synthetic speech detection from speaker and prosody embeddings.
#[derive(Parser)]
#[command(name = "prosospeaker", version)]
struct Cli {
    /// Worker threads for extraction (PROSOSPEAK_WORKERS takes precedence).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded speaker and prosody weight archives.
    Init(InitArgs),
    /// Compute and store feature vectors for every manifest entry.
    Extract(ExtractArgs),
    /// Grid-search an SVM on the train and dev partitions.
    Train(TrainArgs),
    /// Score the test partition and write metrics, ROC and attribution.
    Eval(EvalArgs),
    /// Train and evaluate prosody-only, speaker-only and combined models.
    Ablate(AblateArgs),
    /// Pearson correlation between feature dimensions.
    Correlate(CorrelateArgs),
    /// Apply a compression stand-in to one WAV file.
    Degrade(DegradeArgs),
    /// Generate the procedural corpus with its manifest.
    SynthCorpus(SynthArgs),
    /// Summarize every JSON report under a directory as Markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Directory that receives speaker.pskt and prosody.pskt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Encoder sizes: full, compact or desk.
    #[arg(long, default_value = "desk")]
    preset: WeightPreset,
    /// Measure prosody batch-norm statistics on this manifest's train partition.
    #[arg(long)]
    calibrate: Option<PathBuf>,
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long)]
    speaker: PathBuf,
    #[arg(long)]
    prosody: PathBuf,
}

#[derive(Args)]
struct StoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature store directory.
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "none")]
    profile: ProfileLabel,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    weights: WeightArgs,
    /// Only this partition.
    #[arg(long)]
    partition: Option<Partition>,
    /// Recompute files that are already stored.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// `default` or key=value pairs, e.g. `C=1,kernel=rbf,gamma=scaled`.
    #[arg(long, default_value = "default")]
    grid: String,
    /// combined, speaker or prosody.
    #[arg(long, default_value = "combined")]
    slice: FeatureSlice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    model: PathBuf,
    /// ALL, TTS or VC.
    #[arg(long, default_value = "ALL")]
    kinds: Scenario,
    /// Weights for extracting test files missing from the store.
    #[arg(long, requires = "prosody")]
    speaker: Option<PathBuf>,
    #[arg(long, requires = "speaker")]
    prosody: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Only this partition.
    #[arg(long)]
    partition: Option<Partition>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    profile: ProfileLabel,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Utterances per class.
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Write the Markdown here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Per-item failures are reported but do not abort the command.
enum Outcome {
    Clean,
    PartialFailure,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let workers = worker_count(cli.workers);
    match run(cli.command, workers) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::PartialFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, workers: usize) -> Result<Outcome> {
    match command {
        Command::Init(a) => init(a, workers),
        Command::Extract(a) => extract(a, workers),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a, workers),
        Command::Ablate(a) => ablation(a),
        Command::Correlate(a) => correlation(a),
        Command::Degrade(a) => degrade_file(a),
        Command::SynthCorpus(a) => synth(a),
        Command::Report(a) => report(a),
    }
}

fn manifest(path: &Path) -> Result<Corpus> {
    parse_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn weights(path: &Path) -> Result<WeightArchive> {
    load_weights(path).with_context(|| format!("loading weights {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn init(a: InitArgs, workers: usize) -> Result<Outcome> {
    let (speaker, mut prosody) = seeded_weights(a.seed, a.preset)?;
    if let Some(path) = &a.calibrate {
        let train = manifest(path)?.subset(Partition::Train)?;
        prosody = calibrate_prosody(&prosody, &train, workers)?;
        log::info!("calibrated prosody batch norm on {} recordings", train.len());
    }
    create_dir(&a.out)?;
    speaker.save(a.out.join(SPEAKER_FILE))?;
    prosody.save(a.out.join(PROSODY_FILE))?;
    println!("{}", a.out.join(SPEAKER_FILE).display());
    println!("{}", a.out.join(PROSODY_FILE).display());
    Ok(Outcome::Clean)
}

fn extract(a: ExtractArgs, workers: usize) -> Result<Outcome> {
    let mut corpus = manifest(&a.store.manifest)?;
    if let Some(p) = a.partition {
        corpus = corpus.subset(p)?;
    }
    let extractor = Extractor::new(&weights(&a.weights.speaker)?, &weights(&a.weights.prosody)?)?;
    let store = FeatureStore::new(&a.store.features);
    let summary = extract_corpus(&extractor, &corpus, &store, a.store.profile, a.force, workers)?;
    println!(
        "computed {}, skipped {}, failed {}",
        summary.computed,
        summary.skipped,
        summary.failures.len()
    );
    for (path, err) in &summary.failures {
        eprintln!("failed: {path}: {err}");
    }
    Ok(if summary.is_success() {
        Outcome::Clean
    } else {
        Outcome::PartialFailure
    })
}

fn load_table(s: &StoreArgs) -> Result<(Corpus, FeatureTable)> {
    let corpus = manifest(&s.manifest)?;
    let table = FeatureTable::load(&corpus, &FeatureStore::new(&s.features), s.profile)
        .context("loading stored features (run `extract` first)")?;
    Ok((corpus, table))
}

fn train(a: TrainArgs) -> Result<Outcome> {
    let (_, table) = load_table(&a.store)?;
    let grid = Grid::parse(&a.grid)?;
    let model = train_model(
        &table.partition(Partition::Train)?,
        &table.partition(Partition::Dev)?,
        a.slice,
        &grid,
        &SmoParams::default(),
    )?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    let best = &model.grid[model.best_index];
    println!(
        "best C={} gamma={} kernel={} dev balanced accuracy {:.4} ({} configurations)",
        best.config.c,
        best.config.gamma_mode.as_str(),
        best.config.kernel.as_str(),
        best.dev_balanced_accuracy.unwrap_or(f64::NAN),
        model.grid.len()
    );
    Ok(Outcome::Clean)
}

fn eval(a: EvalArgs, workers: usize) -> Result<Outcome> {
    let model = ModelFile::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let test = manifest(&a.store.manifest)?.subset(Partition::Test)?;
    let store = FeatureStore::new(&a.store.features);
    if let (Some(s), Some(p)) = (&a.speaker, &a.prosody) {
        let extractor = Extractor::new(&weights(s)?, &weights(p)?)?;
        let summary = extract_corpus(&extractor, &test, &store, a.store.profile, false, workers)?;
        if !summary.is_success() {
            for (path, err) in &summary.failures {
                eprintln!("failed: {path}: {err}");
            }
            bail!("{} test file(s) could not be extracted", summary.failures.len());
        }
    }
    let table = FeatureTable::load(&test, &store, a.store.profile)
        .context("loading test features (pass --speaker and --prosody to extract them)")?;
    let ev = evaluate_model(&model, &table, a.kinds, a.store.profile)?;
    create_dir(&a.out)?;
    write_evaluation(&ev, &a.out, a.svg)?;
    println!(
        "{} / {}: auc {:.4} eer {:.4} balanced accuracy {:.4}",
        ev.summary.scenario, ev.summary.profile, ev.summary.auc, ev.summary.eer, ev.summary.balanced_accuracy
    );
    Ok(Outcome::Clean)
}

fn ablation(a: AblateArgs) -> Result<Outcome> {
    let (_, table) = load_table(&a.store)?;
    let (report, _) = ablate(
        &table.partition(Partition::Train)?,
        &table.partition(Partition::Dev)?,
        &table.partition(Partition::Test)?,
        &Grid::parse(&a.grid)?,
        &SmoParams::default(),
        a.store.profile,
    )?;
    create_dir(&a.out)?;
    write_ablation(&report, &a.out, a.svg)?;
    for r in &report.rows {
        println!(
            "{:>8} {:>3}: auc {:.4} eer {:.4} balanced accuracy {:.4}",
            r.feature_slice.as_str(),
            r.scenario,
            r.auc,
            r.eer,
            r.balanced_accuracy
        );
    }
    Ok(Outcome::Clean)
}

fn correlation(a: CorrelateArgs) -> Result<Outcome> {
    let (_, mut table) = load_table(&a.store)?;
    if let Some(p) = a.partition {
        table = table.partition(p)?;
    }
    let rep = correlate(&table)?;
    create_dir(&a.out)?;
    write_correlation(&rep, &a.out, a.svg)?;
    println!(
        "{0}x{0} matrix; mean |r| speaker {1:.4}, prosody {2:.4}, cross {3:.4}",
        rep.matrix.dim(),
        rep.stats.fs_fs.mean,
        rep.stats.fp_fp.mean,
        rep.stats.fs_fp.mean
    );
    Ok(Outcome::Clean)
}

fn degrade_file(a: DegradeArgs) -> Result<Outcome> {
    let audio = load_wav(&a.input)?;
    let out = degrade(&audio, &DegradationProfile::preset(a.profile))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_wav_pcm16(&a.out, &out)?;
    Ok(Outcome::Clean)
}

fn synth(a: SynthArgs) -> Result<Outcome> {
    let corpus = make_synthetic_corpus(a.seed, a.n, &a.out)?;
    let c = corpus.counts();
    println!(
        "{} files ({} real, {} synthetic) in {}",
        corpus.len(),
        c.real,
        c.df,
        a.out.display()
    );
    Ok(Outcome::Clean)
}

fn report(a: ReportArgs) -> Result<Outcome> {
    let md = render_report(&a.dir)?;
    match &a.out {
        Some(path) => fs::write(path, md).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{md}"),
    }
    Ok(Outcome::Clean)
}
