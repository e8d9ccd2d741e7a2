//! End-to-end orchestration: feature extraction with an on-disk store,
//! training, evaluation, ablation, correlation analysis and the
//! compression sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{degrade, load_wav, resample, AudioBuffer, DegradationProfile, ProfileLabel, TARGET_SAMPLE_RATE};
use crate::classifier::{grid_search, Grid, GridEntry, LabeledSet, SmoParams, SvmModel};
use crate::dataset::{Corpus, ManifestRecord, Partition, Scenario};
use crate::dsp::{mel_spectrogram, mfcc, FrontEndConfig};
use crate::embeddings::{
    init_weights, EmbeddingVector, EncoderConfig, ProsodyEncoder, ProsodyEncoderConfig, SpeakerEncoder,
    SpeakerEncoderConfig, Tensor, TensorArchive, WeightArchive,
};
use crate::error::{Error, Result};
use crate::features::{concat, FeatureSlice, FeatureVector};
use crate::label::Label;
use crate::metrics::{block_stats, evaluate, pearson_matrix, BlockStats, CorrelationMatrix, Counts, EvalReport};
use crate::svg;
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_ARCHITECTURE: &str = "feature-vector";
pub const WORKERS_ENV: &str = "PROSOSPEAK_WORKERS";

/// Worker count: the environment variable wins, then the requested value,
/// then the number of available cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(requested.filter(|&n| n > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Encoder sizes for seeded weights. Every preset keeps the 192 + 128
/// output sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPreset {
    /// Full-width speaker and prosody networks.
    Full,
    /// Narrow speaker and prosody networks.
    Compact,
    /// Narrow speaker network, full-width prosody network.
    #[default]
    Desk,
}

impl WeightPreset {
    pub const ALL: [WeightPreset; 3] = [WeightPreset::Full, WeightPreset::Compact, WeightPreset::Desk];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightPreset::Full => "full",
            WeightPreset::Compact => "compact",
            WeightPreset::Desk => "desk",
        }
    }

    pub fn configs(self) -> (SpeakerEncoderConfig, ProsodyEncoderConfig) {
        match self {
            WeightPreset::Full => (SpeakerEncoderConfig::full(), ProsodyEncoderConfig::full()),
            WeightPreset::Compact => (SpeakerEncoderConfig::compact(), ProsodyEncoderConfig::compact()),
            WeightPreset::Desk => (SpeakerEncoderConfig::compact(), ProsodyEncoderConfig::full()),
        }
    }
}

impl std::fmt::Display for WeightPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WeightPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown weight preset '{s}' (full, compact, desk)")))
    }
}

/// Seeded speaker (`seed`) and prosody (`seed + 1`) weights.
pub fn seeded_weights(seed: u64, preset: WeightPreset) -> Result<(WeightArchive, WeightArchive)> {
    let (s, p) = preset.configs();
    Ok((
        init_weights(&EncoderConfig::Speaker(s), seed)?,
        init_weights(&EncoderConfig::Prosody(p), seed.wrapping_add(1))?,
    ))
}

/// Prosody weights whose batch-norm statistics are measured on the
/// recordings of `corpus` (labels are not used).
pub fn calibrate_prosody(prosody: &WeightArchive, corpus: &Corpus, workers: usize) -> Result<WeightArchive> {
    let front = FrontEndConfig {
        mel_bands: prosody.prosody_config()?.input_bands,
        ..FrontEndConfig::prosody()
    };
    let mels = thread_pool(workers)?.install(|| {
        corpus
            .records()
            .par_iter()
            .map(|r| {
                let audio = resample(&load_wav(corpus.resolve(r))?, TARGET_SAMPLE_RATE)?;
                mel_spectrogram(&audio, &front)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    prosody.calibrate_prosody(&mels)
}

/// Audio to concatenated embeddings.
pub struct Extractor {
    fingerprint: String,
    speaker: SpeakerEncoder,
    prosody: ProsodyEncoder,
    speaker_front: FrontEndConfig,
    prosody_front: FrontEndConfig,
}

impl Extractor {
    pub fn new(speaker: &WeightArchive, prosody: &WeightArchive) -> Result<Self> {
        let fingerprint = hex::encode(Sha256::digest(
            format!("{}:{}", speaker.digest()?, prosody.digest()?).as_bytes(),
        ));
        let speaker = speaker.speaker_encoder()?;
        let prosody = prosody.prosody_encoder()?;
        let speaker_front = FrontEndConfig {
            mel_bands: speaker.config().input_dim,
            ..FrontEndConfig::speaker()
        };
        let prosody_front = FrontEndConfig {
            mel_bands: prosody.config().input_bands,
            ..FrontEndConfig::prosody()
        };
        Ok(Self {
            fingerprint,
            speaker,
            prosody,
            speaker_front,
            prosody_front,
        })
    }

    /// Digest of both weight archives.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn speaker_dim(&self) -> usize {
        self.speaker.config().embedding_dim
    }

    pub fn prosody_dim(&self) -> usize {
        self.prosody.config().embedding_dim
    }

    /// Resamples to 16 kHz, applies the degradation, then runs both encoders.
    pub fn embed(
        &self,
        audio: &AudioBuffer,
        profile: &DegradationProfile,
    ) -> Result<(EmbeddingVector, EmbeddingVector)> {
        let audio = resample(audio, TARGET_SAMPLE_RATE)?;
        let audio = degrade(&audio, profile)?;
        let coeffs = mfcc(&audio, &self.speaker_front, self.speaker_front.mel_bands)?;
        let mel = mel_spectrogram(&audio, &self.prosody_front)?;
        Ok((self.speaker.forward(&coeffs)?, self.prosody.forward(&mel)?))
    }

    pub fn features(&self, audio: &AudioBuffer, profile: &DegradationProfile) -> Result<FeatureVector> {
        let (s, p) = self.embed(audio, profile)?;
        concat(&s, &p)
    }
}

/// Per-file feature archives under `root/<profile>/`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// First 16 hex digits of the SHA-256 of the audio path.
    pub fn path_for(&self, audio: &Path, profile: ProfileLabel) -> PathBuf {
        let digest = hex::encode(Sha256::digest(audio.to_string_lossy().as_bytes()));
        self.root.join(profile.as_str()).join(format!("{}.pskt", &digest[..16]))
    }

    /// Writes one archive. `provenance` identifies the audio content and the
    /// weights so stale archives can be detected.
    pub fn save(
        &self,
        audio: &Path,
        profile: ProfileLabel,
        provenance: &Provenance,
        speaker: &EmbeddingVector,
        prosody: &EmbeddingVector,
    ) -> Result<()> {
        let path = self.path_for(audio, profile);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut a = TensorArchive::new(FEATURE_ARCHITECTURE, serde_json::Value::Null);
        a.metadata.insert("source".into(), audio.to_string_lossy().into_owned());
        a.metadata.insert("profile".into(), profile.as_str().into());
        a.metadata
            .insert("audio_sha256".into(), provenance.audio_sha256.clone());
        a.metadata.insert("weights".into(), provenance.weights.clone());
        a.insert("speaker", Tensor::from_f64(vec![speaker.len()], speaker.values())?);
        a.insert("prosody", Tensor::from_f64(vec![prosody.len()], prosody.values())?);
        // write then rename so an interrupted run never leaves a partial file
        let tmp = path.with_extension("pskt.tmp");
        a.save(&tmp)?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn load_archive(&self, audio: &Path, profile: ProfileLabel) -> Result<TensorArchive> {
        let a = TensorArchive::load(self.path_for(audio, profile))?;
        if a.architecture != FEATURE_ARCHITECTURE {
            return Err(Error::MalformedArchive(format!(
                "expected a feature archive, found `{}`",
                a.architecture
            )));
        }
        Ok(a)
    }

    /// Stored `(speaker, prosody)` values.
    pub fn load(&self, audio: &Path, profile: ProfileLabel) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.load_archive(audio, profile)?;
        Ok((a.get("speaker")?.to_f64(), a.get("prosody")?.to_f64()))
    }

    pub fn contains(&self, audio: &Path, profile: ProfileLabel) -> bool {
        self.path_for(audio, profile).is_file()
    }

    /// True when a readable archive exists for the same audio and weights.
    pub fn is_current(&self, audio: &Path, profile: ProfileLabel, provenance: &Provenance) -> bool {
        self.load_archive(audio, profile).is_ok_and(|a| {
            a.metadata.get("audio_sha256") == Some(&provenance.audio_sha256)
                && a.metadata.get("weights") == Some(&provenance.weights)
        })
    }
}

/// What a feature archive was computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub audio_sha256: String,
    pub weights: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub computed: usize,
    pub skipped: usize,
    /// `(path, error)` for each file that failed.
    pub failures: Vec<(String, String)>,
}

impl ExtractSummary {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

enum Outcome {
    Computed,
    Skipped,
    Failed(String, String),
}

/// Extracts every record of `corpus`. Archives computed from the same audio
/// bytes and weights are kept unless `force` is set. Per-file failures are
/// collected, not raised.
pub fn extract_corpus(
    extractor: &Extractor,
    corpus: &Corpus,
    store: &FeatureStore,
    profile: ProfileLabel,
    force: bool,
    workers: usize,
) -> Result<ExtractSummary> {
    let preset = DegradationProfile::preset(profile);
    let outcomes: Vec<Outcome> = thread_pool(workers)?.install(|| {
        corpus
            .records()
            .par_iter()
            .map(|r| {
                let path = corpus.resolve(r);
                let run = || -> Result<bool> {
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    let provenance = Provenance {
                        audio_sha256: hex::encode(Sha256::digest(&bytes)),
                        weights: extractor.fingerprint().to_string(),
                    };
                    if !force && store.is_current(&path, profile, &provenance) {
                        return Ok(false);
                    }
                    let audio = load_wav(&path)?;
                    let (s, p) = extractor.embed(&audio, &preset)?;
                    store.save(&path, profile, &provenance, &s, &p)?;
                    Ok(true)
                };
                match run() {
                    Ok(true) => Outcome::Computed,
                    Ok(false) => Outcome::Skipped,
                    Err(e) => Outcome::Failed(r.path.clone(), e.to_string()),
                }
            })
            .collect()
    });
    let mut summary = ExtractSummary::default();
    for o in outcomes {
        match o {
            Outcome::Computed => summary.computed += 1,
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Failed(path, err) => {
                log::error!("{path}: {err}");
                summary.failures.push((path, err));
            }
        }
    }
    Ok(summary)
}

/// Stored features for a set of records, one row per record.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    records: Vec<ManifestRecord>,
    speaker_dim: usize,
    x: Matrix,
}

impl FeatureTable {
    pub fn new(records: Vec<ManifestRecord>, speaker_dim: usize, x: Matrix) -> Result<Self> {
        if records.len() != x.rows() {
            return Err(Error::invalid("feature table rows and records differ"));
        }
        if speaker_dim > x.cols() {
            return Err(Error::invalid("speaker block wider than feature vector"));
        }
        Ok(Self {
            records,
            speaker_dim,
            x,
        })
    }

    /// Loads every record of `corpus` from the store.
    pub fn load(corpus: &Corpus, store: &FeatureStore, profile: ProfileLabel) -> Result<Self> {
        let mut rows = Vec::with_capacity(corpus.len());
        let mut speaker_dim = None;
        let mut missing = Vec::new();
        for r in corpus.records() {
            let path = corpus.resolve(r);
            if !store.contains(&path, profile) {
                missing.push(r.path.clone());
                continue;
            }
            let (s, p) = store.load(&path, profile)?;
            match speaker_dim {
                None => speaker_dim = Some(s.len()),
                Some(d) if d != s.len() => {
                    return Err(Error::invalid(format!(
                        "{}: speaker block has {} values, expected {d}",
                        r.path,
                        s.len()
                    )))
                }
                _ => {}
            }
            let mut v = s;
            v.extend(p);
            rows.push(v);
        }
        if !missing.is_empty() {
            return Err(Error::Corpus(format!(
                "{} file(s) have no extracted features for profile {profile}, first: {}",
                missing.len(),
                missing[0]
            )));
        }
        let x = Matrix::from_rows(&rows)?;
        Self::new(corpus.records().to_vec(), speaker_dim.unwrap_or(0), x)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn speaker_dim(&self) -> usize {
        self.speaker_dim
    }

    pub fn total_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn system_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.system_id.clone()).collect()
    }

    pub fn columns(&self, slice: FeatureSlice) -> Result<Matrix> {
        let range = slice.range(self.speaker_dim, self.total_dim());
        if range.is_empty() {
            return Err(Error::invalid(format!("feature slice {} is empty", slice.as_str())));
        }
        self.x.slice_cols(range)
    }

    fn select(&self, keep: impl Fn(&ManifestRecord) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.records[i])).collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.x.row(i).to_vec()).collect();
        let x = if rows.is_empty() {
            Matrix::zeros(0, self.total_dim())
        } else {
            Matrix::from_rows(&rows)?
        };
        Self::new(
            idx.iter().map(|&i| self.records[i].clone()).collect(),
            self.speaker_dim,
            x,
        )
    }

    pub fn partition(&self, p: Partition) -> Result<Self> {
        self.select(|r| r.partition == p)
    }

    /// Real rows plus synthetic rows of the scenario's kinds.
    pub fn scenario(&self, s: Scenario) -> Result<Self> {
        let t = self.select(|r| r.label == Label::Real || s.kinds().contains(&r.synthesis_kind))?;
        if !t.records.iter().any(|r| r.label == Label::Df) {
            return Err(Error::Corpus(format!("no synthetic records for scenario {s}")));
        }
        Ok(t)
    }
}

/// Trained model plus the grid-search record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub feature_slice: FeatureSlice,
    pub speaker_dim: usize,
    pub total_dim: usize,
    pub svm: SvmModel,
    pub grid: Vec<GridEntry>,
    pub best_index: usize,
    pub sigma2_f: f64,
}

impl ModelFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_str(&text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: m.format_version,
                supported: FORMAT_VERSION,
            });
        }
        m.svm.validate()?;
        let width = m.feature_slice.range(m.speaker_dim, m.total_dim).len();
        if width != m.svm.dim() {
            return Err(Error::invalid(format!(
                "model slice {} spans {width} columns but the classifier expects {}",
                m.feature_slice.as_str(),
                m.svm.dim()
            )));
        }
        Ok(m)
    }

    /// Decision scores for every row of `table`.
    pub fn score(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        if table.speaker_dim() != self.speaker_dim || table.total_dim() != self.total_dim {
            return Err(Error::invalid(format!(
                "model expects features {}+{}, table has {}+{}",
                self.speaker_dim,
                self.total_dim - self.speaker_dim,
                table.speaker_dim(),
                table.total_dim() - table.speaker_dim()
            )));
        }
        let cols = table.columns(self.feature_slice)?;
        cols.iter_rows().map(|r| self.svm.decision_raw(r)).collect()
    }
}

pub fn train_model(
    train: &FeatureTable,
    dev: &FeatureTable,
    slice: FeatureSlice,
    grid: &Grid,
    params: &SmoParams,
) -> Result<ModelFile> {
    if train.is_empty() {
        return Err(Error::Training("train partition is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Training("dev partition is empty".into()));
    }
    let train_set = LabeledSet::fit(&train.columns(slice)?, train.labels())?;
    let dev_set = LabeledSet::with_standardizer(&dev.columns(slice)?, dev.labels(), train_set.standardizer().clone())?;
    let result = grid_search(&train_set, &dev_set, grid, params)?;
    Ok(ModelFile {
        format_version: FORMAT_VERSION,
        feature_slice: slice,
        speaker_dim: train.speaker_dim(),
        total_dim: train.total_dim(),
        svm: result.model,
        grid: result.entries,
        best_index: result.best_index,
        sigma2_f: result.sigma2_f,
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub format_version: u32,
    pub auc: f64,
    pub eer: f64,
    pub balanced_accuracy: f64,
    pub counts: Counts,
    pub scenario: Scenario,
    pub profile: ProfileLabel,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: MetricsSummary,
    pub report: EvalReport,
    pub scores: Vec<f64>,
    pub records: Vec<ManifestRecord>,
}

pub fn evaluate_model(
    model: &ModelFile,
    test: &FeatureTable,
    scenario: Scenario,
    profile: ProfileLabel,
) -> Result<Evaluation> {
    let table = test.scenario(scenario)?;
    let scores = model.score(&table)?;
    let report = evaluate(&scores, &table.labels(), &table.system_ids())?;
    Ok(Evaluation {
        summary: MetricsSummary {
            format_version: FORMAT_VERSION,
            auc: report.auc,
            eer: report.eer,
            balanced_accuracy: report.balanced_accuracy,
            counts: report.counts,
            scenario,
            profile,
        },
        report,
        scores,
        records: table.records,
    })
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Writes `metrics.json`, `roc.csv`, `attribution.csv`, `scores.csv` and,
/// when `svg` is set, `roc.svg` and `attribution.svg`.
pub fn write_evaluation(ev: &Evaluation, out_dir: impl AsRef<Path>, svg: bool) -> Result<()> {
    let out = out_dir.as_ref();
    write_json(out.join("metrics.json"), &ev.summary)?;

    let mut roc = String::from("threshold,fpr,tpr\n");
    for (t, f, p) in ev.report.roc.points() {
        let _ = writeln!(roc, "{},{},{}", csv_float(t), csv_float(f), csv_float(p));
    }
    write_text(out.join("roc.csv"), &roc)?;

    let mut attr = String::from("system_id,total,correct,rate\n");
    for r in &ev.report.attribution {
        let _ = writeln!(attr, "{},{},{},{}", r.system_id, r.total, r.correct, csv_float(r.rate));
    }
    write_text(out.join("attribution.csv"), &attr)?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["path", "label", "system_id", "score", "prediction"])
        .map_err(|e| Error::Serde(e.to_string()))?;
    for (r, s) in ev.records.iter().zip(&ev.scores) {
        wtr.write_record([
            r.path.as_str(),
            r.label.as_str(),
            r.system_id.as_str(),
            &csv_float(*s),
            Label::from_score(*s).as_str(),
        ])
        .map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_text(out.join("scores.csv"), &String::from_utf8_lossy(&bytes))?;

    if svg {
        let title = format!(
            "ROC {} / {} (AUC {:.4})",
            ev.summary.scenario, ev.summary.profile, ev.summary.auc
        );
        let pts: Vec<(f64, f64)> = ev
            .report
            .roc
            .fpr
            .iter()
            .copied()
            .zip(ev.report.roc.tpr.iter().copied())
            .collect();
        write_text(
            out.join("roc.svg"),
            &svg::line_plot(
                &title,
                "false positive rate",
                "true positive rate",
                &[("detector".into(), pts)],
            ),
        )?;
        let bars: Vec<(String, f64)> = ev
            .report
            .attribution
            .iter()
            .map(|r| (r.system_id.clone(), r.rate))
            .collect();
        write_text(
            out.join("attribution.svg"),
            &svg::bar_chart("correct attribution per system", "rate", &bars),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature_slice: FeatureSlice,
    pub scenario: Scenario,
    pub auc: f64,
    pub eer: f64,
    pub balanced_accuracy: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub profile: ProfileLabel,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, slice: FeatureSlice, scenario: Scenario) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.feature_slice == slice && r.scenario == scenario)
    }
}

/// Trains prosody-only, speaker-only and combined models and evaluates each
/// on every scenario present in the test table.
pub fn ablate(
    train: &FeatureTable,
    dev: &FeatureTable,
    test: &FeatureTable,
    grid: &Grid,
    params: &SmoParams,
    profile: ProfileLabel,
) -> Result<(AblationReport, Vec<ModelFile>)> {
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for slice in FeatureSlice::ALL {
        let model = train_model(train, dev, slice, grid, params)?;
        for scenario in [Scenario::All, Scenario::Tts, Scenario::Vc] {
            match evaluate_model(&model, test, scenario, profile) {
                Ok(ev) => rows.push(AblationRow {
                    feature_slice: slice,
                    scenario,
                    auc: ev.summary.auc,
                    eer: ev.summary.eer,
                    balanced_accuracy: ev.summary.balanced_accuracy,
                    counts: ev.summary.counts,
                }),
                Err(Error::Corpus(msg)) => log::warn!("skipping {} / {scenario}: {msg}", slice.as_str()),
                Err(e) => return Err(e),
            }
        }
        models.push(model);
    }
    Ok((
        AblationReport {
            format_version: FORMAT_VERSION,
            profile,
            rows,
        },
        models,
    ))
}

pub fn write_ablation(report: &AblationReport, out_dir: impl AsRef<Path>, svg: bool) -> Result<()> {
    let out = out_dir.as_ref();
    write_json(out.join("ablation.json"), report)?;
    let mut text = String::from("feature_slice,scenario,auc,eer,balanced_accuracy\n");
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            r.feature_slice.as_str(),
            r.scenario,
            csv_float(r.auc),
            csv_float(r.eer),
            csv_float(r.balanced_accuracy)
        );
    }
    write_text(out.join("ablation.csv"), &text)?;
    if svg {
        let bars: Vec<(String, f64)> = report
            .rows
            .iter()
            .map(|r| (format!("{}/{}", r.feature_slice.as_str(), r.scenario), r.auc))
            .collect();
        write_text(
            out.join("ablation.svg"),
            &svg::bar_chart("AUC per model and scenario", "AUC", &bars),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub matrix: CorrelationMatrix,
    pub stats: BlockStats,
}

#[derive(Serialize)]
struct BlockStatsFile<'a> {
    format_version: u32,
    #[serde(flatten)]
    stats: &'a BlockStats,
}

pub fn correlate(table: &FeatureTable) -> Result<CorrelationReport> {
    if table.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 feature files"));
    }
    let matrix = pearson_matrix(table.matrix())?.with_boundary(table.speaker_dim())?;
    let stats = block_stats(&matrix)?;
    Ok(CorrelationReport { matrix, stats })
}

fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|&v| csv_float(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes `correlation.csv` (diagonal 1), `correlation_display.csv`
/// (diagonal 0), `block_stats.json` and optionally `correlation.svg`.
pub fn write_correlation(rep: &CorrelationReport, out_dir: impl AsRef<Path>, svg: bool) -> Result<()> {
    let out = out_dir.as_ref();
    let display = rep.matrix.display_matrix();
    write_text(out.join("correlation.csv"), &matrix_csv(&rep.matrix.r))?;
    write_text(out.join("correlation_display.csv"), &matrix_csv(&display))?;
    write_json(
        out.join("block_stats.json"),
        &BlockStatsFile {
            format_version: FORMAT_VERSION,
            stats: &rep.stats,
        },
    )?;
    if svg {
        write_text(
            out.join("correlation.svg"),
            &svg::heatmap(
                "feature correlation (diagonal zeroed)",
                display.rows(),
                |i, j| display.get(i, j),
                rep.matrix.boundary,
            ),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub profile: ProfileLabel,
    pub auc: f64,
    pub eer: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub format_version: u32,
    pub scenario: Scenario,
    pub rows: Vec<RobustnessRow>,
}

/// Extracts `test` under every profile and evaluates the trained model on
/// each version.
pub fn robustness(
    model: &ModelFile,
    extractor: &Extractor,
    test: &Corpus,
    store: &FeatureStore,
    profiles: &[ProfileLabel],
    workers: usize,
) -> Result<RobustnessReport> {
    let mut rows = Vec::with_capacity(profiles.len());
    for &profile in profiles {
        let summary = extract_corpus(extractor, test, store, profile, false, workers)?;
        if let Some((path, err)) = summary.failures.first() {
            return Err(Error::Corpus(format!(
                "{} file(s) failed under profile {profile}, first {path}: {err}",
                summary.failures.len()
            )));
        }
        let table = FeatureTable::load(test, store, profile)?;
        let ev = evaluate_model(model, &table, Scenario::All, profile)?;
        rows.push(RobustnessRow {
            profile,
            auc: ev.summary.auc,
            eer: ev.summary.eer,
            balanced_accuracy: ev.summary.balanced_accuracy,
        });
    }
    Ok(RobustnessReport {
        format_version: FORMAT_VERSION,
        scenario: Scenario::All,
        rows,
    })
}

pub fn write_robustness(report: &RobustnessReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    write_json(out.join("robustness.json"), report)?;
    let mut text = String::from("profile,auc,eer,balanced_accuracy\n");
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            r.profile,
            csv_float(r.auc),
            csv_float(r.eer),
            csv_float(r.balanced_accuracy)
        );
    }
    write_text(out.join("robustness.csv"), &text)
}

/// Markdown summary of every JSON report found under `dir`.
pub fn render_report(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    collect_json(dir, &mut files)?;
    files.sort();
    let mut md = String::from("# Detection report\n");
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match name {
            "metrics.json" => {
                let m: MetricsSummary = serde_json::from_str(&text)?;
                let _ = write!(
                    md,
                    "\n## {}\n\nscenario {}, profile {}, {} real / {} synthetic\n\n| AUC (%) | EER (%) | balanced accuracy (%) |\n|---|---|---|\n| {} | {} | {} |\n",
                    rel(path),
                    m.scenario,
                    m.profile,
                    m.counts.real,
                    m.counts.df,
                    crate::metrics::percent(m.auc),
                    crate::metrics::percent(m.eer),
                    crate::metrics::percent(m.balanced_accuracy)
                );
            }
            "ablation.json" => {
                let a: AblationReport = serde_json::from_str(&text)?;
                let _ = write!(
                    md,
                    "\n## {}\n\n| features | scenario | AUC (%) | EER (%) | balanced accuracy (%) |\n|---|---|---|---|---|\n",
                    rel(path)
                );
                for r in &a.rows {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} | {} |",
                        r.feature_slice.as_str(),
                        r.scenario,
                        crate::metrics::percent(r.auc),
                        crate::metrics::percent(r.eer),
                        crate::metrics::percent(r.balanced_accuracy)
                    );
                }
            }
            "robustness.json" => {
                let a: RobustnessReport = serde_json::from_str(&text)?;
                let _ = write!(
                    md,
                    "\n## {}\n\n| profile | AUC (%) | EER (%) | balanced accuracy (%) |\n|---|---|---|---|\n",
                    rel(path)
                );
                for r in &a.rows {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} |",
                        r.profile,
                        crate::metrics::percent(r.auc),
                        crate::metrics::percent(r.eer),
                        crate::metrics::percent(r.balanced_accuracy)
                    );
                }
            }
            "block_stats.json" => {
                let v: BlockStats = serde_json::from_str(&text)?;
                let _ = write!(
                    md,
                    "\n## {}\n\n| block | mean abs r | std |\n|---|---|---|\n| speaker/speaker | {:.4} | {:.4} |\n| prosody/prosody | {:.4} | {:.4} |\n| speaker/prosody | {:.4} | {:.4} |\n",
                    rel(path),
                    v.fs_fs.mean,
                    v.fs_fs.std,
                    v.fp_fp.mean,
                    v.fp_fp.std,
                    v.fs_fp.mean,
                    v.fs_fp.std
                );
            }
            _ => {}
        }
    }
    if files.is_empty() {
        return Err(Error::invalid(format!("no reports found under {}", dir.display())));
    }
    Ok(md)
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if matches!(
            path.file_name().and_then(|n| n.to_str()),
            Some("metrics.json" | "ablation.json" | "robustness.json" | "block_stats.json")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // the only test in this binary that touches the variable
    #[test]
    fn worker_env_wins_over_flag() {
        std::env::set_var(WORKERS_ENV, "3");
        assert_eq!(worker_count(Some(8)), 3);
        std::env::set_var(WORKERS_ENV, "zero");
        assert_eq!(worker_count(Some(8)), 8);
        std::env::set_var(WORKERS_ENV, "0");
        assert_eq!(worker_count(Some(5)), 5);
        std::env::remove_var(WORKERS_ENV);
        assert_eq!(worker_count(Some(2)), 2);
        assert!(worker_count(None) >= 1);
        assert!(worker_count(Some(0)) >= 1);
    }

    #[test]
    fn preset_names_round_trip() {
        for p in WeightPreset::ALL {
            assert_eq!(p.to_string().parse::<WeightPreset>().unwrap(), p);
        }
        assert_eq!(WeightPreset::default(), WeightPreset::Desk);
        assert!("large".parse::<WeightPreset>().is_err());
    }

    #[test]
    fn store_paths_depend_on_path_and_profile() {
        let store = FeatureStore::new("/f");
        let a = store.path_for(Path::new("a.wav"), ProfileLabel::None);
        assert!(a.starts_with("/f/none"));
        assert_eq!(a.extension().unwrap(), "pskt");
        assert_ne!(a, store.path_for(Path::new("b.wav"), ProfileLabel::None));
        assert!(store
            .path_for(Path::new("a.wav"), ProfileLabel::Br32)
            .starts_with("/f/br32"));
    }

    #[test]
    fn report_needs_some_json() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_report(dir.path()).is_err());
    }
}
