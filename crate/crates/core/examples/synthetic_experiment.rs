//! Runs the desk-scale experiment in one process: synthetic corpus, seeded
//! encoders, grid search, ablation and the compression sweep.
//!
//! Usage: `cargo run --release -p prosospeaker --example synthetic_experiment [out_dir] [seeds] [n]`
//! where `seeds` is a comma-separated list.

use std::time::Instant;

use prosospeaker::audio::ProfileLabel;
use prosospeaker::classifier::{Grid, SmoParams};
use prosospeaker::dataset::{Partition, Scenario};
use prosospeaker::features::FeatureSlice;
use prosospeaker::pipeline::{
    ablate, calibrate_prosody, evaluate_model, extract_corpus, robustness, seeded_weights, train_model, worker_count,
    Extractor, FeatureStore, FeatureTable, WeightPreset,
};
use prosospeaker::synth::make_synthetic_corpus;

fn main() -> prosospeaker::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args
        .get(1)
        .cloned()
        .unwrap_or_else(|| "target/synthetic-experiment".into());
    let seeds: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').filter_map(|v| v.parse().ok()).collect())
        .unwrap_or_else(|| vec![7]);
    let n: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(40);
    for seed in seeds {
        run(&format!("{out}/seed{seed}"), seed, n)?;
    }
    Ok(())
}

fn run(out: &str, seed: u64, n: usize) -> prosospeaker::Result<()> {
    println!("== seed {seed}");
    let t0 = Instant::now();
    let corpus = make_synthetic_corpus(seed, n, format!("{out}/corpus"))?;
    println!("corpus: {} files in {:.1}s", corpus.len(), t0.elapsed().as_secs_f64());

    let workers = worker_count(None);
    let (sw, pw) = seeded_weights(0, WeightPreset::Desk)?;
    let pw = calibrate_prosody(&pw, &corpus.subset(Partition::Train)?, workers)?;
    let extractor = Extractor::new(&sw, &pw)?;
    let store = FeatureStore::new(format!("{out}/features"));
    let t = Instant::now();
    let summary = extract_corpus(&extractor, &corpus, &store, ProfileLabel::None, true, workers)?;
    println!("extract: {summary:?} in {:.1}s", t.elapsed().as_secs_f64());

    let table = FeatureTable::load(&corpus, &store, ProfileLabel::None)?;
    let train = table.partition(Partition::Train)?;
    let dev = table.partition(Partition::Dev)?;
    let test = table.partition(Partition::Test)?;
    let grid = Grid::default_grid();
    let params = SmoParams::default();
    let model = train_model(&train, &dev, FeatureSlice::Combined, &grid, &params)?;
    let ev = evaluate_model(&model, &test, Scenario::All, ProfileLabel::None)?;
    println!("best {:?}", model.grid[model.best_index]);
    println!(
        "combined ALL: auc {:.4} eer {:.4} ba {:.4}",
        ev.summary.auc, ev.summary.eer, ev.summary.balanced_accuracy
    );

    let (ab, _) = ablate(&train, &dev, &test, &grid, &params, ProfileLabel::None)?;
    for r in &ab.rows {
        println!(
            "{:>9} {:>3}: auc {:.4} eer {:.4} ba {:.4}",
            r.feature_slice.as_str(),
            r.scenario,
            r.auc,
            r.eer,
            r.balanced_accuracy
        );
    }

    let test_corpus = corpus.subset(Partition::Test)?;
    let t = Instant::now();
    let rob = robustness(&model, &extractor, &test_corpus, &store, &ProfileLabel::ALL, workers)?;
    for r in &rob.rows {
        println!(
            "{:>6}: auc {:.4} eer {:.4} ba {:.4}",
            r.profile, r.auc, r.eer, r.balanced_accuracy
        );
    }
    println!(
        "robustness in {:.1}s, total {:.1}s",
        t.elapsed().as_secs_f64(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
