//! Small-scale AG News run: the default model trained on a class-balanced
//! training subset, compared with the majority class and a TF-IDF baseline
//! fit on the same subset. Scores are on the full test split.
//!
//! Expects `train.csv` and `test.csv` in the given directory. This is a
//! multi-hour run on one core; `TDSM_THREADS` sets the worker count.
//!
//! cargo run --release --example ag_news_subset -- DIR [subset=12000] [epochs=5] [seed=0]

use std::path::PathBuf;

use tdsm::baselines::{run_baseline, BaselineConfig, FeatureKind};
use tdsm::model::{ModelConfig, Tdsm};
use tdsm::text::{compute_stats, load_csv, stratified_subset, CharCodec};
use tdsm::train::{encode_nonempty, train, TrainConfig, TrainData, Trainer};

fn main() -> tdsm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().expect("usage: ag_news_subset DIR [subset] [epochs] [seed]"));
    let subset: usize = args.get(1).map_or(12_000, |a| a.parse().expect("subset size"));
    let epochs: usize = args.get(2).map_or(5, |a| a.parse().expect("epoch count"));
    let seed: u64 = args.get(3).map_or(0, |a| a.parse().expect("seed"));
    let threads = std::env::var("TDSM_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(1);

    let full_train = load_csv(dir.join("train.csv"))?;
    let test = load_csv(dir.join("test.csv"))?;
    let train_docs = stratified_subset(&full_train, subset, seed);
    println!("{} of {} training documents, {} test documents", train_docs.len(), full_train.len(), test.len());

    let tfidf = run_baseline(&train_docs, &test, FeatureKind::Tfidf, &BaselineConfig::default())?;
    println!("majority {:.4}  tfidf {:.4}", tfidf.majority_accuracy, tfidf.test_accuracy);

    let stats = compute_stats(&train_docs)?;
    let codec = CharCodec::default();
    let (train_enc, _) = encode_nonempty(&train_docs, &codec, stats.max_words);
    let (test_enc, _) = encode_nonempty(&test, &codec, stats.max_words);
    let model = Tdsm::init(ModelConfig::with_classes(stats.class_count), seed)?;
    let mut trainer = Trainer::new(model, TrainConfig { epochs, seed, threads, ..TrainConfig::default() })?;
    let data = TrainData { train: &train_enc, test: Some(&test_enc), stats: &stats };
    let summary = train(&mut trainer, &data, None, &mut |m| {
        println!(
            "epoch {}  loss {:.4}  train {:.4}  test {:.4}  {:.0}s",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.test_accuracy.unwrap_or(f64::NAN),
            m.wall_time_secs
        );
    })?;
    let acc = summary.metrics.last().and_then(|m| m.test_accuracy).unwrap_or(0.0);
    let over_majority = (acc - tfidf.majority_accuracy) * 100.0;
    let below_tfidf = (tfidf.test_accuracy - acc) * 100.0;
    println!("tdsm {acc:.4}: {over_majority:+.1} points over majority, {below_tfidf:.1} points below tfidf");
    println!(
        "{}",
        if over_majority >= 40.0 && below_tfidf <= 10.0 { "sanity check met" } else { "sanity check not met" }
    );
    Ok(())
}
