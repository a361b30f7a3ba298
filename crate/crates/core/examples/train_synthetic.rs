//! Fits the default architecture to 64 synthetic documents whose class is
//! whether the letter `z` appears.
//!
//! cargo run --release --example train_synthetic -- [batch_size] [max_epochs] [learning_rate] [seed]

use tdsm::model::{ModelConfig, Tdsm};
use tdsm::text::{compute_stats, letter_z_corpus, CharCodec};
use tdsm::train::{encode_nonempty, AdamConfig, train, TrainConfig, TrainData, Trainer};

fn main() -> tdsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(|a| a.parse::<f64>().expect("numeric argument"));
    let batch_size = arg(0).map_or(8, |v| v as usize);
    let epochs = arg(1).map_or(200, |v| v as usize);
    let learning_rate = arg(2).unwrap_or(1e-3);
    let seed = arg(3).map_or(1, |v| v as u64);

    let docs = letter_z_corpus(64, seed);
    let stats = compute_stats(&docs)?;
    let (encoded, _) = encode_nonempty(&docs, &CharCodec::default(), stats.max_words);
    let model = Tdsm::init(ModelConfig::with_classes(2), seed)?;
    let config = TrainConfig {
        batch_size,
        epochs,
        seed,
        target_train_accuracy: Some(0.98),
        adam: AdamConfig { learning_rate, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config)?;
    let data = TrainData { train: &encoded, test: None, stats: &stats };
    let summary = train(&mut trainer, &data, None, &mut |m| {
        println!(
            "epoch {:>3}  loss {:.6}  train acc {:.4}  {:.2}s",
            m.epoch, m.train_loss, m.train_accuracy, m.wall_time_secs
        );
    })?;
    let eval = trainer.evaluate(&encoded)?;
    println!("final train accuracy {:.4} after {} epochs", eval.accuracy, summary.metrics.len());
    Ok(())
}
