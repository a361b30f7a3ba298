//! Trains a small model for a few epochs, saves it, loads it back and
//! checks that the reloaded model predicts identically.

use tdsm::model::{ConvSpec, ModelConfig, Tdsm};
use tdsm::text::{compute_stats, letter_z_corpus, CharCodec};
use tdsm::train::{encode_nonempty, predict_all, train, Checkpoint, RunDir, TrainConfig, TrainData, Trainer};

fn main() -> tdsm::Result<()> {
    let docs = letter_z_corpus(32, 5);
    let stats = compute_stats(&docs)?;
    let (encoded, _) = encode_nonempty(&docs, &CharCodec::new(8), stats.max_words);

    let config = ModelConfig {
        alphabet: 128,
        embed_dim: 8,
        word_len: 8,
        fcn: vec![ConvSpec { filters: 4, kernel: (8, 3), stride: (1, 1) }],
        hidden: 8,
        blocks: 2,
        bottleneck: 6,
        classes: 2,
    };
    let model = Tdsm::init(config, 5)?;
    let mut trainer = Trainer::new(model, TrainConfig { batch_size: 8, epochs: 3, seed: 5, ..TrainConfig::default() })?;

    let dir = std::env::temp_dir().join(format!("tdsm-checkpoint-example-{}", std::process::id()));
    let run = RunDir::create(&dir)?;
    let data = TrainData { train: &encoded, test: None, stats: &stats };
    train(&mut trainer, &data, Some(&run), &mut |m| println!("epoch {} loss {:.4}", m.epoch, m.train_loss))?;

    let loaded = Checkpoint::load(run.last_checkpoint())?;
    println!("loaded epoch {} with max_words {}", loaded.epoch, loaded.max_words);
    assert_eq!(loaded.model, trainer.model);
    assert_eq!(predict_all(&loaded.model, &encoded)?, predict_all(&trainer.model, &encoded)?);
    println!("reloaded model matches: {}", run.last_checkpoint().display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
