//! Dataset ingestion: benchmark CSV loading, ASCII word encoding, length
//! statistics, minibatching, subsampling and a synthetic corpus.

mod batch;
mod codec;
mod csv;
mod sample;
mod stats;
mod synthetic;

pub use batch::{encode_corpus, make_batches, Batch, BatchStream, EncodedDocument};
pub use codec::{tokenize, CharCodec, ALPHABET_SIZE, PAD_ID, WORD_LEN};
pub use csv::{load_csv, parse_csv, validate_labels, LabeledText};
pub use sample::stratified_subset;
pub use stats::{compute_stats, stats_from_counts, DatasetStats};
pub use synthetic::letter_z_corpus;
