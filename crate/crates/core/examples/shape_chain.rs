//! Prints the tensor shapes of one forward pass over "hello world".
//!
//! cargo run --example shape_chain -- [text]

use tdsm::model::{assemble_sentence, attention_weights, bilstm, classify, word_topics, ModelConfig, Tdsm};
use tdsm::text::{tokenize, CharCodec, EncodedDocument};
use tdsm::Graph;

fn main() -> tdsm::Result<()> {
    let text = std::env::args().nth(1).unwrap_or_else(|| "hello world".to_string());
    let config = ModelConfig::with_classes(4);
    let model = Tdsm::<f32>::init(config.clone(), 0)?;
    let codec = CharCodec::new(config.word_len);
    let doc = EncodedDocument::encode(&text, 0, &codec, tokenize(&text).len());

    let mut g = Graph::new();
    let p = model.bind(&mut g, false)?;
    let chars = doc.word_rows();
    let mask = vec![true; doc.n_words];
    let topics = word_topics(&mut g, &config, &p, chars)?;
    let rnn = bilstm(&mut g, &p.bilstm, topics, &mask)?;
    let weights = attention_weights(&mut g, &p.attention, rnn.h, &mask)?;
    let sentence = assemble_sentence(&mut g, topics, weights, rnn.s_pos)?;
    let out = classify(&mut g, &p.head, sentence.s)?;

    println!("words            {}", doc.n_words);
    println!("characters       {}x{}", doc.n_words, config.word_len);
    println!("topic vectors    {:?}", g.shape(topics));
    println!("bilstm outputs   {:?}", g.shape(rnn.h));
    println!("attention        {:?}", g.shape(weights));
    println!("s_bow            {:?}", g.shape(sentence.s_bow));
    println!("s_pos            {:?}", g.shape(sentence.s_pos));
    println!("sentence         {:?}", g.shape(sentence.s));
    println!("probabilities    {:?}", g.value(out.probs).data());
    Ok(())
}
