//! Attention weights of an untrained model over a sentence, and their
//! behaviour when the document is padded.

use tdsm::model::{attention_weights, bilstm, word_topics, ModelConfig, Tdsm};
use tdsm::text::{tokenize, CharCodec, EncodedDocument};
use tdsm::Graph;

fn weights(model: &Tdsm<f64>, doc: &EncodedDocument, n_real: usize) -> tdsm::Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false)?;
    let mask: Vec<bool> = (0..doc.max_words).map(|i| i < n_real).collect();
    let topics = word_topics(&mut g, &model.config, &p, &doc.chars)?;
    let rnn = bilstm(&mut g, &p.bilstm, topics, &mask)?;
    let w = attention_weights(&mut g, &p.attention, rnn.h, &mask)?;
    Ok(g.value(w).data().to_vec())
}

fn main() -> tdsm::Result<()> {
    let text = "oil prices climb as traders weigh supply cuts";
    let model = Tdsm::<f64>::init_dense(ModelConfig::with_classes(4), 3)?;
    let codec = CharCodec::default();
    let n = tokenize(text).len();

    let tight = EncodedDocument::encode(text, 0, &codec, n);
    let padded = EncodedDocument::encode(text, 0, &codec, n + 6);
    let a = weights(&model, &tight, n)?;
    let b = weights(&model, &padded, n)?;

    for (word, w) in tokenize(text).iter().zip(&a) {
        println!("{word:<10} {w:.4}");
    }
    println!("sum {:.12}", a.iter().sum::<f64>());
    println!("padding weights {:?}", &b[n..]);
    let shift = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("largest change from padding {shift:.3e}");
    Ok(())
}
