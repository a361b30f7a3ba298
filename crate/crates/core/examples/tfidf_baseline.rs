//! Bag-of-words and TF-IDF logistic regression baselines.
//!
//! With two CSV paths (train, test) in the benchmark layout the baselines
//! run on that data; otherwise on a small built-in corpus.
//!
//! cargo run --release --example tfidf_baseline -- [train.csv test.csv]

use tdsm::baselines::{run_baseline, BaselineConfig, FeatureKind};
use tdsm::text::{load_csv, LabeledText};

fn builtin() -> (Vec<LabeledText>, Vec<LabeledText>) {
    let doc = |label, text: &str| LabeledText { label, text: text.into() };
    let train = vec![
        doc(0, "stocks fell as bank shares slid on wall street"),
        doc(0, "oil prices lift energy shares and the dollar"),
        doc(0, "central bank holds interest rates steady"),
        doc(0, "profits beat forecasts and shares rose"),
        doc(1, "the home team won the final in extra time"),
        doc(1, "striker scores twice as city win the cup"),
        doc(1, "coach resigns after a run of league defeats"),
        doc(1, "champion wins the open in straight sets"),
        doc(2, "new chip doubles battery life in phones"),
        doc(2, "software update fixes a browser security bug"),
        doc(2, "researchers unveil a faster search engine"),
        doc(2, "space probe sends back images of mars"),
    ];
    let test = vec![
        doc(0, "bank shares rose on wall street"),
        doc(1, "city coach praises striker after cup win"),
        doc(2, "browser update improves battery life"),
        doc(0, "interest rates and oil prices"),
        doc(1, "team wins league final"),
        doc(2, "new software for phones"),
    ];
    (train, test)
}

fn main() -> tdsm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (train, test) = match args.as_slice() {
        [tr, te] => (load_csv(tr)?, load_csv(te)?),
        [] => builtin(),
        _ => panic!("expected no arguments or a train and a test CSV"),
    };
    let config = BaselineConfig::default();
    for kind in [FeatureKind::Bow, FeatureKind::Tfidf] {
        let r = run_baseline(&train, &test, kind, &config)?;
        println!(
            "{:<6} vocab {:>6}  train {:.4}  test {:.4}  majority {:.4}  {:.1}s",
            kind.name(),
            r.vocab_size,
            r.train_accuracy,
            r.test_accuracy,
            r.majority_accuracy,
            r.wall_time_secs
        );
    }
    Ok(())
}
