//! Per-stage parameter counts of the default architecture.
//!
//! cargo run --example param_audit -- [classes]

use tdsm::model::{ModelConfig, Stage, Tdsm};

fn main() -> tdsm::Result<()> {
    let classes = std::env::args().nth(1).map_or(4, |a| a.parse().expect("class count"));
    let model = Tdsm::<f32>::init(ModelConfig::with_classes(classes), 0)?;
    let counts = model.count_params();
    for stage in Stage::ALL {
        println!("{:<16} {:>9}", stage.name(), counts.get(stage));
    }
    let total = counts.total();
    println!("{:<16} {:>9}", "total", total);
    println!("vs 780000        {:+.2}%", (total as f64 - 780_000.0) / 780_000.0 * 100.0);
    Ok(())
}
