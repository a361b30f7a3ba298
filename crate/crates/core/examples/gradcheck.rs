//! Finite-difference checks: every differentiable op on random inputs,
//! then every parameter of a small 64-bit model.
//!
//! cargo run --release --example gradcheck -- [draws]

use tdsm::model::{model_grad_check, ModelConfig};
use tdsm::tensor::op_suite;

fn main() -> tdsm::Result<()> {
    let draws = std::env::args().nth(1).map_or(20, |a| a.parse().expect("draw count"));
    for c in op_suite(draws)? {
        println!("{:<24} {:.3e}  (worst seed {})", c.op, c.max_rel_err, c.seed);
    }

    let mut config = ModelConfig::with_classes(3);
    config.blocks = 2;
    let report = model_grad_check(&config, 7, 4)?;
    for p in &report.params {
        println!("{:<28} {:.3e}", p.name, p.max_rel_err);
    }
    println!("max relative error {:.3e}", report.max_rel_err().max(0.0));
    Ok(())
}
