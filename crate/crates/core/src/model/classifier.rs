use super::{HeadParams, ResidualBlockParams};
use crate::error::Result;
use crate::tensor::{Graph, Scalar, Var};

/// `relu(x + up(relu(down(x))))`
pub fn residual_block<T: Scalar>(g: &mut Graph<T>, b: &ResidualBlockParams<Var>, x: Var) -> Result<Var> {
    let z = g.matmul(b.down_weight, x)?;
    let z = g.add(z, b.down_bias)?;
    let z = g.relu(z)?;
    let u = g.matmul(b.up_weight, z)?;
    let u = g.add(u, b.up_bias)?;
    let y = g.add(x, u)?;
    g.relu(y)
}

#[derive(Clone, Copy, Debug)]
pub struct Classification {
    pub logits: Var,
    pub probs: Var,
}

/// Residual blocks followed by a dense softmax layer.
pub fn classify<T: Scalar>(g: &mut Graph<T>, head: &HeadParams<Var>, s: Var) -> Result<Classification> {
    let mut x = s;
    for block in &head.blocks {
        x = residual_block(g, block, x)?;
    }
    let logits = g.matmul(head.out.weight, x)?;
    let logits = g.add(logits, head.out.bias)?;
    let probs = g.softmax(logits)?;
    Ok(Classification { logits, probs })
}
