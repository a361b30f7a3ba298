//! BiLSTM over topic vectors, word attention and sentence assembly.

use super::{AttentionParams, BiLstmParams, LstmParams};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// One LSTM step on input `v` from state `(s_prev, c_prev)`; returns
/// `(s_t, c_t)`.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    p: &LstmParams<Var>,
    v: Var,
    s_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let x = g.concat(&[s_prev, v], 0)?;
    let gate = |g: &mut Graph<T>, w: Var, b: Var| -> Result<Var> {
        let z = g.matmul(w, x)?;
        g.add(z, b)
    };
    let zf = gate(g, p.w_f, p.b_f)?;
    let f = g.sigmoid(zf)?;
    let zi = gate(g, p.w_i, p.b_i)?;
    let i = g.sigmoid(zi)?;
    let zc = gate(g, p.w_c, p.b_c)?;
    let cand = g.tanh(zc)?;
    let zo = gate(g, p.w_o, p.b_o)?;
    let o = g.sigmoid(zo)?;

    if g.shape(c_prev) != g.shape(f) {
        return Err(Error::dim(
            "lstm_step",
            format!("cell state {:?} does not match gates {:?}", g.shape(c_prev), g.shape(f)),
        ));
    }
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let s = g.mul(o, tc)?;
    Ok((s, c))
}

#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    /// `[W × 2·hidden]`: `f_t ⊕ b_t` for real words, zero rows for padding.
    pub h: Var,
    /// `f_n ⊕ b_1`, the final state of each direction.
    pub s_pos: Var,
    pub forward: Vec<Var>,
    /// Backward states indexed by word position.
    pub backward: Vec<Var>,
}

/// Number of real words, checking that `mask` is a non-empty prefix.
fn real_words(mask: &[bool]) -> Result<usize> {
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::dim("bilstm", "mask must mark a prefix of the words"));
    }
    if n == 0 {
        return Err(Error::EmptyDocument);
    }
    Ok(n)
}

fn run_direction<T: Scalar>(
    g: &mut Graph<T>,
    p: &LstmParams<Var>,
    inputs: &[Var],
    order: impl Iterator<Item = usize>,
) -> Result<Vec<Option<Var>>> {
    let hidden = g.shape(p.b_f)[0];
    let mut s = g.constant(Tensor::zeros(vec![hidden]))?;
    let mut c = g.constant(Tensor::zeros(vec![hidden]))?;
    let mut states = vec![None; inputs.len()];
    for t in order {
        (s, c) = lstm_step(g, p, inputs[t], s, c)?;
        states[t] = Some(s);
    }
    Ok(states)
}

/// Reads the real words forwards and backwards. Padding rows of `topics`
/// are never consumed.
pub fn bilstm<T: Scalar>(g: &mut Graph<T>, p: &BiLstmParams<Var>, topics: Var, mask: &[bool]) -> Result<BiLstmOutput> {
    let shape = g.shape(topics).to_vec();
    if shape.len() != 2 || shape[0] != mask.len() {
        return Err(Error::dim(
            "bilstm",
            format!("topics {shape:?} with a mask of {} words", mask.len()),
        ));
    }
    let n = real_words(mask)?;
    let inputs = (0..n).map(|t| g.row(topics, t)).collect::<Result<Vec<_>>>()?;
    let fwd: Vec<Var> = run_direction(g, &p.forward, &inputs, 0..n)?.into_iter().flatten().collect();
    let bwd: Vec<Var> = run_direction(g, &p.backward, &inputs, (0..n).rev())?.into_iter().flatten().collect();

    let hidden = g.shape(fwd[0])[0];
    let mut rows = Vec::with_capacity(n + 1);
    for t in 0..n {
        let row = g.concat(&[fwd[t], bwd[t]], 0)?;
        rows.push(g.reshape(row, vec![1, 2 * hidden])?);
    }
    if n < mask.len() {
        rows.push(g.constant(Tensor::zeros(vec![mask.len() - n, 2 * hidden]))?);
    }
    let h = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
    let s_pos = g.concat(&[fwd[n - 1], bwd[0]], 0)?;
    Ok(BiLstmOutput {
        h,
        s_pos,
        forward: fwd,
        backward: bwd,
    })
}

/// `masked_softmax(H · weight + bias)`; padded words get weight exactly 0.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    p: &AttentionParams<Var>,
    h: Var,
    mask: &[bool],
) -> Result<Var> {
    let scores = g.matmul(h, p.weight)?;
    let scores = g.add(scores, p.bias)?;
    g.masked_softmax(scores, mask)
}

#[derive(Clone, Copy, Debug)]
pub struct Sentence {
    pub s_bow: Var,
    pub s_pos: Var,
    /// `s_bow ⊕ s_pos`
    pub s: Var,
}

/// Attention-weighted sum of topic vectors, concatenated with the
/// positional features.
pub fn assemble_sentence<T: Scalar>(g: &mut Graph<T>, topics: Var, weights: Var, s_pos: Var) -> Result<Sentence> {
    let s_bow = g.weighted_sum(weights, topics)?;
    if g.shape(s_pos).len() != 1 {
        return Err(Error::dim("assemble_sentence", format!("s_pos must be a vector, got {:?}", g.shape(s_pos))));
    }
    let s = g.concat(&[s_bow, s_pos], 0)?;
    Ok(Sentence { s_bow, s_pos, s })
}
