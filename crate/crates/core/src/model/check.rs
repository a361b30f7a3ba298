use serde::Serialize;

use super::{forward_document, ModelConfig, Tdsm};
use crate::error::Result;
use crate::tensor::{grad_check, GradCheckConfig, Graph, Var};
use crate::text::{CharCodec, EncodedDocument};

/// Largest relative error found for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub within_noise: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelGradCheck {
    pub params: Vec<NamedCheck>,
}

impl ModelGradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&NamedCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_err < tol)
    }
}

/// Rounding units of slack given to the central difference. The attention
/// score bias has an exactly zero gradient, so its difference quotient is
/// pure rounding noise.
pub const NOISE_ULPS: f64 = 16.0;

const DOCS: [(&str, usize); 2] = [("stocks fell sharply", 0), ("late goal wins the cup", 1)];

/// Finite-difference check of every parameter tensor of a 64-bit model
/// from [`Tdsm::init_dense`] on a fixed two-document batch, summing the two
/// cross-entropy losses. At most `coords` entries per tensor are perturbed.
pub fn model_grad_check(config: &ModelConfig, seed: u64, coords: usize) -> Result<ModelGradCheck> {
    let model = Tdsm::<f64>::init_dense(config.clone(), seed)?;
    let codec = CharCodec::new(config.word_len);
    let docs: Vec<EncodedDocument> = DOCS
        .iter()
        .map(|&(text, label)| EncodedDocument::encode(text, label % config.classes, &codec, 8))
        .collect();
    let named = model.params.named();
    let tensors: Vec<_> = named.iter().map(|(_, t)| (*t).clone()).collect();
    let report = grad_check(
        |g: &mut Graph<f64>, vars: &[Var]| {
            let p = super::ModelParams::from_leaves(&model.params, vars.iter().copied())
                .expect("one var per parameter");
            let mut total: Option<Var> = None;
            for d in &docs {
                let out = forward_document(g, &model.config, &p, d.word_rows(), &vec![true; d.n_words])?;
                let loss = g.cross_entropy(out.probs, &[d.label])?;
                total = Some(match total {
                    Some(t) => g.add(t, loss)?,
                    None => loss,
                });
            }
            Ok(total.expect("two documents"))
        },
        &tensors,
        &GradCheckConfig {
            max_coords_per_param: Some(coords),
            seed,
            noise_ulps: Some(NOISE_ULPS),
            ..Default::default()
        },
    )?;
    Ok(ModelGradCheck {
        params: report
            .params
            .iter()
            .map(|c| NamedCheck {
                name: named[c.index].0.clone(),
                max_rel_err: c.max_rel_err,
                coords_checked: c.coords_checked,
                within_noise: c.within_noise,
            })
            .collect(),
    })
}
