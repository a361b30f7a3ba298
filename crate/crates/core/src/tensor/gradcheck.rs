use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    /// Sampled coordinates favour entries with a nonzero analytic gradient.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// When set, a coordinate where both `|a|` and `|n|` are within this
    /// many rounding units of the central difference (`k · ε · max(1, |f|) / eps`)
    /// counts as agreeing: the difference quotient cannot tell it from zero.
    /// Needed for gradients that vanish by symmetry.
    pub noise_ulps: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            noise_ulps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
    /// Coordinates accepted under the rounding-noise bound.
    pub within_noise: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, parameter by parameter.
///
/// `f` receives a fresh graph with every parameter bound as a
/// gradient-tracking leaf, in the order given.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = bind(&mut g, ps)?;
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars = bind(&mut g, params)?;
    let out = f(&mut g, &vars)?;
    let base = scalar_of(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Determinism(format!(
            "two evaluations at the same point gave {base} and {again}"
        )));
    }

    let noise = config
        .noise_ulps
        .map(|k| k * f64::EPSILON * base.abs().max(1.0) / config.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        let coords = pick_coords(grads, config.max_coords_per_param, &mut rng);
        let mut check = ParamCheck {
            index: pi,
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: coords.len(),
            within_noise: 0,
        };
        for (n, &c) in coords.iter().enumerate() {
            let original = work[pi].data()[c];
            work[pi].data_mut()[c] = original + config.eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[c] = original - config.eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let mut err = relative_error(grads[c], numeric);
            if noise.is_some_and(|bound| grads[c].abs() <= bound && numeric.abs() <= bound) {
                check.within_noise += 1;
                err = 0.0;
            }
            if n == 0 || err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_coord = c;
                check.analytic = grads[c];
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

fn bind(g: &mut Graph<f64>, params: &[Tensor<f64>]) -> Result<Vec<Var>> {
    params.iter().map(|p| g.param(p.clone())).collect()
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::dim(
            "grad_check",
            format!("function must return one value, got shape {:?}", t.shape()),
        ));
    }
    Ok(t.data()[0])
}

fn pick_coords(grads: &[f64], limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let Some(limit) = limit.filter(|&l| l < grads.len()) else {
        return (0..grads.len()).collect();
    };
    let nonzero: Vec<usize> = (0..grads.len()).filter(|&i| grads[i] != 0.0).collect();
    let pool: Vec<usize> = if nonzero.len() >= limit {
        nonzero
    } else {
        (0..grads.len()).collect()
    };
    let mut picked: Vec<usize> = sample(rng, pool.len(), limit)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}
