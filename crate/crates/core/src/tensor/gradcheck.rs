//! Central-difference gradient checker (64-bit only).

use super::{Prng, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Probe at most this many coordinates per parameter tensor (chosen by a
    /// seeded shuffle). `None` probes every coordinate.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-3, max_coords_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probes crossed a relu/relu6/maxpool kink and
    /// were therefore not comparable.
    pub skipped_kinks: usize,
    /// `(tensor, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(params: &[Tensor<f64>], f: &mut F) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NumericFailure(format!("gradient_check: loss evaluated to {value}")));
    }
    Ok((value, tape.kink_signature()))
}

/// Compares reverse-mode gradients of `f` against central differences and
/// returns the maximum relative error over the probed coordinates.
pub fn gradient_check<F>(params: &[Tensor<f64>], config: &GradCheckConfig, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    gradient_check_against(params, &analytic, config, f)
}

/// Like [`gradient_check`], but against caller-supplied analytic gradients.
pub fn gradient_check_against<F>(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    config: &GradCheckConfig,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eps = config.eps;
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::invalid(format!("gradient_check: eps {eps} outside [1e-5, 1e-2]")));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(a, p)| a.shape() != p.shape()) {
        return Err(Error::invalid("gradient_check: analytic gradients do not match parameters"));
    }
    let mut report = GradCheckReport::default();
    if params.is_empty() {
        return Ok(report);
    }
    let (_, base_sig) = eval_loss(params, &mut f)?;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut prng = Prng::new(config.seed);
    for (ti, p) in params.iter().enumerate() {
        let mut coords: Vec<usize> = (0..p.len()).collect();
        if let Some(limit) = config.max_coords_per_tensor {
            if limit < coords.len() {
                prng.shuffle(&mut coords);
                coords.truncate(limit);
                coords.sort_unstable();
            }
        }
        for c in coords {
            let orig = p.data()[c];
            work[ti].data_mut()[c] = orig + eps;
            let (plus, sig_plus) = eval_loss(&work, &mut f)?;
            work[ti].data_mut()[c] = orig - eps;
            let (minus, sig_minus) = eval_loss(&work, &mut f)?;
            work[ti].data_mut()[c] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti].data()[c];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, c, a, numeric));
            }
        }
    }
    Ok(report)
}
