use super::{Parameter, RngStream};
use crate::error::{Error, Result};

/// A closed, deterministic computation from parameters to a scalar loss.
///
/// Inputs that should be checked can be exposed as parameters too.
pub trait GradCheckable {
    fn check_parameters(&mut self) -> Vec<&mut Parameter>;

    /// Forward only.
    fn loss(&mut self) -> Result<f64>;

    /// Forward and backward; analytic gradients must be accumulated into the
    /// parameters returned by `check_parameters` (which start zeroed).
    fn loss_and_grad(&mut self) -> Result<f64>;
}

/// Which entries of each parameter to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coverage {
    All,
    /// At most this many entries per parameter, chosen with a seeded stream.
    Sample { per_parameter: usize, seed: u64 },
}

/// Max relative error between analytic and central-difference gradients
/// over every checked entry:
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(fragment: &mut impl GradCheckable, epsilon: f64) -> Result<f64> {
    grad_check_with(fragment, epsilon, Coverage::All)
}

pub fn grad_check_with(
    fragment: &mut impl GradCheckable,
    epsilon: f64,
    coverage: Coverage,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be > 0")));
    }
    let first = fragment.loss()?;
    let second = fragment.loss()?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    for p in fragment.check_parameters() {
        p.zero_grad();
    }
    fragment.loss_and_grad()?;
    let analytic: Vec<Vec<f64>> = fragment
        .check_parameters()
        .iter()
        .map(|p| p.grad().data().to_vec())
        .collect();

    let mut rng = match coverage {
        Coverage::All => None,
        Coverage::Sample { seed, .. } => Some(RngStream::new(seed)),
    };
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        let mut indices: Vec<usize> = (0..grads.len()).collect();
        if let (Some(r), Coverage::Sample { per_parameter, .. }) = (rng.as_mut(), coverage) {
            r.shuffle(&mut indices);
            indices.truncate(per_parameter);
        }
        for idx in indices {
            let orig = fragment.check_parameters()[pi].value().data()[idx];
            fragment.check_parameters()[pi].value_mut().data_mut()[idx] = orig + epsilon;
            let plus = fragment.loss()?;
            fragment.check_parameters()[pi].value_mut().data_mut()[idx] = orig - epsilon;
            let minus = fragment.loss()?;
            fragment.check_parameters()[pi].value_mut().data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grads[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > worst {
                log::debug!(
                    "grad_check: {}[{idx}] analytic {a:e} numeric {numeric:e}",
                    fragment.check_parameters()[pi].name()
                );
            }
            worst = worst.max(err);
        }
    }
    for p in fragment.check_parameters() {
        p.zero_grad();
    }
    Ok(worst)
}
