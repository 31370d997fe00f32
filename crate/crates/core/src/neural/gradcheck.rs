use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_len, Error, Result};

const REL_FLOOR: f64 = 1e-6;
const KINK: f64 = 1e-3;

/// Compares `analytic` against central differences of `loss` on `probes`
/// coordinates drawn without replacement (all of them when `probes >= len`).
///
/// Returns the largest `|a - n| / max(|a|, |n|, 1e-6)`. Below the floor the
/// central difference is dominated by rounding (about `eps·|L| / h`).
/// Coordinates whose one-sided differences disagree by more than `KINK`
/// straddle a non-differentiable point (a ReLU switching) and are skipped.
pub fn finite_diff_check<F>(
    loss: F,
    analytic: &[f64],
    params: &[f64],
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    ensure_len(params.len(), analytic.len())?;
    let coords: Vec<usize> = if probes >= params.len() {
        (0..params.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, params.len(), probes).into_vec();
        picked.sort_unstable();
        picked
    };
    let mut theta = params.to_vec();
    let mut worst: f64 = 0.0;
    let centre = loss(params);
    for i in coords {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = loss(&theta);
        theta[i] = orig - h;
        let minus = loss(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() || !centre.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        if ((plus - centre) - (centre - minus)).abs() / h > KINK {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
