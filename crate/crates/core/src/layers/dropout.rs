use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Inverted dropout. Returns the output and the per-unit scale that was
/// applied (0 or `1/(1-rate)`), which the backward pass reuses.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &[f64],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Vector, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("rate", format!("{rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.into(), vec![1.0; x.len()]));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let out: Vec<f64> = x.iter().zip(&scales).map(|(v, s)| v * s).collect();
    Ok((out.into(), scales))
}
