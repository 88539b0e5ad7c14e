use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};

/// Mean of binary losses.
pub fn empirical_risk(losses: &[bool]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("empirical risk of an empty loss list"));
    }
    let count = losses.iter().filter(|&&l| l).count();
    Ok(count as f64 / losses.len() as f64)
}

/// `P(Binom(n, epsilon) <= successes)`: super-uniform under `risk > epsilon`.
///
/// Evaluated through the regularized incomplete beta identity
/// `P(X <= k) = I_{1 - epsilon}(n - k, k + 1)`.
pub fn binomial_tail_pvalue(n: usize, successes: usize, epsilon: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("binomial p-value needs n >= 1"));
    }
    if successes > n {
        return Err(Error::invalid(format!(
            "successes {successes} exceed n = {n}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} not in (0, 1)")));
    }
    if successes == n {
        return Ok(1.0);
    }
    let p = checked_beta_reg(
        (n - successes) as f64,
        successes as f64 + 1.0,
        1.0 - epsilon,
    )
    .map_err(|e| Error::invalid(format!("incomplete beta evaluation failed: {e}")))?;
    Ok(p.clamp(0.0, 1.0))
}
