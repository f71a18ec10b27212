use crate::error::{arg_err, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` and `dL/dp`, both
/// evaluated at the clamped probability.
pub fn bce_loss(p: f64, y: u8) -> Result<(f64, f64)> {
    if y > 1 {
        return Err(arg_err!("label must be 0 or 1, got {y}"));
    }
    if p.is_nan() {
        return Err(arg_err!("probability is NaN"));
    }
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(if y == 1 { (-p.ln(), -1.0 / p) } else { (-(1.0 - p).ln(), 1.0 / (1.0 - p)) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5, 1).unwrap().0 - ln2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0).unwrap().0 - ln2).abs() < 1e-15);
        assert!(bce_loss(1.0 - BCE_EPS, 1).unwrap().0 < 1e-6);
        assert!(bce_loss(0.5, 2).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let h = 1e-6;
        let (_, g) = bce_loss(0.3, 0).unwrap();
        let fd = (bce_loss(0.3 + h, 0).unwrap().0 - bce_loss(0.3 - h, 0).unwrap().0) / (2.0 * h);
        assert!((g - fd).abs() / g.abs() < 1e-8);
    }
}
