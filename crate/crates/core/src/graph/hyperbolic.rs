use crate::error::{Error, Result};

/// Poincaré-ball distance `arcosh(1 + 2‖a-b‖² / ((1-‖a‖²)(1-‖b‖²)))`.
///
/// Both points must lie strictly inside the unit ball.
pub fn hyperbolic_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("hyperbolic_distance", &[a.len()], &[b.len()]));
    }
    let na: f64 = a.iter().map(|v| v * v).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    if !(na < 1.0 && nb < 1.0) {
        return Err(Error::Data(format!(
            "points must lie inside the unit ball (squared norms {na}, {nb})"
        )));
    }
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let x = 1.0 + 2.0 * diff / ((1.0 - na) * (1.0 - nb));
    Ok((x + (x * x - 1.0).sqrt()).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points() {
        assert_eq!(hyperbolic_distance(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
    }

    #[test]
    fn half_to_origin_is_ln3() {
        let d = hyperbolic_distance(&[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert!((d - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn boundary_rejected() {
        assert!(hyperbolic_distance(&[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(hyperbolic_distance(&[0.0, 0.0], &[0.8, 0.8]).is_err());
    }
}
