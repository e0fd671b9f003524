use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `(mean, t_{0.975, n-1} · s / sqrt(n))` with the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Validation(format!("a confidence interval needs at least 2 values, got {n}")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("confidence interval input {v}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::Validation(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / nf.sqrt()))
}

/// Mean, CI half-width, minimum and maximum of one epoch across runs. The
/// mean is kept inside `[min, max]` against rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub half_width: f64,
    pub min: f64,
    pub max: f64,
}

pub fn band(values: &[f64]) -> Result<Band> {
    let (mean, half_width) = confidence_interval(values)?;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(Band { mean: mean.clamp(min, max), half_width, min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_have_zero_width() {
        assert_eq!(confidence_interval(&[1.0, 1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn two_point_case() {
        let (m, h) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((h - 12.706204736 * 0.5).abs() < 1e-6, "{h}");
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(confidence_interval(&[1.0]), Err(Error::Validation(_))));
        assert!(confidence_interval(&[]).is_err());
    }
}
