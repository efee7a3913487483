use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Least-squares fit of `y = c·x^k` on log–log axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    /// Standard error of the slope; zero for two points.
    pub stderr: f64,
    pub prefactor: f64,
}

pub fn power_law_fit(xs: &[f64], ys: &[f64]) -> CliResult<PowerFit> {
    if xs.len() != ys.len() {
        return Err(CliError::Config(format!(
            "fit: {} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(CliError::NeedTwoPoints(n));
    }
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(CliError::Config(format!("fit: log-log fit needs positive values, got {bad}")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CliError::Config("fit: all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let k = sxy / sxx;
    let b = my - k * mx;
    let stderr = if n > 2 {
        let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - b - k * x).powi(2)).sum();
        (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(PowerFit {
        exponent: k,
        stderr,
        prefactor: b.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TS: [f64; 3] = [1.0, 0.48, 0.17];

    #[test]
    fn linear_and_quadratic() {
        let lin: Vec<f64> = TS.iter().map(|t| 3e-5 * t).collect();
        let f = power_law_fit(&TS, &lin).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-12 && f.stderr < 1e-12);
        assert!((f.prefactor - 3e-5).abs() < 1e-17);
        let quad: Vec<f64> = TS.iter().map(|t| 0.125 * t * t).collect();
        let f = power_law_fit(&TS, &quad).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12 && f.stderr < 1e-12);
    }

    #[test]
    fn noisy_points_have_error_bar() {
        let ys = [1.0, 0.5, 0.15];
        let f = power_law_fit(&TS, &ys).unwrap();
        assert!(f.stderr > 0.0);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(power_law_fit(&[1.0], &[1.0]), Err(CliError::NeedTwoPoints(1))));
        assert!(matches!(power_law_fit(&[], &[]), Err(CliError::NeedTwoPoints(0))));
        assert!(power_law_fit(&[1.0, 0.5], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_exact_power_laws(c in 1e-8f64..1.0, k in -3.0f64..3.0) {
            let ys: Vec<f64> = TS.iter().map(|t| c * t.powf(k)).collect();
            let f = power_law_fit(&TS, &ys).unwrap();
            prop_assert!((f.exponent - k).abs() < 1e-9);
            prop_assert!((f.prefactor / c - 1.0).abs() < 1e-9);
        }
    }
}
