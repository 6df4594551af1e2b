use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Both samples had zero variance; `p` follows the 0/1 convention.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom. The p-value is `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "Welch's t-test needs at least two observations per sample".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        if ma == mb {
            return Ok(WelchResult {
                t: 0.0,
                df,
                p: 1.0,
                degenerate: true,
            });
        }
        log::warn!("Welch's t-test on two constant samples with different means; reporting p = 0");
        return Ok(WelchResult {
            t: if ma > mb {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            },
            df,
            p: 0.0,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let x = df / (df + t * t);
    let p = if x >= 1.0 {
        1.0
    } else {
        beta_reg(df / 2.0, 0.5, x)
    };
    Ok(WelchResult {
        t,
        df,
        p,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn shifted_samples_are_significant() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let r = welch_t(&a, &b).unwrap();
        assert!(r.p < 1e-4, "{r:?}");
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.t + 10.0).abs() < 1e-12);
        assert_eq!(welch_t(&b, &a).unwrap().p, r.p);
    }

    #[test]
    fn constant_samples() {
        let r = welch_t(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(r.degenerate && r.p == 1.0 && r.t == 0.0);
        let r = welch_t(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(r.degenerate && r.p == 0.0);
    }

    #[test]
    fn too_small() {
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    }
}
