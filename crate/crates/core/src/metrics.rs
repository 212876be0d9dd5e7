use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CleanItem;
use crate::error::{Error, Result};
use crate::loss::{eval_loss, Huber};
use crate::model::{predict_items, Model};

pub const DEFAULT_CES_FACTOR: f64 = 1.100;

/// Pearson correlation, computed two-pass (means first) and clamped to
/// [-1, 1].
pub fn plcc(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two samples"));
    }
    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let mt = targets.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in preds.iter().zip(targets) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("predictions have zero variance"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("targets have zero variance"));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(Error::NonFinite {
            context: "pearson correlation".into(),
        });
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Composite score modelled as a fixed multiple of PLCC.
pub fn ces(plcc_value: f64, factor: f64) -> f64 {
    factor * plcc_value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub plcc: f64,
    pub ces: f64,
    pub ces_factor: f64,
    pub eval_huber: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn from_predictions(preds: &[f64], targets: &[f64], huber: &Huber, ces_factor: f64) -> Result<Self> {
        if ces_factor.is_nan() || ces_factor <= 0.0 {
            return Err(Error::Config(format!("ces factor must be positive, got {ces_factor}")));
        }
        let r = plcc(preds, targets)?;
        Ok(Self {
            plcc: r,
            ces: ces(r, ces_factor),
            ces_factor,
            eval_huber: eval_loss(preds, targets, huber)?,
            n_samples: preds.len(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("PLCC", format!("{:.4}", self.plcc)),
            ("CES", format!("{:.4}", self.ces)),
            ("CES factor", format!("{:.3}", self.ces_factor)),
            ("Huber (unweighted)", format!("{:.6}", self.eval_huber)),
            ("Samples", self.n_samples.to_string()),
        ];
        write_table(f, ("Metric", "Value"), &rows)
    }
}

/// Two-column aligned text table.
pub fn write_table(f: &mut impl fmt::Write, header: (&str, &str), rows: &[(&str, String)]) -> fmt::Result {
    let w0 = rows
        .iter()
        .map(|r| r.0.len())
        .chain([header.0.len()])
        .max()
        .unwrap_or(0);
    let w1 = rows
        .iter()
        .map(|r| r.1.len())
        .chain([header.1.len()])
        .max()
        .unwrap_or(0);
    writeln!(f, "{:<w0$}  {:>w1$}", header.0, header.1)?;
    writeln!(f, "{}  {}", "-".repeat(w0), "-".repeat(w1))?;
    for (k, v) in rows {
        writeln!(f, "{k:<w0$}  {v:>w1$}")?;
    }
    Ok(())
}

/// Deterministic inference over `items` followed by PLCC, CES and the
/// unweighted Huber loss.
pub fn evaluate(model: &Model, items: &[CleanItem], ces_factor: f64) -> Result<MetricsReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let huber = Huber::new(model.config.delta)?;
    let preds = predict_items(model, items)?;
    let targets: Vec<f64> = items.iter().map(|i| i.average_rating).collect();
    MetricsReport::from_predictions(&preds, &targets, &huber, ces_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn plcc_examples() {
        assert_abs_diff_eq!(plcc(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
        let expected = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        assert_abs_diff_eq!(
            plcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            expected,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(expected, 0.98198, epsilon = 1e-5);
    }

    #[test]
    fn plcc_errors() {
        assert!(matches!(
            plcc(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            plcc(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(plcc(&[1.0], &[1.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(plcc(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn ces_examples() {
        assert_abs_diff_eq!(ces(0.3648, DEFAULT_CES_FACTOR), 0.4013, epsilon = 5e-4);
        assert_abs_diff_eq!(ces(0.402, DEFAULT_CES_FACTOR), 0.4422, epsilon = 1e-12);
        assert_eq!(ces(0.0, DEFAULT_CES_FACTOR), 0.0);
    }

    #[test]
    fn report_table_is_aligned() {
        let h = Huber::default();
        let r = MetricsReport::from_predictions(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &h, 1.1).unwrap();
        assert_eq!(r.eval_huber, 0.0);
        let text = r.to_string();
        let widths: Vec<usize> = text.lines().map(|l| l.len()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
        assert!(MetricsReport::from_predictions(&[1.0, 2.0], &[1.0, 2.0], &h, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn affine_invariance_and_symmetry(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..100),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -5.0f64..5.0,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let Ok(r) = plcc(&p, &t) else { return Ok(()) };
            let shifted: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            prop_assert!((plcc(&shifted, &t).unwrap() - a.signum() * r).abs() < 1e-10);
            prop_assert_eq!(plcc(&t, &p).unwrap(), r);
        }

        #[test]
        fn ces_is_increasing(x in -1.0f64..1.0, dx in 1e-6f64..1.0, factor in 0.1f64..3.0) {
            prop_assert!(ces(x + dx, factor) > ces(x, factor));
        }
    }
}
