//! Saturating power law `plcc(d) = a - b * d^(-c)` fitted to
//! (data fraction, PLCC) points.
//!
//! The exponent is searched on the grid `c = 0.010, 0.011, ..., 2.000`. For
//! each candidate the pair `(a, b)` is the ordinary least-squares solution,
//! with `b` clamped at 0 (then `a` is the mean). The best grid point is then
//! refined by golden-section search within one grid step, bounded by the grid
//! range, and the refinement is kept only if it lowers the residual sum.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ces;

pub const GRID_MIN: f64 = 0.01;
pub const GRID_MAX: f64 = 2.0;
pub const GRID_STEP: f64 = 0.001;
const GRID_LEN: usize = 1991;

/// Data fractions and PLCC values reported for 1%, 5%, 10% and 20% of the
/// training data; the last one is a test-set figure.
pub const REPORTED_POINTS: [ScalingPoint; 4] = [
    ScalingPoint {
        fraction: 0.01,
        plcc: 0.30,
    },
    ScalingPoint {
        fraction: 0.05,
        plcc: 0.32,
    },
    ScalingPoint {
        fraction: 0.10,
        plcc: 0.33,
    },
    ScalingPoint {
        fraction: 0.20,
        plcc: 0.35,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub fraction: f64,
    pub plcc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sse: f64,
}

/// The `k`-th exponent of the search grid.
pub fn grid_c(k: usize) -> f64 {
    (10 + k) as f64 / 1000.0
}

pub fn grid() -> impl Iterator<Item = f64> {
    (0..GRID_LEN).map(grid_c)
}

pub fn residual_sse(points: &[ScalingPoint], a: f64, b: f64, c: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = p.plcc - (a - b * p.fraction.powf(-c));
            r * r
        })
        .sum()
}

/// Least-squares `(a, b)` for a fixed exponent, with `b >= 0`.
pub fn solve_linear(points: &[ScalingPoint], c: f64) -> ScalingFit {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.fraction.powf(-c)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.plcc).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, p) in xs.iter().zip(points) {
        sxy += (x - mx) * (p.plcc - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    // y = a - b x, so b is the negated slope
    let (a, b) = if slope < 0.0 {
        (my - slope * mx, -slope)
    } else {
        (my, 0.0)
    };
    ScalingFit {
        a,
        b,
        c,
        sse: residual_sse(points, a, b, c),
    }
}

fn validate(points: &[ScalingPoint]) -> Result<()> {
    for p in points {
        if !(p.fraction > 0.0 && p.fraction <= 1.0) {
            return Err(Error::Config(format!("data fraction {} outside (0, 1]", p.fraction)));
        }
        if !p.plcc.is_finite() {
            return Err(Error::NonFinite {
                context: format!("plcc at fraction {}", p.fraction),
            });
        }
    }
    let mut fractions: Vec<u64> = points.iter().map(|p| p.fraction.to_bits()).collect();
    fractions.sort_unstable();
    fractions.dedup();
    if fractions.len() < 3 {
        return Err(Error::Underdetermined(fractions.len()));
    }
    Ok(())
}

/// Best fit on the exponent grid alone (ties go to the smaller exponent).
pub fn grid_search(points: &[ScalingPoint]) -> Result<ScalingFit> {
    validate(points)?;
    Ok(grid()
        .map(|c| solve_linear(points, c))
        .reduce(|best, f| if f.sse < best.sse { f } else { best })
        .expect("grid is nonempty"))
}

fn golden_section(points: &[ScalingPoint], mut lo: f64, mut hi: f64) -> ScalingFit {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = solve_linear(points, x1);
    let mut f2 = solve_linear(points, x2);
    for _ in 0..80 {
        if hi - lo <= 1e-13 {
            break;
        }
        if f1.sse <= f2.sse {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = solve_linear(points, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = solve_linear(points, x2);
        }
    }
    if f1.sse <= f2.sse {
        f1
    } else {
        f2
    }
}

pub fn fit_power_law(points: &[ScalingPoint]) -> Result<ScalingFit> {
    let coarse = grid_search(points)?;
    if coarse.b == 0.0 {
        return Ok(coarse);
    }
    let lo = (coarse.c - GRID_STEP).max(GRID_MIN);
    let hi = (coarse.c + GRID_STEP).min(GRID_MAX);
    let fine = golden_section(points, lo, hi);
    Ok(if fine.sse < coarse.sse { fine } else { coarse })
}

impl ScalingFit {
    /// Fitted PLCC at data fraction `d > 0`.
    pub fn predict(&self, d: f64) -> f64 {
        assert!(d > 0.0, "data fraction must be positive, got {d}");
        self.a - self.b * d.powf(-self.c)
    }
}

pub fn extrapolate(fit: &ScalingFit, d: f64) -> f64 {
    fit.predict(d)
}

pub fn extrapolate_ces(fit: &ScalingFit, d: f64, ces_factor: f64) -> f64 {
    ces(fit.predict(d), ces_factor)
}

pub fn read_points_csv(path: &Path) -> Result<Vec<ScalingPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| crate::corpus::csv_io(path, e))?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| crate::corpus::csv_io(path, e)))
        .collect()
}

pub fn write_points_csv(path: &Path, points: &[ScalingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::corpus::csv_io(path, e))?;
    for p in points {
        w.serialize(p).map_err(|e| crate::corpus::csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fractions 0.01, 0.02, ..., 1.00.
pub fn default_d_grid() -> Vec<f64> {
    (1..=100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Serialize)]
struct CurveRow<'a> {
    series: &'a str,
    fraction: f64,
    plcc: f64,
}

/// Writes the fitted curve over `d_grid` and the observed points to a CSV
/// (`series,fraction,plcc`, series `fit` or `observed`) and, when `svg` is
/// given, a line chart with the points marked.
pub fn emit_curve(
    fit: &ScalingFit,
    points: &[ScalingPoint],
    d_grid: &[f64],
    csv_path: &Path,
    svg: Option<&Path>,
) -> Result<()> {
    if d_grid.is_empty() {
        return Err(Error::Empty("fraction grid"));
    }
    if let Some(d) = d_grid.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
        return Err(Error::Config(format!("grid fraction {d} outside (0, 1]")));
    }
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| crate::corpus::csv_io(csv_path, e))?;
    let fitted = d_grid.iter().map(|&d| ("fit", d, fit.predict(d)));
    let observed = points.iter().map(|p| ("observed", p.fraction, p.plcc));
    for (series, fraction, plcc) in fitted.chain(observed) {
        w.serialize(CurveRow { series, fraction, plcc })
            .map_err(|e| crate::corpus::csv_io(csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    if let Some(path) = svg {
        std::fs::write(path, render_svg(fit, points, d_grid)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn render_svg(fit: &ScalingFit, points: &[ScalingPoint], d_grid: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let curve: Vec<(f64, f64)> = d_grid.iter().map(|&d| (d, fit.predict(d))).collect();
    let ys = curve.iter().map(|c| c.1).chain(points.iter().map(|p| p.plcc));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if y1 - y0 < 1e-6 {
        y0 -= 0.05;
        y1 += 0.05;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |d: f64| M + d * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    for k in 0..=5 {
        let d = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{d:.1}</text>"#,
            sx(d),
            H - M + 16.0
        );
        let y = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{y:.3}</text>"#,
            M - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">data fraction</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">PLCC</text>"#,
        H / 2.0,
        H / 2.0
    );
    let path: Vec<String> = curve
        .iter()
        .map(|&(d, y)| format!("{:.2},{:.2}", sx(d), sy(y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        path.join(" ")
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"/>"#,
            sx(p.fraction),
            sy(p.plcc)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12">a={:.4} b={:.4} c={:.4}</text>"#,
        M + 10.0,
        M - 12.0,
        fit.a,
        fit.b,
        fit.c
    );
    s.push_str("</svg>\n");
    s
}
