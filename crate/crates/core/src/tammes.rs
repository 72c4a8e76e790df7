//! Reference optima for small best-packing instances.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSource {
    Analytic,
    BruteForce,
}

impl CaseSource {
    pub fn name(self) -> &'static str {
        match self {
            CaseSource::Analytic => "analytic",
            CaseSource::BruteForce => "brute_force",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TammesCase {
    pub n: usize,
    pub d: usize,
    /// Radians.
    pub optimal_min_angle: f64,
    pub source: CaseSource,
}

impl TammesCase {
    const fn analytic(n: usize, d: usize, angle: f64) -> Self {
        Self {
            n,
            d,
            optimal_min_angle: angle,
            source: CaseSource::Analytic,
        }
    }
}

/// Closed-form optima: antipodal pairs, regular polygons on the circle,
/// regular simplices and cross-polytopes.
pub fn analytic_cases() -> Vec<TammesCase> {
    let mut cases = Vec::new();
    for d in 2..=4 {
        cases.push(TammesCase::analytic(2, d, PI));
    }
    cases.push(TammesCase::analytic(3, 2, 2.0 * PI / 3.0));
    cases.push(TammesCase::analytic(4, 2, FRAC_PI_2));
    cases.push(TammesCase::analytic(5, 2, 2.0 * PI / 5.0));
    // (3, 2) is also the 2-simplex; keep the first entry only
    for d in 3..=4 {
        cases.push(TammesCase::analytic(d + 1, d, (-1.0 / d as f64).acos()));
    }
    // (4, 2) coincides with the square above
    cases.push(TammesCase::analytic(6, 3, FRAC_PI_2));
    cases
}

/// Known optimum for `(n, d)`, if one is listed. Beyond the explicit cases
/// this covers the regular n-gon on the circle, simplices in any dimension
/// (`n <= d + 1`), the right-angle range `d + 2 <= n <= 2d`, and the
/// icosahedron.
pub fn lookup(n: usize, d: usize) -> Option<TammesCase> {
    if n < 2 || d < 2 {
        return None;
    }
    let angle = if n == 2 {
        PI
    } else if d == 2 {
        2.0 * PI / n as f64
    } else if n <= d + 1 {
        (-1.0 / (n - 1) as f64).acos()
    } else if n <= 2 * d {
        FRAC_PI_2
    } else if (n, d) == (12, 3) {
        (1.0 / 5.0f64.sqrt()).acos()
    } else {
        return None;
    };
    Some(TammesCase::analytic(n, d, angle))
}

/// Minimum gap of `n` points on the circle placed at `0`, `gap`, and the
/// remaining `n - 2` spread evenly over what is left.
fn min_gap_with_first(n: usize, gap: f64) -> f64 {
    let rest = (2.0 * PI - gap) / (n - 1) as f64;
    gap.min(rest)
}

/// Grid search over the first gap of an `n`-point circle configuration.
///
/// With points ordered around the circle, the minimum angular separation is
/// the minimum of the `n` consecutive gaps, which sum to `2 pi`. For any
/// fixed first gap the best completion spreads the rest evenly, so the
/// search reduces to one free variable.
pub fn brute_force_circle(n: usize, grid_resolution: usize) -> Result<TammesCase> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if n > 8 {
        return Err(Error::InvalidConfig(format!("circle brute force supports n <= 8, got {n}")));
    }
    if grid_resolution < 10_000 {
        return Err(Error::InvalidConfig(format!(
            "grid resolution must be >= 10000, got {grid_resolution}"
        )));
    }
    let best = (1..grid_resolution)
        .map(|k| {
            let gap = 2.0 * PI * k as f64 / grid_resolution as f64;
            min_gap_with_first(n, gap)
        })
        .fold(0.0f64, f64::max);
    Ok(TammesCase {
        n,
        d: 2,
        optimal_min_angle: best,
        source: CaseSource::BruteForce,
    })
}

/// Brute force is only defined on the circle.
pub fn brute_force(n: usize, d: usize, grid_resolution: usize) -> Result<TammesCase> {
    if d != 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    brute_force_circle(n, grid_resolution)
}

pub fn write_cases_csv<W: Write>(cases: &[TammesCase], mut w: W) -> Result<()> {
    writeln!(w, "n,d,optimal_min_angle_radians,source")?;
    for c in cases {
        writeln!(w, "{},{},{},{}", c.n, c.d, c.optimal_min_angle, c.source.name())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn analytic_values() {
        assert_abs_diff_eq!(lookup(4, 3).unwrap().optimal_min_angle, (-1.0f64 / 3.0).acos());
        assert_abs_diff_eq!(lookup(4, 3).unwrap().optimal_min_angle.to_degrees(), 109.4712, epsilon = 1e-4);
        assert_abs_diff_eq!(lookup(6, 3).unwrap().optimal_min_angle, FRAC_PI_2);
        assert_abs_diff_eq!(lookup(3, 2).unwrap().optimal_min_angle, 2.0 * PI / 3.0);
        assert_abs_diff_eq!(lookup(5, 4).unwrap().optimal_min_angle, (-0.25f64).acos());
        assert_eq!(lookup(2, 17).unwrap().optimal_min_angle, PI);
        assert_abs_diff_eq!(lookup(7, 5).unwrap().optimal_min_angle, FRAC_PI_2);
        assert_abs_diff_eq!(lookup(3, 9).unwrap().optimal_min_angle, 2.0 * PI / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lookup(12, 3).unwrap().optimal_min_angle.to_degrees(), 63.4349, epsilon = 1e-4);
        assert!(lookup(11, 5).is_none());
        assert!(lookup(7, 3).is_none());
        assert!(lookup(1, 3).is_none());
        for c in analytic_cases() {
            assert_abs_diff_eq!(lookup(c.n, c.d).unwrap().optimal_min_angle, c.optimal_min_angle, epsilon = 1e-15);
        }
    }

    #[test]
    fn case_list_is_unique() {
        let cases = analytic_cases();
        for (i, a) in cases.iter().enumerate() {
            for b in &cases[i + 1..] {
                assert!((a.n, a.d) != (b.n, b.d), "duplicate {a:?}");
            }
            assert!(a.optimal_min_angle > 0.0 && a.optimal_min_angle <= PI);
        }
    }

    #[test]
    fn brute_force_matches_regular_polygon() {
        assert_abs_diff_eq!(brute_force_circle(5, 10_000).unwrap().optimal_min_angle, 2.0 * PI / 5.0, epsilon = 1e-3);
        assert_abs_diff_eq!(brute_force_circle(2, 10_000).unwrap().optimal_min_angle, PI, epsilon = 1e-3);
        assert_abs_diff_eq!(brute_force_circle(8, 10_000).unwrap().optimal_min_angle, PI / 4.0, epsilon = 1e-3);
    }

    #[test]
    fn brute_force_agrees_with_every_circle_case() {
        for c in analytic_cases().into_iter().filter(|c| c.d == 2) {
            let bf = brute_force_circle(c.n, 20_000).unwrap();
            assert_abs_diff_eq!(bf.optimal_min_angle, c.optimal_min_angle, epsilon = 1e-3);
        }
    }

    #[test]
    fn brute_force_rejects_other_dimensions() {
        assert!(matches!(brute_force(4, 3, 10_000), Err(Error::UnsupportedDimension(3))));
        assert!(brute_force_circle(9, 10_000).is_err());
        assert!(brute_force_circle(4, 100).is_err());
    }
}
