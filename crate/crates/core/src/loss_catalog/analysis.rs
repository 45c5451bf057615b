//! Shape analysis of pointwise losses: stationary points, curvature
//! segments, beta sweeps and sample coverage.

use std::io::Write;

use serde::Serialize;

use super::{LossError, LossId, LossParams, PointwiseLoss, Variant};
use crate::batch_math::BatchVector;

pub const DEFAULT_GRID_N: usize = 10_001;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_INTERVAL: Interval = Interval { lo: -10.0, hi: 10.0 };

const MIN_GRID_N: usize = 100;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, LossError> {
        if lo >= hi || !lo.is_finite() || !hi.is_finite() {
            return Err(LossError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    fn grid(&self, n: usize) -> Vec<f64> {
        let step = (self.hi - self.lo) / (n - 1) as f64;
        (0..n)
            .map(|i| if i + 1 == n { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    Minimum,
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationaryPoint {
    pub rho: f64,
    pub value: f64,
    pub kind: StationaryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurvatureSign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
    #[serde(rename = "0")]
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexitySegment {
    pub interval: Interval,
    pub sign: CurvatureSign,
}

fn check_grid(grid_n: usize) -> Result<(), LossError> {
    if grid_n < MIN_GRID_N {
        return Err(LossError::InvalidBatch(format!(
            "grid needs at least {MIN_GRID_N} points, got {grid_n}"
        )));
    }
    Ok(())
}

fn second_difference(f: &PointwiseLoss, x: f64, h: f64) -> Result<f64, LossError> {
    Ok(f.value(x + h)? - 2.0 * f.value(x)? + f.value(x - h)?)
}

/// Scans `grid_n` equally spaced points for sign changes of `f'`, refines
/// each bracket by bisection until `|f'| <= tol`, and classifies each root
/// by the sign of the second difference there. Sorted by `rho`.
pub fn find_stationary_points(
    f: &PointwiseLoss,
    interval: Interval,
    grid_n: usize,
    tol: f64,
) -> Result<Vec<StationaryPoint>, LossError> {
    check_grid(grid_n)?;
    let xs = interval.grid(grid_n);
    let ds = xs
        .iter()
        .map(|&x| f.derivative(x).map(|d| d.value))
        .collect::<Result<Vec<_>, _>>()?;
    let h = (interval.hi - interval.lo) / (grid_n - 1) as f64;

    let mut roots = Vec::new();
    for i in 0..grid_n - 1 {
        let (mut a, mut b) = (xs[i], xs[i + 1]);
        let (mut da, db) = (ds[i], ds[i + 1]);
        let root = if da == 0.0 {
            a
        } else if db == 0.0 {
            // picked up as the left end of the next bracket
            if i + 2 < grid_n {
                continue;
            }
            b
        } else if da.signum() != db.signum() {
            let mut mid = 0.5 * (a + b);
            for _ in 0..MAX_BISECTIONS {
                mid = 0.5 * (a + b);
                let dm = f.derivative(mid)?.value;
                if dm.abs() <= tol || mid == a || mid == b {
                    break;
                }
                if dm.signum() == da.signum() {
                    a = mid;
                    da = dm;
                } else {
                    b = mid;
                }
            }
            mid
        } else {
            continue;
        };
        let curvature = second_difference(f, root, h)?;
        let kind = if curvature > 0.0 {
            StationaryKind::Minimum
        } else {
            StationaryKind::Maximum
        };
        roots.push(StationaryPoint {
            rho: root,
            value: f.value(root)?,
            kind,
        });
    }
    Ok(roots)
}

/// Maximal runs of constant second-difference sign over the grid. Segment
/// boundaries sit halfway between the last point of one run and the first
/// of the next; the outer segments extend to the interval ends.
pub fn convexity_profile(
    f: &PointwiseLoss,
    interval: Interval,
    grid_n: usize,
) -> Result<Vec<ConvexitySegment>, LossError> {
    check_grid(grid_n)?;
    let xs = interval.grid(grid_n);
    let fs = xs
        .iter()
        .map(|&x| f.value(x))
        .collect::<Result<Vec<_>, _>>()?;

    let mut segments: Vec<ConvexitySegment> = Vec::new();
    for i in 1..grid_n - 1 {
        let s = fs[i - 1] - 2.0 * fs[i] + fs[i + 1];
        let noise = 64.0 * f64::EPSILON * (fs[i - 1].abs() + 2.0 * fs[i].abs() + fs[i + 1].abs());
        let sign = if s > noise {
            CurvatureSign::Positive
        } else if s < -noise {
            CurvatureSign::Negative
        } else {
            CurvatureSign::Zero
        };
        match segments.last_mut() {
            Some(last) if last.sign == sign => last.interval.hi = xs[i],
            Some(last) => {
                let cut = 0.5 * (last.interval.hi + xs[i]);
                last.interval.hi = cut;
                segments.push(ConvexitySegment {
                    interval: Interval { lo: cut, hi: xs[i] },
                    sign,
                });
            }
            None => segments.push(ConvexitySegment {
                interval: Interval { lo: interval.lo, hi: xs[i] },
                sign,
            }),
        }
    }
    if let Some(last) = segments.last_mut() {
        last.interval.hi = interval.hi;
    }
    Ok(segments)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub loss_id: LossId,
    pub variant: Variant,
    pub beta: f64,
    pub rho: f64,
    pub f: f64,
    pub df_drho: f64,
}

/// Loss value and slope for every `(beta, rho)` pair, beta-major.
///
/// pfl rows assume equal reference log-probabilities, so the policy is
/// counted as correct exactly when `rho > 0`.
pub fn beta_sweep_table(
    id: LossId,
    betas: &[f64],
    rho_grid: &[f64],
    variant: Variant,
) -> Result<Vec<SweepRow>, LossError> {
    let mut rows = Vec::with_capacity(betas.len() * rho_grid.len());
    for &beta in betas {
        let f = PointwiseLoss::new(id, LossParams::new(beta, variant)?)?
            .with_indifferent_reference();
        for &rho in rho_grid {
            rows.push(SweepRow {
                loss_id: id,
                variant,
                beta,
                rho,
                f: f.value(rho)?,
                df_drho: f.derivative(rho)?.value,
            });
        }
    }
    Ok(rows)
}

/// `count` equally spaced points covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => Interval { lo, hi }.grid(count),
    }
}

/// Fraction of `rho_values` inside `[lo, hi]`.
pub fn sample_region_fraction(rho_values: &[f64], lo: f64, hi: f64) -> Result<f64, LossError> {
    if rho_values.is_empty() {
        return Err(LossError::EmptyInput);
    }
    let interval = Interval::new(lo, hi)?;
    let inside = rho_values
        .iter()
        .filter(|r| interval.lo <= **r && **r <= interval.hi)
        .count();
    Ok(inside as f64 / rho_values.len() as f64)
}

/// [`sample_region_fraction`] over a batch vector.
pub fn batch_region_fraction(rho: &BatchVector, lo: f64, hi: f64) -> Result<f64, LossError> {
    sample_region_fraction(rho.as_slice(), lo, hi)
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["loss_id", "variant", "beta", "rho", "f", "df_drho"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ConvexityRow {
    loss_id: LossId,
    variant: Variant,
    beta: f64,
    rho_lo: f64,
    rho_hi: f64,
    sign: CurvatureSign,
}

pub fn write_convexity_csv<W: Write>(
    out: W,
    id: LossId,
    params: &LossParams,
    segments: &[ConvexitySegment],
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    if segments.is_empty() {
        w.write_record(["loss_id", "variant", "beta", "rho_lo", "rho_hi", "sign"])?;
    }
    for s in segments {
        w.serialize(ConvexityRow {
            loss_id: id,
            variant: params.variant,
            beta: params.beta(),
            rho_lo: s.interval.lo,
            rho_hi: s.interval.hi,
            sign: s.sign,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(id: LossId, beta: f64) -> PointwiseLoss {
        PointwiseLoss::new(id, LossParams::with_beta(beta).unwrap())
            .unwrap()
            .with_indifferent_reference()
    }

    #[test]
    fn lrml_has_one_minimum_and_one_maximum() {
        let pts = find_stationary_points(&loss(LossId::Lrml, 0.05), DEFAULT_INTERVAL, DEFAULT_GRID_N, DEFAULT_TOL).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].kind, StationaryKind::Minimum);
        assert_eq!(pts[1].kind, StationaryKind::Maximum);
        // 40-digit references for the roots of f'
        assert!((pts[0].rho - -2.371_397_853_8).abs() < 1e-8);
        assert!((pts[1].rho - 1.440_122_276_0).abs() < 1e-8);
        assert!((pts[0].value - 0.785_923_92).abs() < 1e-7);
        assert!((pts[1].value - 0.878_289_61).abs() < 1e-7);
    }

    #[test]
    fn monotone_losses_have_no_stationary_points() {
        for id in [LossId::Dpo, LossId::Exp, LossId::Cell] {
            let pts = find_stationary_points(&loss(id, 0.05), DEFAULT_INTERVAL, 10_000, 1e-8).unwrap();
            assert!(pts.is_empty(), "{id}: {pts:?}");
        }
    }

    #[test]
    fn convexity_examples() {
        let dpo = convexity_profile(&loss(LossId::Dpo, 0.05), DEFAULT_INTERVAL, DEFAULT_GRID_N).unwrap();
        assert_eq!(dpo.len(), 1);
        assert_eq!(dpo[0].sign, CurvatureSign::Positive);
        assert_eq!(dpo[0].interval, DEFAULT_INTERVAL);
        let exp = convexity_profile(&loss(LossId::Exp, 0.05), DEFAULT_INTERVAL, DEFAULT_GRID_N).unwrap();
        assert_eq!(exp.len(), 1);
        assert_eq!(exp[0].sign, CurvatureSign::Positive);

        // inflection points near -0.28976 and 4.78351
        let lrml = convexity_profile(&loss(LossId::Lrml, 0.05), DEFAULT_INTERVAL, DEFAULT_GRID_N).unwrap();
        let signs: Vec<_> = lrml.iter().map(|s| s.sign).collect();
        assert_eq!(
            signs,
            [CurvatureSign::Positive, CurvatureSign::Negative, CurvatureSign::Positive]
        );
        assert!((lrml[0].interval.hi - -0.28976).abs() < 5e-3);
        assert!((lrml[1].interval.hi - 4.78351).abs() < 5e-3);
    }

    #[test]
    fn small_grids_are_rejected() {
        assert!(convexity_profile(&loss(LossId::Dpo, 0.05), DEFAULT_INTERVAL, 99).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
    }

    #[test]
    fn sweep_shape_and_consistency() {
        let betas = [0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0];
        let grid = linspace(-10.0, 10.0, 101);
        let rows = beta_sweep_table(LossId::Lrml, &betas, &grid, Variant::BetaCorrected).unwrap();
        assert_eq!(rows.len(), 909);
        assert_eq!(rows[101].beta, 0.025);
        assert_eq!(rows[101].rho, -10.0);

        let p = LossParams::with_beta(0.05).unwrap();
        for id in [LossId::Dpo, LossId::Slic, LossId::Ipo, LossId::Padll, LossId::Cell] {
            let rows = beta_sweep_table(id, &[0.05], &grid, Variant::BetaCorrected).unwrap();
            for r in rows {
                assert_eq!(r.f, super::super::eval_loss_pointwise(id, r.rho, &p, None).unwrap());
            }
        }
    }

    #[test]
    fn lrml_approaches_dpo_at_large_beta() {
        let grid = linspace(-2.0, 2.0, 401);
        let gap = |beta: f64| {
            let l = beta_sweep_table(LossId::Lrml, &[beta], &grid, Variant::BetaCorrected).unwrap();
            let d = beta_sweep_table(LossId::Dpo, &[beta], &grid, Variant::BetaCorrected).unwrap();
            let sup = l.iter().zip(&d).map(|(a, b)| (a.f - b.f).abs()).fold(0.0, f64::max);
            let scale = d.iter().map(|r| r.f).fold(0.0, f64::max);
            sup / scale
        };
        assert!(gap(5.0) < 0.05);
        assert!(gap(0.05) > 0.2);
    }

    #[test]
    fn region_fraction_examples() {
        let (lo, hi) = (-2.3714, 1.44012);
        assert_eq!(sample_region_fraction(&[0.0; 10], lo, hi).unwrap(), 1.0);
        assert_eq!(sample_region_fraction(&[2.0, 3.0], lo, hi).unwrap(), 0.0);
        let grid = linspace(-10.0, 10.0, 1_000_001);
        let frac = sample_region_fraction(&grid, lo, hi).unwrap();
        assert!((frac - 0.190576).abs() < 1e-5);
        assert_eq!(sample_region_fraction(&[], lo, hi), Err(LossError::EmptyInput));
    }

    #[test]
    fn sweep_csv_header_and_format() {
        let rows = beta_sweep_table(LossId::Exp, &[0.5], &[0.0, 2.0], Variant::AsDiscovered).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("loss_id,variant,beta,rho,f,df_drho"));
        assert_eq!(lines.next(), Some("exp,as_discovered,0.5,0.0,1.0,-0.5"));
    }

    #[test]
    fn convexity_csv_lists_segments() {
        let p = LossParams::with_beta(0.05).unwrap();
        let segs = convexity_profile(&loss(LossId::Dpo, 0.05), DEFAULT_INTERVAL, 1001).unwrap();
        let mut buf = Vec::new();
        write_convexity_csv(&mut buf, LossId::Dpo, &p, &segs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "loss_id,variant,beta,rho_lo,rho_hi,sign\ndpo,beta_corrected,0.05,-10.0,10.0,+\n"
        );
    }
}
