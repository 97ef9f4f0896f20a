//! Least-squares multilateration and position dilution of precision.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{distance, Anchor, AnchorId, Position2D};
use crate::ranging::RangeEstimate;

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE_M: f64 = 1e-9;
/// det(N) / (trace(N)/2)^2 below this is treated as rank deficient.
const RELATIVE_DET_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalizationError {
    #[error("at least 3 ranges are required, got {0}")]
    InsufficientAnchors(usize),
    #[error("anchor geometry is degenerate (collinear or coincident anchors)")]
    DegenerateGeometry,
    #[error("range refers to unknown anchor {0}")]
    UnknownAnchor(AnchorId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdopError {
    #[error("unit-vector matrix is singular")]
    SingularGeometry,
    #[error("anchor {0} coincides with the position estimate")]
    AnchorAtEstimate(AnchorId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: Position2D,
    /// Euclidean norm of the range residuals, meters.
    pub residual_norm: f64,
    pub anchors_used: Vec<AnchorId>,
}

fn rank_deficient(n: &Matrix2<f64>) -> bool {
    let scale = 0.5 * n.trace();
    !(scale > 0.0) || n.determinant() <= RELATIVE_DET_TOLERANCE * scale * scale
}

fn vec(p: Position2D) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

type Paired<'a> = (Vector2<f64>, f64, &'a AnchorId);

/// Pairs every range with its anchor position, in range order.
fn pair_up<'a>(
    ranges: &'a [RangeEstimate],
    anchors: &'a [Anchor],
) -> Result<Vec<Paired<'a>>, LocalizationError> {
    ranges
        .iter()
        .map(|r| {
            anchors
                .iter()
                .find(|a| a.id == r.anchor_id)
                .map(|a| (vec(a.position), r.range, &a.id))
                .ok_or_else(|| LocalizationError::UnknownAnchor(r.anchor_id.clone()))
        })
        .collect()
}

/// Closed-form solution of the system linearized by subtracting the first
/// anchor's equation from the others.
pub fn linearized_solution(
    anchors: &[(Vector2<f64>, f64)],
) -> Result<Vector2<f64>, LocalizationError> {
    if anchors.len() < 3 {
        return Err(LocalizationError::InsufficientAnchors(anchors.len()));
    }
    let (p0, r0) = anchors[0];
    let mut normal = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for &(p, r) in &anchors[1..] {
        let row = 2.0 * (p - p0);
        let b = r0 * r0 - r * r + p.norm_squared() - p0.norm_squared();
        normal += row * row.transpose();
        rhs += row * b;
    }
    if rank_deficient(&normal) {
        return Err(LocalizationError::DegenerateGeometry);
    }
    normal
        .try_inverse()
        .map(|inv| inv * rhs)
        .ok_or(LocalizationError::DegenerateGeometry)
}

fn cost(x: &Vector2<f64>, anchors: &[(Vector2<f64>, f64)]) -> f64 {
    anchors
        .iter()
        .map(|(p, r)| {
            let e = (x - p).norm() - r;
            e * e
        })
        .sum()
}

pub(crate) fn gauss_newton(
    mut x: Vector2<f64>,
    points: &[(Vector2<f64>, f64)],
) -> (Vector2<f64>, f64) {
    let mut current = cost(&x, points);
    for _ in 0..MAX_ITERATIONS {
        let mut normal = Matrix2::zeros();
        let mut gradient = Vector2::zeros();
        for (p, r) in points {
            let diff = x - p;
            let d = diff.norm();
            if d == 0.0 {
                continue;
            }
            let row = diff / d;
            normal += row * row.transpose();
            gradient += row * (d - r);
        }
        let Some(inverse) = normal.try_inverse() else {
            break;
        };
        let mut step = -(inverse * gradient);
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = x + step;
            let c = cost(&candidate, points);
            if c <= current {
                x = candidate;
                current = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.norm() < STEP_TOLERANCE_M {
            break;
        }
    }
    (x, current)
}

/// Minimizes the sum of squared range residuals with Gauss-Newton, started
/// from the linearized solution. Steps that would increase the cost are
/// halved.
pub fn locate(
    ranges: &[RangeEstimate],
    anchors: &[Anchor],
) -> Result<PositionEstimate, LocalizationError> {
    if ranges.len() < 3 {
        return Err(LocalizationError::InsufficientAnchors(ranges.len()));
    }
    let paired = pair_up(ranges, anchors)?;
    let points: Vec<(Vector2<f64>, f64)> = paired.iter().map(|(p, r, _)| (*p, *r)).collect();
    let start = linearized_solution(&points)?;
    let (x, current) = gauss_newton(start, &points);

    Ok(PositionEstimate {
        position: Position2D { x: x[0], y: x[1] },
        residual_norm: current.sqrt(),
        anchors_used: paired.iter().map(|(_, _, id)| (*id).clone()).collect(),
    })
}

/// `sqrt(trace((D^T D)^-1))` where the rows of `D` are unit vectors from the
/// estimate to each anchor.
pub fn pdop(estimate: Position2D, anchors: &[Anchor]) -> Result<f64, PdopError> {
    let x = vec(estimate);
    let mut normal = Matrix2::zeros();
    for anchor in anchors {
        let c = vec(anchor.position) - x;
        let len = c.norm();
        if len <= 1e-12 {
            return Err(PdopError::AnchorAtEstimate(anchor.id.clone()));
        }
        let u = c / len;
        normal += u * u.transpose();
    }
    if anchors.len() < 2 || rank_deficient(&normal) {
        return Err(PdopError::SingularGeometry);
    }
    let inverse = normal.try_inverse().ok_or(PdopError::SingularGeometry)?;
    Ok(inverse.trace().sqrt())
}

/// Residual of a single range against an estimate, meters.
pub fn residual(estimate: Position2D, anchor: Position2D, range: f64) -> f64 {
    distance(estimate, anchor) - range
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranging::RangingRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn p(x: f64, y: f64) -> Position2D {
        Position2D::new(x, y).unwrap()
    }

    fn anchors(points: &[(f64, f64)]) -> Vec<Anchor> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Anchor::new(format!("A{}", i + 1), p(x, y)))
            .collect()
    }

    fn range(id: &AnchorId, r: f64) -> RangeEstimate {
        RangeEstimate {
            anchor_id: id.clone(),
            range: r,
            record: RangingRecord {
                anchor_id: id.clone(),
                node_timestamps: Default::default(),
                anchor_timestamps: Default::default(),
                rssi: 0.0,
                cirs: Vec::new(),
                success: true,
            },
        }
    }

    fn true_ranges(node: Position2D, anchors: &[Anchor]) -> Vec<RangeEstimate> {
        anchors
            .iter()
            .map(|a| range(&a.id, distance(node, a.position)))
            .collect()
    }

    fn ring(angles_deg: &[f64], radius: f64, center: Position2D) -> Vec<Anchor> {
        let pts: Vec<(f64, f64)> = angles_deg
            .iter()
            .map(|a| {
                let t = a.to_radians();
                (center.x + radius * t.cos(), center.y + radius * t.sin())
            })
            .collect();
        anchors(&pts)
    }

    #[test]
    fn recovers_three_anchor_example() {
        let set = anchors(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let ranges = vec![
            range(&set[0].id, 5.0),
            range(&set[1].id, 65f64.sqrt()),
            range(&set[2].id, 45f64.sqrt()),
        ];
        let est = locate(&ranges, &set).unwrap();
        assert!(distance(est.position, p(3.0, 4.0)) < 1e-6);
        assert!(est.residual_norm < 1e-9);
        assert_eq!(est.anchors_used.len(), 3);
    }

    #[test]
    fn two_ranges_are_insufficient() {
        let set = anchors(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let ranges = true_ranges(p(1.0, 1.0), &set[..2]);
        assert_eq!(
            locate(&ranges, &set),
            Err(LocalizationError::InsufficientAnchors(2))
        );
    }

    #[test]
    fn collinear_anchors_are_degenerate() {
        let set = anchors(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)]);
        let ranges = true_ranges(p(3.0, 4.0), &set);
        assert_eq!(
            locate(&ranges, &set),
            Err(LocalizationError::DegenerateGeometry)
        );
    }

    #[test]
    fn tolerates_negative_ranges() {
        let set = anchors(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]);
        let mut ranges = true_ranges(p(2.0, 2.0), &set);
        ranges[0].range = -0.5;
        let est = locate(&ranges, &set).unwrap();
        assert!(est.position.x.is_finite() && est.position.y.is_finite());
        assert!(est.residual_norm > 0.0);
    }

    #[test]
    fn pdop_symmetric_geometries() {
        let c = p(1.0, -2.0);
        let tri = pdop(c, &ring(&[0.0, 120.0, 240.0], 3.0, c)).unwrap();
        assert!((tri - (4.0f64 / 3.0).sqrt()).abs() < 1e-9, "{tri}");
        let square = pdop(c, &ring(&[0.0, 90.0, 180.0, 270.0], 7.0, c)).unwrap();
        assert!((square - 1.0).abs() < 1e-9, "{square}");
    }

    #[test]
    fn pdop_errors() {
        let c = p(0.0, 0.0);
        assert_eq!(
            pdop(c, &ring(&[0.0, 180.0], 2.0, c)),
            Err(PdopError::SingularGeometry)
        );
        assert_eq!(
            pdop(c, &ring(&[30.0], 2.0, c)),
            Err(PdopError::SingularGeometry)
        );
        let mut set = ring(&[0.0, 120.0, 240.0], 2.0, c);
        set[1].position = c;
        assert!(matches!(pdop(c, &set), Err(PdopError::AnchorAtEstimate(_))));
    }

    #[test]
    fn pdop_matches_range_noise_amplification() {
        // Monte-Carlo: RMS position error / sigma_r tracks PDoP. Narrower arcs
        // leave the first-order regime (a mirrored minimum appears).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.05;
        let noise = Normal::new(0.0, sigma).unwrap();
        let node = p(0.0, 0.0);
        let geometries: [&[f64]; 4] = [
            &[0.0, 90.0, 180.0, 270.0],
            &[0.0, 120.0, 240.0],
            &[0.0, 30.0, 60.0, 90.0],
            &[0.0, 20.0, 40.0, 60.0],
        ];
        for angles in geometries {
            let set = ring(angles, 5.0, node);
            let expected = pdop(node, &set).unwrap();
            assert!((1.0..=10.0).contains(&expected), "{expected}");
            let mut sq = 0.0;
            let trials = 10_000;
            for _ in 0..trials {
                let ranges: Vec<RangeEstimate> = set
                    .iter()
                    .map(|a| range(&a.id, distance(node, a.position) + noise.sample(&mut rng)))
                    .collect();
                let est = locate(&ranges, &set).unwrap();
                sq += distance(est.position, node).powi(2);
            }
            let ratio = (sq / trials as f64).sqrt() / sigma;
            assert!(
                ratio <= 2.0 * expected && ratio >= expected / 2.0,
                "{angles:?}: rms/sigma {ratio} vs pdop {expected}"
            );
        }
    }

    fn random_geometry(rng: &mut ChaCha8Rng) -> (Vec<Anchor>, Position2D) {
        loop {
            let n = rng.random_range(3..=8);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
                .collect();
            let set = anchors(&pts);
            let node = p(rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
            let well_posed = pdop(node, &set).map(|v| v < 50.0).unwrap_or(false);
            if well_posed {
                return (set, node);
            }
        }
    }

    #[test]
    fn noiseless_recovery_on_random_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let (set, node) = random_geometry(&mut rng);
            let est = locate(&true_ranges(node, &set), &set).unwrap();
            assert!(distance(est.position, node) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn pdop_ignores_anchor_distances(
            angles in prop::collection::vec(0.0..360.0f64, 3..8),
            scales in prop::collection::vec(0.1..50.0f64, 8),
        ) {
            let node = p(0.0, 0.0);
            let base = ring(&angles, 1.0, node);
            if let Ok(v) = pdop(node, &base) {
                let scaled: Vec<Anchor> = base
                    .iter()
                    .zip(&scales)
                    .map(|(a, s)| Anchor::new(a.id.clone(), p(a.position.x * s, a.position.y * s)))
                    .collect();
                let w = pdop(node, &scaled).unwrap();
                prop_assert!((v - w).abs() <= 1e-9 * v.max(1.0));
            }
        }

        #[test]
        fn adding_an_anchor_never_raises_pdop(
            angles in prop::collection::vec(0.0..360.0f64, 3..8),
            extra in 0.0..360.0f64,
        ) {
            let node = p(0.0, 0.0);
            let base = ring(&angles, 3.0, node);
            if let Ok(before) = pdop(node, &base) {
                let mut more = base.clone();
                more.extend(ring(&[extra], 4.0, node).into_iter().map(|mut a| {
                    a.id = AnchorId::from("extra");
                    a
                }));
                let after = pdop(node, &more).unwrap();
                prop_assert!(after <= before * (1.0 + 1e-12));
            }
        }
    }
}
