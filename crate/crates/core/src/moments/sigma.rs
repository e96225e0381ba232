use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SigmaKind {
    Skf,
    Ckf,
    Sskf,
}

/// Weighted point set with zero mean and identity covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPointSet {
    pub kind: SigmaKind,
    pub points: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    /// Scaling factor (1 for SKF/CKF).
    pub alpha: f64,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// `(Σw, Σwξ, Σwξξᵀ)`.
    pub fn moments(&self) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(n);
        let mut s2 = DMatrix::zeros(n, n);
        for (p, &w) in self.points.iter().zip(&self.weights) {
            s0 += w;
            s1.axpy(w, p, 1.0);
            s2.ger(w, p, p, 1.0);
        }
        (s0, s1, s2)
    }
}

/// Simplex points `√(n+1)·ξ'ᵢ − c·1` with `ξ'ᵢ = eᵢ`, `ξ'ₙ₊₁ = 1/(√(n+1)−1)·1`
/// and `c = 1/(√(n+1)−1)`, each with weight `1/(n+1)`.
fn simplex(n: usize) -> Vec<DVector<f64>> {
    let r = ((n + 1) as f64).sqrt();
    let c = 1.0 / (r - 1.0);
    let mut pts: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut p = DVector::from_element(n, -c);
            p[i] += r;
            p
        })
        .collect();
    pts.push(DVector::from_element(n, r * c - c));
    pts
}

/// Builds the point set for `kind`. `alpha` is only used for SSKF and must lie
/// in (0, 1] there; `n ≥ 1`.
pub fn sigma_points(kind: SigmaKind, n: usize, alpha: f64) -> SigmaPointSet {
    assert!(n >= 1, "sigma points need n >= 1");
    match kind {
        SigmaKind::Skf => SigmaPointSet {
            kind,
            points: simplex(n),
            weights: vec![1.0 / (n + 1) as f64; n + 1],
            alpha: 1.0,
        },
        SigmaKind::Ckf => {
            let r = (n as f64).sqrt();
            let mut points = Vec::with_capacity(2 * n);
            for sign in [1.0, -1.0] {
                for i in 0..n {
                    let mut p = DVector::zeros(n);
                    p[i] = sign * r;
                    points.push(p);
                }
            }
            SigmaPointSet {
                kind,
                points,
                weights: vec![1.0 / (2 * n) as f64; 2 * n],
                alpha: 1.0,
            }
        }
        SigmaKind::Sskf => {
            assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
            let a2 = alpha * alpha;
            let mut points: Vec<_> = simplex(n).into_iter().map(|p| p * alpha).collect();
            let mut weights = vec![1.0 / ((n + 1) as f64 * a2); n + 1];
            // 1 − 1/α², taken from the rounded outer weights so Σw = 1 exactly
            let outer: f64 = weights.iter().sum();
            points.push(DVector::zeros(n));
            weights.push(1.0 - outer);
            SigmaPointSet {
                kind,
                points,
                weights,
                alpha,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(set: &SigmaPointSet, tol: f64) {
        let n = set.dim();
        let (s0, s1, s2) = set.moments();
        assert!((s0 - 1.0).abs() < tol, "sum of weights {s0}");
        assert!(s1.amax() < tol, "mean {s1}");
        assert!((s2 - DMatrix::identity(n, n)).amax() < tol, "covariance");
    }

    #[test]
    fn ckf_two_dimensional_points() {
        let s = sigma_points(SigmaKind::Ckf, 2, 1.0);
        let r = 2f64.sqrt();
        let expect = [[r, 0.0], [0.0, r], [-r, 0.0], [0.0, -r]];
        for (p, e) in s.points.iter().zip(expect) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
        assert!(s.weights.iter().all(|&w| w == 0.25));
    }

    #[test]
    fn skf_two_dimensional_points() {
        let s = sigma_points(SigmaKind::Skf, 2, 1.0);
        let expect = [[0.36603, -1.36603], [-1.36603, 0.36603], [1.0, 1.0]];
        for (p, e) in s.points.iter().zip(expect) {
            assert!((p[0] - e[0]).abs() < 1e-5 && (p[1] - e[1]).abs() < 1e-5, "{p}");
        }
        assert!(s.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        check(&s, 1e-12);
    }

    #[test]
    fn sskf_at_unit_alpha_is_skf_plus_empty_center() {
        let s = sigma_points(SigmaKind::Sskf, 2, 1.0);
        let k = sigma_points(SigmaKind::Skf, 2, 1.0);
        assert_eq!(s.len(), 4);
        assert_eq!(&s.points[..3], &k.points[..]);
        assert_eq!(s.weights[3], 0.0);
        assert_eq!(s.points[3], DVector::zeros(2));
    }

    #[test]
    fn moment_matching_for_all_kinds() {
        for n in 1..=8 {
            for kind in [SigmaKind::Skf, SigmaKind::Ckf] {
                check(&sigma_points(kind, n, 1.0), 1e-12);
            }
            for alpha in [1.0, 0.5, 1e-3] {
                check(&sigma_points(SigmaKind::Sskf, n, alpha), 1e-10);
            }
        }
    }

    #[test]
    fn point_counts() {
        assert_eq!(sigma_points(SigmaKind::Skf, 5, 1.0).len(), 6);
        assert_eq!(sigma_points(SigmaKind::Ckf, 5, 1.0).len(), 10);
        assert_eq!(sigma_points(SigmaKind::Sskf, 5, 0.1).len(), 7);
    }
}
