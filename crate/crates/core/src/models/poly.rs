//! Exact quadratic maps and random low-degree polynomial maps.

use nalgebra::{DMatrix, DVector};

use super::DifferentiableMap;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// `f(x) = c + A·x + ½[xᵀ Hᵢ x]ᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticMap {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub h: Vec<DMatrix<f64>>,
}

impl QuadraticMap {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, h: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = c.len();
        let n = a.ncols();
        if a.nrows() != m {
            return Err(Error::DimensionMismatch {
                what: "linear part rows",
                expected: m,
                got: a.nrows(),
            });
        }
        if h.len() != m {
            return Err(Error::DimensionMismatch {
                what: "number of Hessians",
                expected: m,
                got: h.len(),
            });
        }
        for hi in &h {
            if hi.nrows() != n || hi.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "Hessian size",
                    expected: n,
                    got: hi.nrows().max(hi.ncols()),
                });
            }
            if (hi - hi.transpose()).amax() > 1e-12 * (1.0 + hi.amax()) {
                return Err(Error::InvalidArgument("Hessians must be symmetric".into()));
            }
        }
        Ok(QuadraticMap { c, a, h })
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.len()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = &self.c + &self.a * x;
        for (i, hi) in self.h.iter().enumerate() {
            y[i] += 0.5 * x.dot(&(hi * x));
        }
        y
    }

    pub fn to_map(&self) -> DifferentiableMap {
        let (n, m) = (self.input_dim(), self.output_dim());
        let q = self.clone();
        let qj = self.clone();
        let hs = self.h.clone();
        DifferentiableMap::new(n, m, move |x| q.eval(x))
            .with_jacobian(move |x| {
                let mut j = qj.a.clone();
                for (i, hi) in qj.h.iter().enumerate() {
                    let row = hi * x;
                    for k in 0..row.len() {
                        j[(i, k)] += row[k];
                    }
                }
                j
            })
            .with_hessians(move |_| hs.clone())
            .with_degree(2)
    }
}

/// Builds the quadratic map `c + A·x + ½[xᵀ Hᵢ x]ᵢ` with exact derivatives.
pub fn make_quadratic(c: DVector<f64>, a: DMatrix<f64>, h: Vec<DMatrix<f64>>) -> Result<DifferentiableMap> {
    Ok(QuadraticMap::new(c, a, h)?.to_map())
}

/// Draws a random quadratic with i.i.d. N(0, scale²) entries in `c`, `A` and
/// the upper triangles of the Hessians.
pub fn random_quadratic(n: usize, m: usize, scale: f64, rng: &mut RngStream) -> QuadraticMap {
    let c = DVector::from_fn(m, |_, _| scale * rng.standard_normal());
    let a = DMatrix::from_fn(m, n, |_, _| scale * rng.standard_normal());
    let h = (0..m)
        .map(|_| {
            let mut hi = DMatrix::zeros(n, n);
            for r in 0..n {
                for s in r..n {
                    let v = scale * rng.standard_normal();
                    hi[(r, s)] = v;
                    hi[(s, r)] = v;
                }
            }
            hi
        })
        .collect();
    QuadraticMap { c, a, h }
}

#[derive(Clone, Debug, PartialEq)]
struct Monomial {
    coef: f64,
    exps: Vec<u8>,
}

impl Monomial {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.exps
            .iter()
            .zip(x.iter())
            .fold(self.coef, |acc, (&e, &xi)| acc * xi.powi(e as i32))
    }

    fn derivative(&self, j: usize) -> Option<Monomial> {
        let e = self.exps[j];
        if e == 0 || self.coef == 0.0 {
            return None;
        }
        let mut exps = self.exps.clone();
        exps[j] -= 1;
        Some(Monomial {
            coef: self.coef * e as f64,
            exps,
        })
    }
}

/// Sum of monomials per output component.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    degree: u32,
    outputs: Vec<Vec<Monomial>>,
}

fn exponent_vectors(n: usize, degree: u32) -> Vec<Vec<u8>> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e as u8);
            rec(n, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, degree, &mut Vec::with_capacity(n), &mut out);
    out
}

impl Polynomial {
    pub fn random(n: usize, m: usize, degree: u32, scale: f64, rng: &mut RngStream) -> Self {
        let exps = exponent_vectors(n, degree);
        let outputs = (0..m)
            .map(|_| {
                exps.iter()
                    .map(|e| Monomial {
                        coef: scale * rng.standard_normal(),
                        exps: e.clone(),
                    })
                    .collect()
            })
            .collect();
        Polynomial { n, degree, outputs }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|ms| ms.iter().map(|t| t.eval(x)).sum()),
        )
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.outputs.len(), self.n, |i, j| {
            self.outputs[i]
                .iter()
                .filter_map(|t| t.derivative(j))
                .map(|d| d.eval(x))
                .sum()
        })
    }

    pub fn hessians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.outputs
            .iter()
            .map(|ms| {
                let mut h = DMatrix::zeros(self.n, self.n);
                for j in 0..self.n {
                    for k in j..self.n {
                        let v: f64 = ms
                            .iter()
                            .filter_map(|t| t.derivative(j))
                            .filter_map(|d| d.derivative(k))
                            .map(|d| d.eval(x))
                            .sum();
                        h[(j, k)] = v;
                        h[(k, j)] = v;
                    }
                }
                h
            })
            .collect()
    }

    pub fn to_map(&self) -> DifferentiableMap {
        let (p0, p1, p2) = (self.clone(), self.clone(), self.clone());
        DifferentiableMap::new(self.n, self.outputs.len(), move |x| p0.eval(x))
            .with_jacobian(move |x| p1.jacobian(x))
            .with_hessians(move |x| p2.hessians(x))
            .with_degree(self.degree)
    }
}

/// Random polynomial map of total degree `degree ∈ {1, 2, 3}` with every
/// monomial coefficient i.i.d. N(0, scale²) and exact derivatives attached.
pub fn random_polynomial_map(
    n: usize,
    m: usize,
    degree: u32,
    scale: f64,
    rng: &mut RngStream,
) -> Result<DifferentiableMap> {
    if !(1..=3).contains(&degree) {
        return Err(Error::InvalidArgument(format!(
            "degree must be 1, 2 or 3, got {degree}"
        )));
    }
    if scale <= 0.0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    Ok(Polynomial::random(n, m, degree, scale, rng).to_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_jacobian;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn quadratic_examples() {
        let sq = make_quadratic(v(&[0.0]), DMatrix::zeros(1, 1), vec![DMatrix::from_element(1, 1, 2.0)]).unwrap();
        assert_eq!(sq.eval(&v(&[3.0])).unwrap()[0], 9.0);
        assert_eq!(sq.analytic_degree(), Some(2));

        let aff = make_quadratic(v(&[1.0]), DMatrix::from_element(1, 1, 3.0), vec![DMatrix::zeros(1, 1)]).unwrap();
        assert_eq!(aff.eval(&v(&[2.0])).unwrap()[0], 7.0);

        let saddle = make_quadratic(
            v(&[0.0]),
            DMatrix::zeros(1, 2),
            vec![DMatrix::from_diagonal(&v(&[2.0, -2.0]))],
        )
        .unwrap();
        assert_eq!(saddle.eval(&v(&[1.0, 1.0])).unwrap()[0], 0.0);
        assert_eq!(saddle.eval(&v(&[2.0, 1.0])).unwrap()[0], 3.0);
    }

    #[test]
    fn quadratic_rejects_bad_dimensions() {
        let r = make_quadratic(v(&[0.0, 0.0]), DMatrix::zeros(1, 2), vec![DMatrix::zeros(2, 2)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let r = make_quadratic(v(&[0.0]), DMatrix::zeros(1, 2), vec![DMatrix::zeros(3, 3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let r = make_quadratic(
            v(&[0.0]),
            DMatrix::zeros(1, 2),
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])],
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quadratic_even_odd_split() {
        let mut rng = RngStream::new(3, 0);
        let q = random_quadratic(3, 2, 1.0, &mut rng);
        let x = rng.normal_vector(3);
        let sum = q.eval(&x) + q.eval(&(-&x));
        let mut expected = 2.0 * &q.c;
        for (i, hi) in q.h.iter().enumerate() {
            expected[i] += x.dot(&(hi * &x));
        }
        assert!((sum - expected).amax() < 1e-12);
    }

    #[test]
    fn linear_polynomial_has_zero_hessians() {
        let mut rng = RngStream::new(5, 0);
        let f = random_polynomial_map(3, 2, 1, 1.0, &mut rng).unwrap();
        for h in f.hessians(&v(&[0.3, -0.2, 1.0])).unwrap() {
            assert_eq!(h.norm(), 0.0);
        }
    }

    #[test]
    fn polynomial_draws_are_deterministic() {
        let a = random_polynomial_map(1, 1, 2, 1.0, &mut RngStream::new(9, 1)).unwrap();
        let b = random_polynomial_map(1, 1, 2, 1.0, &mut RngStream::new(9, 1)).unwrap();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            assert_eq!(a.eval(&v(&[x])).unwrap(), b.eval(&v(&[x])).unwrap());
        }
    }

    #[test]
    fn polynomial_jacobian_matches_finite_differences() {
        let mut rng = RngStream::new(13, 0);
        for degree in 1..=3 {
            let f = random_polynomial_map(3, 2, degree, 1.0, &mut rng).unwrap();
            let x = rng.normal_vector(3);
            let fd = fd_jacobian(|p| f.eval(p), &x, 1e-4).unwrap();
            let an = f.jacobian(&x).unwrap();
            assert!((fd - an).amax() < 1e-6);
            assert!(f.derivative_self_test(&[x]).unwrap() < 1e-5);
        }
    }

    #[test]
    fn degree_is_validated() {
        let mut rng = RngStream::new(1, 0);
        assert!(random_polynomial_map(2, 1, 4, 1.0, &mut rng).is_err());
        assert!(random_polynomial_map(2, 1, 2, 0.0, &mut rng).is_err());
    }
}
