//! Von Neumann entropy of small density matrices and the quantum bound.
//!
//! Eigenvalues come from a cyclic complex Jacobi sweep on the Hermitian
//! matrix. Dimensions are limited to 16.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 16;
const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Row-major complex square matrix satisfying the density-matrix invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn new(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid(format!(
                "density matrix dimension must be 1..={MAX_DIM}"
            )));
        }
        if data.len() != dim * dim {
            return Err(Error::invalid("density matrix data has the wrong length"));
        }
        let m = Self { dim, data };
        m.validate()?;
        Ok(m)
    }

    pub fn from_real(dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(dim, data.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let d = probs.len();
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for (i, p) in probs.iter().enumerate() {
            data[i * d + i] = Complex64::new(*p, 0.0);
        }
        Self::new(d, data)
    }

    /// `|ψ⟩⟨ψ|` for a state vector, normalized first.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("state vector must be non-zero"));
        }
        let d = psi.len();
        let v: Vec<Complex64> = psi.iter().map(|c| c / norm).collect();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                data.push(v[i] * v[j].conj());
            }
        }
        Self::new(d, data)
    }

    /// `(|00⟩ + |11⟩)/√2`.
    pub fn bell_pair() -> Self {
        let h = Complex64::new(1.0, 0.0);
        let z = Complex64::new(0.0, 0.0);
        Self::pure(&[h, z, z, h]).expect("Bell state is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        if self
            .data
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::domain("density matrix has non-finite entries"));
        }
        for i in 0..d {
            for j in i..d {
                if (self.get(i, j) - self.get(j, i).conj()).norm() > HERMITIAN_TOL {
                    return Err(Error::domain(format!(
                        "density matrix not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::domain(format!("density matrix trace {tr} is not 1")));
        }
        if let Some(l) = self.eigenvalues().iter().find(|l| **l < -PSD_TOL) {
            return Err(Error::domain(format!(
                "density matrix has negative eigenvalue {l:e}"
            )));
        }
        Ok(())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(self.dim, &self.data)
    }

    /// `(A ⊗ B)`.
    pub fn kron(&self, other: &DensityMatrix) -> Result<Self> {
        let (da, db) = (self.dim, other.dim);
        let d = da * db;
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..da {
            for j in 0..da {
                for k in 0..db {
                    for l in 0..db {
                        data[(i * db + k) * d + j * db + l] = self.get(i, j) * other.get(k, l);
                    }
                }
            }
        }
        Self::new(d, data)
    }

    /// `U ρ U†` for a row-major unitary `U`.
    pub fn conjugate(&self, u: &[Complex64]) -> Result<Self> {
        let d = self.dim;
        if u.len() != d * d {
            return Err(Error::invalid("unitary has the wrong shape"));
        }
        let mut tmp = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                tmp[i * d + j] = (0..d).map(|k| u[i * d + k] * self.get(k, j)).sum();
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| tmp[i * d + k] * u[j * d + k].conj()).sum();
            }
        }
        // Re-symmetrize so rounding cannot break the Hermitian check.
        for i in 0..d {
            for j in i..d {
                let avg = 0.5 * (out[i * d + j] + out[j * d + i].conj());
                out[i * d + j] = avg;
                out[j * d + i] = avg.conj();
            }
        }
        Self::new(d, out)
    }
}

/// Cyclic Jacobi on a Hermitian matrix. Each rotation zeroes one
/// off-diagonal pair; sweeps stop when the off-diagonal norm is negligible.
fn hermitian_eigenvalues(d: usize, data: &[Complex64]) -> Vec<f64> {
    let mut a = data.to_vec();
    let idx = |i: usize, j: usize| i * d + j;
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[idx(i, j)].norm_sqr())
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[idx(p, q)];
                let mag = apq.norm();
                if mag < 1e-300 {
                    continue;
                }
                let app = a[idx(p, p)].re;
                let aqq = a[idx(q, q)].re;
                // Phase-rotate to a real symmetric 2×2, then a real Jacobi rotation.
                let phase = apq / mag;
                let theta = 0.5 * (2.0 * mag).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                // a ← J† a J with J = [[c, s·φ], [−s·φ̄, c]].
                let sp = phase * s;
                for k in 0..d {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = akp * c - akq * sp.conj();
                    a[idx(k, q)] = akp * sp + akq * c;
                }
                for k in 0..d {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = apk * c - aqk * sp;
                    a[idx(q, k)] = apk * sp.conj() + aqk * c;
                }
                a[idx(p, q)] = Complex64::new(0.0, 0.0);
                a[idx(q, p)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    let mut ev: Vec<f64> = (0..d).map(|i| a[idx(i, i)].re).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `−Σ λ log₂ λ` over the eigenvalues, with rounding-level negatives dropped.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    rho.eigenvalues()
        .into_iter()
        .filter(|l| *l > 0.0)
        .map(|l| -l * l.log2())
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subsystem {
    A,
    B,
}

/// Traces out `traced` from a state on `A ⊗ B` with `dim = d_a · d_b`.
pub fn partial_trace(
    rho: &DensityMatrix,
    d_a: usize,
    d_b: usize,
    traced: Subsystem,
) -> Result<DensityMatrix> {
    if d_a == 0 || d_b == 0 || d_a * d_b != rho.dim() {
        return Err(Error::invalid(format!(
            "dimension {} does not factor as {d_a} x {d_b}",
            rho.dim()
        )));
    }
    let d = rho.dim();
    let (keep, sum) = match traced {
        Subsystem::B => (d_a, d_b),
        Subsystem::A => (d_b, d_a),
    };
    let mut out = vec![Complex64::new(0.0, 0.0); keep * keep];
    for i in 0..keep {
        for j in 0..keep {
            out[i * keep + j] = (0..sum)
                .map(|k| match traced {
                    Subsystem::B => rho.data[(i * d_b + k) * d + j * d_b + k],
                    Subsystem::A => rho.data[(k * d_b + i) * d + k * d_b + j],
                })
                .sum();
        }
    }
    DensityMatrix::new(keep, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumP {
    pub s_a: f64,
    pub s_b: f64,
    pub s_ab: f64,
    pub mutual_information: f64,
    pub p: f64,
}

/// `P = I(A;B) / [S(ρ_A) + S(ρ_B)]`, 0 when the denominator vanishes.
pub fn quantum_p(rho: &DensityMatrix, d_a: usize, d_b: usize) -> Result<QuantumP> {
    let ra = partial_trace(rho, d_a, d_b, Subsystem::B)?;
    let rb = partial_trace(rho, d_a, d_b, Subsystem::A)?;
    let (s_a, s_b, s_ab) = (
        von_neumann_entropy(&ra),
        von_neumann_entropy(&rb),
        von_neumann_entropy(rho),
    );
    let mi = s_a + s_b - s_ab;
    let denom = s_a + s_b;
    Ok(QuantumP {
        s_a,
        s_b,
        s_ab,
        mutual_information: mi,
        p: if denom > 0.0 { mi / denom } else { 0.0 },
    })
}

/// Random state diagonal in the product basis: a classical joint
/// distribution over `d_a × d_b` embedded as a density matrix.
pub fn random_separable_diagonal<R: rand::Rng + ?Sized>(
    d_a: usize,
    d_b: usize,
    rng: &mut R,
) -> Result<DensityMatrix> {
    let d = d_a * d_b;
    let mut w: Vec<f64> = (0..d)
        .map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln())
        .collect();
    // Sparsify some draws so low-entropy corners are covered too.
    for x in w.iter_mut() {
        if rng.random::<f64>() < 0.3 {
            *x = 0.0;
        }
    }
    if w.iter().all(|x| *x == 0.0) {
        w[rng.random_range(0..d)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
    let mut rho = DensityMatrix::diagonal(&probs)?;
    // Force trace exactly 1 on the last non-zero entry.
    let resid = 1.0 - rho.trace().re;
    if let Some(i) = (0..d).rev().find(|&i| probs[i] > 0.0) {
        rho.data[i * d + i].re += resid;
    }
    Ok(rho)
}

/// Canonical states with their expected P.
pub fn canonical_states() -> Vec<(&'static str, DensityMatrix, f64)> {
    vec![
        ("bell_pair", DensityMatrix::bell_pair(), 1.0),
        (
            "classical_mixture",
            DensityMatrix::diagonal(&[0.5, 0.0, 0.0, 0.5]).expect("valid"),
            0.5,
        ),
        (
            "maximally_mixed_product",
            DensityMatrix::diagonal(&[0.25; 4]).expect("valid"),
            0.0,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn entropy_examples() {
        assert!(von_neumann_entropy(&DensityMatrix::bell_pair()).abs() < 1e-12);
        let mixed = DensityMatrix::diagonal(&[0.5, 0.5]).unwrap();
        assert!((von_neumann_entropy(&mixed) - 1.0).abs() < 1e-12);
        let d = DensityMatrix::diagonal(&[0.5, 0.25, 0.25, 0.0]).unwrap();
        assert!((von_neumann_entropy(&d) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn jacobi_handles_complex_offdiagonals() {
        // [[0.5, 0.25i], [−0.25i, 0.5]] has eigenvalues 0.25 and 0.75.
        let m = DensityMatrix::new(
            2,
            vec![c(0.5, 0.0), c(0.0, 0.25), c(0.0, -0.25), c(0.5, 0.0)],
        )
        .unwrap();
        let ev = m.eigenvalues();
        assert!((ev[0] - 0.25).abs() < 1e-12 && (ev[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn invariant_violations_are_errors() {
        assert!(DensityMatrix::diagonal(&[0.6, 0.6]).is_err());
        assert!(DensityMatrix::diagonal(&[1.5, -0.5]).is_err());
        assert!(
            DensityMatrix::new(2, vec![c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)])
                .is_err()
        );
        assert!(DensityMatrix::diagonal(&[]).is_err());
    }

    #[test]
    fn partial_traces() {
        let bell = DensityMatrix::bell_pair();
        for side in [Subsystem::A, Subsystem::B] {
            let r = partial_trace(&bell, 2, 2, side).unwrap();
            assert!((r.get(0, 0).re - 0.5).abs() < 1e-12 && r.get(0, 1).norm() < 1e-12);
        }
        let a = DensityMatrix::diagonal(&[0.7, 0.3]).unwrap();
        let b = DensityMatrix::diagonal(&[0.2, 0.5, 0.3]).unwrap();
        let ab = a.kron(&b).unwrap();
        let back = partial_trace(&ab, 2, 3, Subsystem::B).unwrap();
        assert!((back.get(0, 0).re - 0.7).abs() < 1e-12);
        let back = partial_trace(&ab, 2, 3, Subsystem::A).unwrap();
        assert!((back.get(1, 1).re - 0.5).abs() < 1e-12);
        let cl = DensityMatrix::diagonal(&[0.5, 0.0, 0.0, 0.5]).unwrap();
        let r = partial_trace(&cl, 2, 2, Subsystem::B).unwrap();
        assert!((r.get(1, 1).re - 0.5).abs() < 1e-12);
        assert!(partial_trace(&cl, 3, 2, Subsystem::B).is_err());
    }

    #[test]
    fn canonical_values() {
        for (name, rho, expected) in canonical_states() {
            let q = quantum_p(&rho, 2, 2).unwrap();
            assert!((q.p - expected).abs() < 1e-10, "{name}: {}", q.p);
        }
    }
}
