use bipred::quantum::{quantum_p, random_separable_diagonal, von_neumann_entropy, DensityMatrix};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_density(d: usize, rank: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    // ρ = G G† / tr, G is d×rank with Gaussian-ish entries.
    let g: Vec<Complex64> = (0..d * rank)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let mut m = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..rank)
                .map(|k| g[i * rank + k] * g[j * rank + k].conj())
                .sum();
        }
    }
    let tr: f64 = (0..d).map(|i| m[i * d + i].re).sum();
    for x in m.iter_mut() {
        *x /= tr;
    }
    for i in 0..d {
        for j in i + 1..d {
            m[j * d + i] = m[i * d + j].conj();
        }
        m[i * d + i].im = 0.0;
    }
    m
}

fn oracle_eigenvalues(d: usize, m: &[Complex64]) -> Vec<f64> {
    let a = DMatrix::from_row_slice(d, d, m);
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn jacobi_matches_library_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &d in &[2usize, 3, 4, 6, 9, 16] {
        for rank in [1, 2, d] {
            let m = random_density(d, rank, &mut rng);
            let rho = DensityMatrix::new(d, m.clone()).unwrap();
            let ours = rho.eigenvalues();
            let theirs = oracle_eigenvalues(d, &m);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-11, "d={d} rank={rank}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn pure_states_have_zero_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2, 4, 8] {
        let psi: Vec<Complex64> = (0..d)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let rho = DensityMatrix::pure(&psi).unwrap();
        assert!(von_neumann_entropy(&rho).abs() < 1e-10);
    }
}

#[test]
fn local_unitaries_leave_p_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho = DensityMatrix::new(4, random_density(4, 3, &mut rng)).unwrap();
    let base = quantum_p(&rho, 2, 2).unwrap().p;
    // U = R_z(α) ⊗ H-like rotation, built as a Kronecker product.
    let (a, b) = (0.7f64, 1.3f64);
    let u1 = [
        Complex64::from_polar(1.0, a),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::from_polar(1.0, -a),
    ];
    let u2 = [
        Complex64::new(b.cos(), 0.0),
        Complex64::new(-b.sin(), 0.0),
        Complex64::new(b.sin(), 0.0),
        Complex64::new(b.cos(), 0.0),
    ];
    let mut u = vec![Complex64::new(0.0, 0.0); 16];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    u[(i * 2 + k) * 4 + j * 2 + l] = u1[i * 2 + j] * u2[k * 2 + l];
                }
            }
        }
    }
    let rotated = rho.conjugate(&u).unwrap();
    let p = quantum_p(&rotated, 2, 2).unwrap().p;
    assert!((p - base).abs() < 1e-10, "{p} vs {base}");
}

#[test]
fn product_states_have_zero_p() {
    let a = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
    let b = DensityMatrix::diagonal(&[0.1, 0.2, 0.7]).unwrap();
    let q = quantum_p(&a.kron(&b).unwrap(), 2, 3).unwrap();
    assert!(q.p.abs() < 1e-10);
}

#[test]
fn separable_diagonal_states_respect_classical_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let (da, db) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let rho = random_separable_diagonal(da, db, &mut rng).unwrap();
        let q = quantum_p(&rho, da, db).unwrap();
        assert!(q.p <= 0.5 + 1e-9, "{}", q.p);
    }
}

#[test]
fn quantum_p_stays_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (da, db) in [(2, 2), (2, 3), (3, 3), (2, 4), (4, 4)] {
        for rank in [1, 2, da * db] {
            let rho = DensityMatrix::new(da * db, random_density(da * db, rank, &mut rng)).unwrap();
            let q = quantum_p(&rho, da, db).unwrap();
            assert!(q.p >= -1e-10 && q.p <= 1.0 + 1e-10, "{}", q.p);
        }
    }
}
