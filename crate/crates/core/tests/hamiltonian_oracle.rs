//! The sparse Hamiltonian restricted to the truncated basis must equal the
//! full 2^N operator built from Kronecker products, projected onto it.

use nalgebra::DMatrix;
use rydberg_sweep::basis::Basis;
use rydberg_sweep::hamiltonian::HamiltonianParts;
use rydberg_sweep::spectrum::SystemGeometry;
use rydberg_sweep::units;

fn kron_chain(ops: &[DMatrix<f64>]) -> DMatrix<f64> {
    // site 1 is the least significant bit, so it is the last factor
    ops.iter()
        .rev()
        .fold(DMatrix::from_element(1, 1, 1.0), |acc, op| acc.kronecker(op))
}

fn full_hamiltonian(n: usize, a: f64, c6: f64, omega: f64, delta: f64) -> DMatrix<f64> {
    let id = DMatrix::<f64>::identity(2, 2);
    let num = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let sx = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let single = |j: usize, op: &DMatrix<f64>| {
        let ops: Vec<_> = (0..n).map(|k| if k == j { op.clone() } else { id.clone() }).collect();
        kron_chain(&ops)
    };
    let dim = 1 << n;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..n {
        h -= single(j, &num) * delta;
        h -= single(j, &sx) * omega;
        for k in j + 1..n {
            let r = a * (k - j) as f64;
            h += single(j, &num) * single(k, &num) * (c6 / r.powi(6));
        }
    }
    h
}

#[test]
fn truncated_hamiltonian_is_projection_of_full_operator() {
    let c6 = units::TWO_PI_GHZ_UM6 * 2.45;
    let a = 0.8;
    let (omega, delta) = (units::from_2pi_mhz(3.0), units::from_2pi_mhz(-7.5));
    for n in 1..=6 {
        let geom = SystemGeometry::new(n, a, c6).unwrap();
        let full = full_hamiltonian(n, a, c6, omega, delta);
        for d in 1..=3 {
            for n_max in 0..=n {
                let basis = Basis::enumerate(n, n_max, d).unwrap();
                let parts = HamiltonianParts::build(&basis, &geom).unwrap();
                let dense = parts.dense(omega, delta);
                let dim = basis.dim();
                for (i, ci) in basis.states().iter().enumerate() {
                    for (j, cj) in basis.states().iter().enumerate() {
                        let expected = full[(ci.bits() as usize, cj.bits() as usize)];
                        let got = dense[i * dim + j];
                        let scale = expected.abs().max(omega);
                        assert!(
                            (got - expected).abs() <= 1e-12 * scale,
                            "N={n} d={d} n_max={n_max} ({i},{j}): {got} vs {expected}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn untruncated_spectrum_matches_full_diagonalization() {
    let c6 = units::TWO_PI_GHZ_UM6 * 2.45;
    let (n, a) = (5, 2.0);
    let (omega, delta) = (units::from_2pi_mhz(1.3), units::from_2pi_mhz(0.7));
    let geom = SystemGeometry::new(n, a, c6).unwrap();
    let basis = Basis::enumerate(n, n, 1).unwrap();
    let parts = HamiltonianParts::build(&basis, &geom).unwrap();
    let dim = basis.dim();
    let ours = DMatrix::from_row_slice(dim, dim, &parts.dense(omega, delta));
    let mut e1: Vec<f64> = ours.symmetric_eigenvalues().iter().copied().collect();
    let mut e2: Vec<f64> = full_hamiltonian(n, a, c6, omega, delta)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    e1.sort_by(f64::total_cmp);
    e2.sort_by(f64::total_cmp);
    let scale = e2.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    for (x, y) in e1.iter().zip(&e2) {
        assert!((x - y).abs() < 1e-10 * scale);
    }
}
