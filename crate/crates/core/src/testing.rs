//! Deterministic random-input helpers shared by unit and integration tests.
//!
//! Seeded ChaCha streams keep every "random" test reproducible bit-for-bit
//! across runs and platforms; any failure can be replayed from the seed.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec2;

/// A seeded RNG for tests. Distinct call sites should use distinct seeds.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform vector in `[-scale, scale]²`.
pub fn rand_vec2(rng: &mut ChaCha8Rng, scale: f64) -> Vec2 {
    Vec2::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

/// Dense matrix with i.i.d. uniform entries in `[-scale, scale]`.
pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Random symmetric matrix.
pub fn rand_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = rand_matrix(rng, n, n, scale);
    (&a + a.transpose()) * 0.5
}

/// Random 2n×2n symplectic matrix built as a product of elementary symplectic
/// factors: [[I, S], [0, I]], [[I, 0], [S, I]] (S symmetric) and
/// [[Q, 0], [0, Q⁻ᵀ]] (Q invertible). Products of such factors are exactly
/// symplectic up to rounding.
pub fn rand_symplectic(rng: &mut ChaCha8Rng, n: usize, factors: usize, scale: f64) -> DMatrix<f64> {
    let dim = 2 * n;
    let mut m = DMatrix::<f64>::identity(dim, dim);
    for _ in 0..factors {
        let s = rand_symmetric(rng, n, scale);
        let kind: u8 = rng.gen_range(0..3);
        let mut f = DMatrix::<f64>::identity(dim, dim);
        match kind {
            0 => {
                f.view_mut((0, n), (n, n)).copy_from(&s);
            }
            1 => {
                f.view_mut((n, 0), (n, n)).copy_from(&s);
            }
            _ => {
                // Block diagonal with Q kept well-conditioned: Q = I + small.
                let q = DMatrix::<f64>::identity(n, n) + rand_matrix(rng, n, n, 0.3 * scale);
                if let Some(qinv) = q.clone().try_inverse() {
                    f.view_mut((0, 0), (n, n)).copy_from(&q);
                    f.view_mut((n, n), (n, n)).copy_from(&qinv.transpose());
                }
            }
        }
        m = &m * &f;
    }
    m
}

/// Random 4×4 symplectic matrix (convenience wrapper).
pub fn rand_symplectic4(rng: &mut ChaCha8Rng, factors: usize, scale: f64) -> DMatrix<f64> {
    rand_symplectic(rng, 2, factors, scale)
}

/// Random unipotent symplectic matrix: the normal form [[I, S], [0, I]]
/// (S symmetric — spectrum exactly {1}) conjugated by a random symplectic
/// matrix. Conjugation preserves both the spectrum and the form.
pub fn rand_unipotent(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let dim = 2 * n;
    let s = rand_symmetric(rng, n, scale);
    let mut u = DMatrix::<f64>::identity(dim, dim);
    u.view_mut((0, n), (n, n)).copy_from(&s);
    // Keep the conjugation mild: eigenvalue solvers split a defective
    // eigenvalue by ~√(ε·cond), and the spectral classifiers downstream work
    // with a 1e−7 margin that ill-conditioned samples would eat up.
    let q = rand_symplectic(rng, n, 2, 0.3 * scale);
    let qinv = q
        .clone()
        .try_inverse()
        .expect("random symplectic factors are invertible");
    &q * u * qinv
}
