//! Fixed-size linear Kalman predict/update.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<const N: usize> {
    pub mean: SVector<f64, N>,
    pub cov: SMatrix<f64, N, N>,
}

impl<const N: usize> Gaussian<N> {
    pub fn new(mean: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        Gaussian { mean, cov }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// A priori estimate `x' = phi x + drive`, `P' = phi P phi^T + Q`.
pub fn kf_predict<const N: usize>(
    g: &Gaussian<N>,
    phi: &SMatrix<f64, N, N>,
    drive: &SVector<f64, N>,
    q: &SMatrix<f64, N, N>,
) -> Gaussian<N> {
    Gaussian {
        mean: phi * g.mean + drive,
        cov: symmetrize(&(phi * g.cov * phi.transpose() + q)),
    }
}

fn innovation_inverse<const N: usize, const M: usize>(
    cov: &SMatrix<f64, N, N>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
) -> Option<SMatrix<f64, M, M>> {
    let s = symmetrize(&(h * cov * h.transpose() + r));
    s.cholesky().map(|c| c.inverse())
}

/// Measurement update with `z = H x + v`, `v ~ N(0, R)`, in Joseph form.
/// A non-positive-definite innovation covariance triggers one
/// re-symmetrisation of the prior before giving up.
pub fn kf_update<const N: usize, const M: usize>(
    g: &Gaussian<N>,
    z: &SVector<f64, M>,
    h: &SMatrix<f64, M, N>,
    r: &SMatrix<f64, M, M>,
) -> Result<Gaussian<N>> {
    let mut prior = *g;
    let s_inv = match innovation_inverse(&prior.cov, h, r) {
        Some(s) => s,
        None => {
            prior.cov = symmetrize(&prior.cov);
            innovation_inverse(&prior.cov, h, r).ok_or_else(|| {
                Error::Numerical("innovation covariance is not positive definite".into())
            })?
        }
    };
    let gain = prior.cov * h.transpose() * s_inv;
    let mean = prior.mean + gain * (z - h * prior.mean);
    let ikh = SMatrix::<f64, N, N>::identity() - gain * h;
    let cov = symmetrize(&(ikh * prior.cov * ikh.transpose() + gain * r * gain.transpose()));
    let out = Gaussian { mean, cov };
    if !out.is_finite() {
        return Err(Error::Numerical("non-finite Kalman posterior".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Matrix2, Matrix1x2, Vector1, Vector2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Textbook scalar filter written out by hand.
    fn scalar_reference(x0: f64, p0: f64, q: f64, r: f64, zs: &[f64]) -> Vec<(f64, f64)> {
        let (mut x, mut p) = (x0, p0);
        let mut out = Vec::new();
        for &z in zs {
            p += q;
            let k = p / (p + r);
            x += k * (z - x);
            p *= 1.0 - k;
            out.push((x, p));
        }
        out
    }

    #[test]
    fn scalar_random_walk_matches_reference() {
        let zs = [0.3, -0.1, 0.8, 1.2, 0.9, 1.4, 1.1, 0.7, 1.6, 2.0];
        let (q, r) = (0.05, 0.4);
        let expected = scalar_reference(0.0, 1.0, q, r, &zs);
        let mut g = Gaussian::new(Vector1::new(0.0), Matrix1::new(1.0));
        for (z, (x, p)) in zs.iter().zip(expected) {
            g = kf_predict(&g, &Matrix1::identity(), &Vector1::zeros(), &Matrix1::new(q));
            g = kf_update(&g, &Vector1::new(*z), &Matrix1::identity(), &Matrix1::new(r)).unwrap();
            assert!((g.mean[0] - x).abs() < 1e-9 && (g.cov[(0, 0)] - p).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_innovation_leaves_mean() {
        let g = Gaussian::new(Vector2::new(1.5, -2.0), Matrix2::new(0.3, 0.1, 0.1, 0.2));
        let post = kf_update(&g, &Vector2::new(1.5, -2.0), &Matrix2::identity(), &(Matrix2::identity() * 1e-12)).unwrap();
        assert!((post.mean - g.mean).norm() < 1e-12);
    }

    #[test]
    fn singular_innovation_is_numerical_error() {
        let g = Gaussian::new(Vector1::new(0.0), Matrix1::new(0.0));
        let e = kf_update(&g, &Vector1::new(1.0), &Matrix1::identity(), &Matrix1::new(0.0));
        assert!(matches!(e, Err(Error::Numerical(_))));
    }

    /// Constant-velocity target observed in position; the filtered position
    /// must beat the raw measurement.
    fn run(seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt: f64 = 0.1;
        let phi = Matrix2::new(1.0, dt, 0.0, 1.0);
        let q = Matrix2::new(dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt.powi(2) / 2.0, dt) * 0.01;
        let qc = q.cholesky().unwrap().l();
        let r: f64 = 0.25;
        let h = Matrix1x2::new(1.0, 0.0);
        let mut truth = Vector2::new(0.0, 1.0);
        let mut g = Gaussian::new(Vector2::zeros(), Matrix2::identity() * 10.0);
        let (mut se_f, mut se_z) = (0.0, 0.0);
        let steps = 200;
        for _ in 0..steps {
            let w = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            truth = phi * truth + qc * w;
            let v: f64 = StandardNormal.sample(&mut rng);
            let z = truth[0] + r.sqrt() * v;
            g = kf_predict(&g, &phi, &Vector2::zeros(), &q);
            g = kf_update(&g, &Vector1::new(z), &h, &Matrix1::new(r)).unwrap();
            se_f += (g.mean[0] - truth[0]).powi(2);
            se_z += (z - truth[0]).powi(2);
            let eig = g.cov.symmetric_eigenvalues();
            assert!(eig.iter().all(|e| *e >= -1e-9));
            assert!((g.cov - g.cov.transpose()).abs().max() < 1e-9);
        }
        ((se_f / steps as f64).sqrt(), (se_z / steps as f64).sqrt())
    }

    #[test]
    fn filtered_rmse_beats_measurements() {
        let (mut f, mut z) = (0.0, 0.0);
        for seed in 0..100 {
            let (a, b) = run(seed);
            f += a;
            z += b;
        }
        assert!(f < z, "filtered {f} vs raw {z}");
    }
}
