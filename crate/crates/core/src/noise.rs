//! Zero-mean Gaussian noise pairs `(ξ, ψ)` and the deterministic generator.
//!
//! Streams come from ChaCha8 seeded with `seed_from_u64`. Replication `i`
//! of a run seeded with `s` uses the child seed [`mix64`]`(s, i)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::max_asymmetry;

const JITTER: f64 = 1e-12;

/// SplitMix64 finalizer applied to `seed + (i + 1)·0x9E3779B97F4A7C15`.
pub fn mix64(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Single-owner deterministic generator.
#[derive(Debug, Clone)]
pub struct RngState(ChaCha8Rng);

impl RngState {
    pub fn from_seed(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream for replication `i`.
    pub fn child(seed: u64, i: u64) -> Self {
        Self::from_seed(mix64(seed, i))
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn standard_normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }
}

/// `Γ11 = tr Σξ`, `Γ12 = tr Σξψ`, `Γ22 = tr Σψ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gammas {
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
}

/// Immutable joint Gaussian model for `(ξ, ψ)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    dim: usize,
    sigma_xi: DMatrix<f64>,
    sigma_psi: DMatrix<f64>,
    sigma_cross: DMatrix<f64>,
    // factor M with M Mᵀ equal to the joint covariance
    factor: DMatrix<f64>,
    zero: bool,
}

pub fn build_noise(
    sigma_xi: DMatrix<f64>,
    sigma_psi: DMatrix<f64>,
    sigma_cross: DMatrix<f64>,
) -> Result<NoiseModel> {
    let d = sigma_xi.nrows();
    for (name, m) in [("sigma_xi", &sigma_xi), ("sigma_psi", &sigma_psi), ("sigma_cross", &sigma_cross)] {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if m.nrows() != d { m.nrows() } else { m.ncols() },
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(name, "non-finite entry"));
        }
    }
    if d == 0 {
        return Err(Error::param("dim", "must be >= 1"));
    }
    for (name, m) in [("sigma_xi", &sigma_xi), ("sigma_psi", &sigma_psi)] {
        let asym = max_asymmetry(m);
        if asym > JITTER {
            return Err(Error::Asymmetric {
                name: name.to_string(),
                asymmetry: asym,
            });
        }
    }
    let mut joint = DMatrix::zeros(2 * d, 2 * d);
    joint.view_mut((0, 0), (d, d)).copy_from(&sigma_xi);
    joint.view_mut((d, d), (d, d)).copy_from(&sigma_psi);
    joint.view_mut((0, d), (d, d)).copy_from(&sigma_cross);
    joint.view_mut((d, 0), (d, d)).copy_from(&sigma_cross.transpose());
    let factor = pivoted_cholesky(&joint)?;
    let zero = joint.iter().all(|v| *v == 0.0);
    Ok(NoiseModel {
        dim: d,
        sigma_xi,
        sigma_psi,
        sigma_cross,
        factor,
        zero,
    })
}

/// Diagonal-pivoted Cholesky for PSD input. Returns `M` (not triangular
/// in the original ordering) with `M Mᵀ = A` up to the jitter tolerance.
fn pivoted_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = a.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = JITTER * scale;
    let mut r = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = n;
    for j in 0..n {
        let (piv, dmax) = (j..n)
            .map(|i| (i, r[(perm[i], perm[i])]))
            .fold((j, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
        if dmax < -tol {
            return Err(Error::NotPsd { pivot: dmax });
        }
        if dmax <= tol {
            rank = j;
            break;
        }
        perm.swap(j, piv);
        let p = perm[j];
        let s = dmax.sqrt();
        l[(p, j)] = s;
        for &q in &perm[j + 1..] {
            l[(q, j)] = r[(q, p)] / s;
        }
        for &q in &perm[j + 1..] {
            for &t in &perm[j + 1..] {
                r[(q, t)] -= l[(q, j)] * l[(t, j)];
            }
        }
    }
    // the unfactored remainder must be negligible
    for &q in &perm[rank..] {
        for &t in &perm[rank..] {
            let v = r[(q, t)];
            if v < -tol || v.abs() > tol.sqrt() * 1e-3 {
                return Err(Error::NotPsd { pivot: v.min(r[(q, q)]) });
            }
        }
    }
    Ok(l)
}

impl NoiseModel {
    pub fn zero(dim: usize) -> Self {
        let z = DMatrix::zeros(dim, dim);
        build_noise(z.clone(), z.clone(), z).expect("zero model is valid")
    }

    /// `Σξ = σξ²I`, `Σψ = σψ²I`, cross block `σξσψρ·I`.
    pub fn isotropic(dim: usize, sigma_xi: f64, sigma_psi: f64, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::param("rho_cross", "must lie in [-1, 1]"));
        }
        if !(sigma_xi >= 0.0 && sigma_psi >= 0.0) {
            return Err(Error::param("sigma", "must be >= 0"));
        }
        let id = DMatrix::<f64>::identity(dim, dim);
        build_noise(
            &id * sigma_xi.powi(2),
            &id * sigma_psi.powi(2),
            &id * (sigma_xi * sigma_psi * rho),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn sigma_xi(&self) -> &DMatrix<f64> {
        &self.sigma_xi
    }

    pub fn sigma_psi(&self) -> &DMatrix<f64> {
        &self.sigma_psi
    }

    pub fn sigma_cross(&self) -> &DMatrix<f64> {
        &self.sigma_cross
    }

    pub fn gammas(&self) -> Gammas {
        Gammas {
            g11: self.sigma_xi.trace(),
            g12: self.sigma_cross.trace(),
            g22: self.sigma_psi.trace(),
        }
    }

    /// Writes one draw into `xi` and `psi`. Always consumes `2d` normals,
    /// so streams stay aligned regardless of the covariance rank.
    pub fn sample_into(&self, rng: &mut RngState, z: &mut [f64], xi: &mut [f64], psi: &mut [f64]) {
        let d = self.dim;
        for v in z.iter_mut() {
            *v = rng.standard_normal();
        }
        for i in 0..2 * d {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(i, j)] * zj;
            }
            if i < d {
                xi[i] = acc;
            } else {
                psi[i - d] = acc;
            }
        }
    }

    pub fn sample_pair(&self, rng: &mut RngState) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut z = vec![0.0; 2 * d];
        let mut xi = vec![0.0; d];
        let mut psi = vec![0.0; d];
        self.sample_into(rng, &mut z, &mut xi, &mut psi);
        (xi, psi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_samples_zero() {
        let m = NoiseModel::zero(3);
        let mut rng = RngState::from_seed(1);
        let (xi, psi) = m.sample_pair(&mut rng);
        assert_eq!(xi, vec![0.0; 3]);
        assert_eq!(psi, vec![0.0; 3]);
        assert_eq!(m.gammas(), Gammas::default());
    }

    #[test]
    fn isotropic_gammas() {
        let g = NoiseModel::isotropic(4, 0.1, 0.1, 0.0).unwrap().gammas();
        assert!((g.g11 - 0.04).abs() < 1e-15);
        assert!((g.g22 - 0.04).abs() < 1e-15);
        assert_eq!(g.g12, 0.0);
    }

    #[test]
    fn diag_trace() {
        let m = build_noise(
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0])),
            DMatrix::zeros(3, 3),
            DMatrix::zeros(3, 3),
        )
        .unwrap();
        assert_eq!(m.gammas().g11, 6.0);
    }

    #[test]
    fn indefinite_joint_rejected() {
        let id = DMatrix::<f64>::identity(2, 2);
        let r = build_noise(&id * 0.5, &id * 0.5, id.clone());
        assert!(matches!(r, Err(Error::NotPsd { .. })));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut a = DMatrix::<f64>::identity(2, 2);
        a[(0, 1)] = 0.1;
        let r = build_noise(a, DMatrix::identity(2, 2), DMatrix::zeros(2, 2));
        assert!(matches!(r, Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn boundary_psd_accepted() {
        // perfectly correlated: rank d
        let m = NoiseModel::isotropic(3, 0.3, 0.2, 1.0).unwrap();
        let mut rng = RngState::from_seed(5);
        let (xi, psi) = m.sample_pair(&mut rng);
        for (a, b) in xi.iter().zip(&psi) {
            assert!((a / 0.3 - b / 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let m = NoiseModel::isotropic(4, 0.1, 0.2, 0.3).unwrap();
        let a = m.sample_pair(&mut RngState::from_seed(42));
        let b = m.sample_pair(&mut RngState::from_seed(42));
        assert_eq!(a, b);
    }

    #[test]
    fn mix64_reference_values() {
        // splitmix64 first outputs for state 0
        assert_eq!(mix64(0, 0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(0, 1), 0x6E78_9E6A_A1B9_65F4);
        assert_ne!(mix64(7, 0), mix64(7, 1));
    }

    #[test]
    fn empirical_covariance_matches() {
        let d = 2;
        let sx = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let sp = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]);
        let sc = DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, -0.3]);
        let m = build_noise(sx, sp, sc).unwrap();
        let n = 200_000usize;
        let mut rng = RngState::from_seed(9);
        let mut sum = DMatrix::<f64>::zeros(2 * d, 2 * d);
        let mut sum2 = DMatrix::<f64>::zeros(2 * d, 2 * d);
        for _ in 0..n {
            let (xi, psi) = m.sample_pair(&mut rng);
            let v: Vec<f64> = xi.into_iter().chain(psi).collect();
            for i in 0..2 * d {
                for j in 0..2 * d {
                    let p = v[i] * v[j];
                    sum[(i, j)] += p;
                    sum2[(i, j)] += p * p;
                }
            }
        }
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(m.sigma_xi());
        joint.view_mut((d, d), (d, d)).copy_from(m.sigma_psi());
        joint.view_mut((0, d), (d, d)).copy_from(m.sigma_cross());
        joint.view_mut((d, 0), (d, d)).copy_from(&m.sigma_cross().transpose());
        for i in 0..2 * d {
            for j in 0..2 * d {
                let mean = sum[(i, j)] / n as f64;
                let var = sum2[(i, j)] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                assert!((mean - joint[(i, j)]).abs() <= 4.0 * se, "({i},{j}) {mean} vs {}", joint[(i, j)]);
            }
        }
    }

    #[test]
    fn lag_one_autocorrelation_small() {
        let m = NoiseModel::isotropic(1, 1.0, 1.0, 0.0).unwrap();
        let mut rng = RngState::from_seed(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| m.sample_pair(&mut rng).0[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((cov / var).abs() < 4.0 / (n as f64).sqrt());
    }
}
