//! Noll-indexed Zernike polynomials on the unit disk.
//!
//! Modes follow the [Noll](https://doi.org/10.1364/JOSA.66.000207) ordering
//! and normalization, so each mode has unit variance over the disk:
//!
//! | j | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | 11 | 12 | 13 | 14 | 15 |
//! |---|---|---|---|---|---|---|---|---|---|----|----|----|----|----|----|
//! | n | 0 | 1 | 1 | 2 | 2 | 2 | 3 | 3 | 3 | 3  | 4  | 4  | 4  | 4  | 4  |
//! | m | 0 | 1 |-1 | 0 |-2 | 2 |-1 | 1 |-3 | 3  | 0  | 2  | -2 | 4  | -4 |
//!
//! Even `j` carries the cosine term (`m > 0`), odd `j` the sine term (`m < 0`).

use nalgebra::{DMatrix, DVector};

use crate::grid::PupilGrid;
use crate::{Error, Result};

/// Radial order `n` and signed azimuthal order `m` of Noll mode `j`.
pub fn noll_to_nm(j: usize) -> Result<(u32, i32)> {
    if j == 0 {
        return Err(Error::Domain("Noll index starts at 1".into()));
    }
    // largest n with n(n+1)/2 < j
    let mut n = ((((8 * j - 7) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    while n * (n + 1) / 2 >= j {
        n -= 1;
    }
    while (n + 1) * (n + 2) / 2 < j {
        n += 1;
    }
    let k = j - n * (n + 1) / 2;
    let m_abs = if n % 2 == 0 { 2 * (k / 2) } else { 2 * ((k - 1) / 2) + 1 };
    let m = if m_abs != 0 && j % 2 == 1 {
        -(m_abs as i32)
    } else {
        m_abs as i32
    };
    Ok((n as u32, m))
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Radial polynomial `R_n^m(rho)` for `m >= 0`.
fn radial(n: u32, m: u32, rho: f64) -> f64 {
    (0..=(n - m) / 2).fold(0.0, |acc, s| {
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        let c = factorial(n - s)
            / (factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s));
        acc + sign * c * rho.powi((n - 2 * s) as i32)
    })
}

fn evaluate_nm(n: u32, m: i32, rho: f64, theta: f64, normalized: bool) -> f64 {
    let m_abs = m.unsigned_abs();
    let r = radial(n, m_abs, rho);
    let (norm, angular) = match m.cmp(&0) {
        std::cmp::Ordering::Equal => (((n + 1) as f64).sqrt(), 1.0),
        std::cmp::Ordering::Greater => ((2.0 * (n + 1) as f64).sqrt(), (m_abs as f64 * theta).cos()),
        std::cmp::Ordering::Less => ((2.0 * (n + 1) as f64).sqrt(), (m_abs as f64 * theta).sin()),
    };
    if normalized {
        norm * r * angular
    } else {
        r * angular
    }
}

/// Noll-normalized `Z_j(rho, theta)`.
pub fn evaluate(j: usize, rho: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} is outside the unit disk")));
    }
    let (n, m) = noll_to_nm(j)?;
    Ok(evaluate_nm(n, m, rho, theta, true))
}

/// Parses mode selections like `"4-15"` or `"2,3,5-9"` into Noll indices.
pub fn parse_mode_list(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::config(format!("invalid Zernike mode list '{spec}'"));
    let mut modes = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a == 0 || b < a {
                    return Err(bad());
                }
                modes.extend(a..=b);
            }
            None => {
                let j: usize = part.parse().map_err(|_| bad())?;
                if j == 0 {
                    return Err(bad());
                }
                modes.push(j);
            }
        }
    }
    if modes.is_empty() {
        return Err(bad());
    }
    Ok(modes)
}

/// A set of Zernike modes sampled on a [`PupilGrid`].
///
/// Samples are zero outside the disk; inner products only run over disk
/// pixels with uniform weights.
#[derive(Debug, Clone)]
pub struct ZernikeBasis {
    modes: Vec<usize>,
    grid: PupilGrid,
    samples: Vec<Vec<f64>>,
    normalized: bool,
}

/// Least-squares decomposition of a phase map.
#[derive(Debug, Clone)]
pub struct ZernikeFit {
    pub coefficients: Vec<f64>,
    /// Phase minus the fitted synthesis; zero outside the disk.
    pub residual: Vec<f64>,
}

impl ZernikeFit {
    /// Mean squared residual over the disk.
    pub fn residual_variance(&self, grid: &PupilGrid) -> f64 {
        grid.inside().iter().map(|&i| self.residual[i].powi(2)).sum::<f64>() / grid.area() as f64
    }
}

/// Basis of Noll modes `1..=mode_count`.
pub fn sample_basis(mode_count: usize, grid_size: usize) -> Result<ZernikeBasis> {
    ZernikeBasis::new((1..=mode_count).collect(), grid_size)
}

impl ZernikeBasis {
    pub fn new(modes: Vec<usize>, grid_size: usize) -> Result<Self> {
        Self::build(modes, grid_size, true)
    }

    /// Same modes without the Noll normalization factors.
    pub fn unnormalized(modes: Vec<usize>, grid_size: usize) -> Result<Self> {
        Self::build(modes, grid_size, false)
    }

    fn build(modes: Vec<usize>, grid_size: usize, normalized: bool) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Domain("a Zernike basis needs at least one mode".into()));
        }
        if grid_size < 16 {
            return Err(Error::Domain(format!(
                "grid size {grid_size} is below the 16-pixel minimum"
            )));
        }
        let grid = PupilGrid::new(grid_size);
        let samples = modes
            .iter()
            .map(|&j| {
                let (n, m) = noll_to_nm(j)?;
                let mut s = vec![0.0; grid.len()];
                for &i in grid.inside() {
                    let (rho, theta) = grid.polar(i);
                    s[i] = evaluate_nm(n, m, rho, theta, normalized);
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ZernikeBasis {
            modes,
            grid,
            samples,
            normalized,
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn grid_size(&self) -> usize {
        self.grid.size()
    }

    pub fn grid(&self) -> &PupilGrid {
        &self.grid
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Sampled grid of the `k`-th mode in this basis (not the Noll index).
    pub fn sample(&self, k: usize) -> &[f64] {
        &self.samples[k]
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.inside().iter().map(|&i| a[i] * b[i]).sum()
    }

    /// Gram matrix over the disk divided by the disk area in pixels.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.mode_count();
        let area = self.grid.area() as f64;
        let mut g = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v = self.dot(&self.samples[a], &self.samples[b]) / area;
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// `Σ a_k Z_k`, zero outside the disk.
    pub fn synthesize(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.mode_count() {
            return Err(Error::Geometry(format!(
                "{} coefficients for a {}-mode basis",
                coefficients.len(),
                self.mode_count()
            )));
        }
        let mut out = vec![0.0; self.grid.len()];
        for (c, s) in coefficients.iter().zip(&self.samples) {
            if *c == 0.0 {
                continue;
            }
            for &i in self.grid.inside() {
                out[i] += c * s[i];
            }
        }
        Ok(out)
    }

    /// Least-squares coefficients of `phase` over the disk.
    pub fn fit(&self, phase: &[f64]) -> Result<ZernikeFit> {
        if phase.len() != self.grid.len() {
            return Err(Error::Geometry(format!(
                "phase has {} pixels, basis grid has {}",
                phase.len(),
                self.grid.len()
            )));
        }
        let gram = self.gram();
        let area = self.grid.area() as f64;
        let rhs = DVector::from_iterator(
            self.mode_count(),
            self.samples.iter().map(|s| self.dot(s, phase) / area),
        );
        let eig = gram.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !cond.is_finite() || cond > 1e10 {
            return Err(Error::Numerical(format!(
                "rank-deficient Zernike Gram matrix (eigenvalues in [{lo:.3e}, {hi:.3e}], condition {cond:.3e})"
            )));
        }
        let chol = gram.cholesky().ok_or_else(|| {
            Error::Numerical(format!(
                "Zernike Gram matrix is not positive definite (smallest eigenvalue {lo:.3e})"
            ))
        })?;
        let coefficients: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
        let synth = self.synthesize(&coefficients)?;
        let residual = self
            .grid
            .mask()
            .iter()
            .zip(phase.iter().zip(&synth))
            .map(|(&m, (p, s))| if m { p - s } else { 0.0 })
            .collect();
        Ok(ZernikeFit {
            coefficients,
            residual,
        })
    }
}

/// Convenience wrapper around [`ZernikeBasis::fit`].
pub fn fit_coefficients(phase: &[f64], basis: &ZernikeBasis) -> Result<ZernikeFit> {
    basis.fit(phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent enumeration: orders ascending, |m| ascending within an order,
    // each |m| > 0 occupying two consecutive indices whose parity decides the
    // sign (even j -> m >= 0).
    fn noll_table(max_j: usize) -> Vec<(u32, i32)> {
        let mut out = Vec::new();
        let mut n = 0u32;
        while out.len() < max_j {
            let mut ms: Vec<u32> = (0..=n).filter(|m| (n - m) % 2 == 0).collect();
            ms.sort();
            for m in ms {
                if m == 0 {
                    out.push((n, 0));
                } else {
                    let j1 = out.len() + 1;
                    let (first, second) = if j1 % 2 == 0 {
                        (m as i32, -(m as i32))
                    } else {
                        (-(m as i32), m as i32)
                    };
                    out.push((n, first));
                    out.push((n, second));
                }
            }
            n += 1;
        }
        out.truncate(max_j);
        out
    }

    #[test]
    fn noll_mapping_matches_enumeration() {
        let table = noll_table(120);
        for (idx, expected) in table.iter().enumerate() {
            assert_eq!(noll_to_nm(idx + 1).unwrap(), *expected, "j = {}", idx + 1);
        }
        assert_eq!(noll_to_nm(1).unwrap(), (0, 0));
        assert_eq!(noll_to_nm(4).unwrap(), (2, 0));
        assert_eq!(noll_to_nm(11).unwrap(), (4, 0));
    }

    #[test]
    fn noll_mapping_is_injective() {
        let mut seen = std::collections::HashSet::new();
        for j in 1..=500 {
            assert!(seen.insert(noll_to_nm(j).unwrap()));
        }
    }

    #[test]
    fn noll_zero_is_rejected() {
        assert!(matches!(noll_to_nm(0), Err(Error::Domain(_))));
    }

    #[test]
    fn point_values() {
        assert_eq!(evaluate(1, 0.3, 1.2).unwrap(), 1.0);
        assert!((evaluate(4, 0.0, 0.0).unwrap() + 3f64.sqrt()).abs() < 1e-15);
        assert!((evaluate(2, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(evaluate(4, 1.01, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn single_piston_basis_is_constant_on_disk() {
        let b = sample_basis(1, 64).unwrap();
        for (i, &m) in b.grid().mask().iter().enumerate() {
            assert_eq!(b.sample(0)[i], if m { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn gram_close_to_identity() {
        let b = sample_basis(12, 256).unwrap();
        let g = b.gram();
        for i in 0..12 {
            for j in 0..12 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - target).abs() < 1e-2, "G[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    fn rotate_quarter(grid: &[f64], n: usize) -> Vec<f64> {
        // value at (x, y) of the rotated map equals the original at (y, -x)
        let mut out = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                out[row * n + col] = grid[(n - 1 - col) * n + row];
            }
        }
        out
    }

    #[test]
    fn tilts_are_quarter_turn_rotations() {
        let b = sample_basis(3, 256).unwrap();
        let rotated = rotate_quarter(b.sample(1), 256);
        let max_diff = rotated
            .iter()
            .zip(b.sample(2))
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "{max_diff}");
    }

    #[test]
    fn astigmatism_pair_rotation() {
        // Z5 ∝ sin 2θ, Z6 ∝ cos 2θ: a 45° rotation maps one onto the other.
        for k in 0..16 {
            let theta = k as f64 * 0.39;
            let rho = 0.7;
            let z5 = evaluate(5, rho, theta).unwrap();
            let z6_rot = evaluate(6, rho, theta - std::f64::consts::FRAC_PI_4).unwrap();
            assert!((z5 - z6_rot).abs() < 1e-12);
            // and a 90° rotation negates each
            let z6 = evaluate(6, rho, theta).unwrap();
            let z6_q = evaluate(6, rho, theta + std::f64::consts::FRAC_PI_2).unwrap();
            assert!((z6 + z6_q).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_single_mode() {
        let b = sample_basis(12, 128).unwrap();
        let phase: Vec<f64> = b.sample(3).iter().map(|v| 3.0 * v).collect();
        let fit = b.fit(&phase).unwrap();
        for (k, c) in fit.coefficients.iter().enumerate() {
            let target = if k == 3 { 3.0 } else { 0.0 };
            assert!((c - target).abs() < 1e-6, "a[{k}] = {c}");
        }
    }

    #[test]
    fn fit_of_zero_is_zero() {
        let b = sample_basis(6, 64).unwrap();
        let fit = b.fit(&vec![0.0; 64 * 64]).unwrap();
        assert!(fit.coefficients.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn duplicate_modes_are_rank_deficient() {
        let b = ZernikeBasis::new(vec![2, 4, 4], 32).unwrap();
        let err = b.fit(&vec![1.0; 32 * 32]).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("condition")));
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let b = sample_basis(3, 32).unwrap();
        assert!(matches!(b.fit(&[0.0; 10]), Err(Error::Geometry(_))));
        assert!(sample_basis(3, 8).is_err());
    }

    #[test]
    fn unnormalized_tilt_is_unit_slope() {
        let b = ZernikeBasis::unnormalized(vec![2], 32).unwrap();
        let g = b.grid();
        for &i in g.inside() {
            assert!((b.sample(0)[i] - g.x()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_list_parsing() {
        assert_eq!(parse_mode_list("4-15").unwrap(), (4..=15).collect::<Vec<_>>());
        assert_eq!(parse_mode_list("2, 3,5-6").unwrap(), vec![2, 3, 5, 6]);
        assert!(parse_mode_list("0-3").is_err());
        assert!(parse_mode_list("9-4").is_err());
        assert!(parse_mode_list("").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fit_round_trip(coeffs in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let b = sample_basis(12, 64).unwrap();
            let phase = b.synthesize(&coeffs).unwrap();
            let fit = b.fit(&phase).unwrap();
            let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
            let err = coeffs.iter().zip(&fit.coefficients).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err / norm < 1e-5);
        }
    }
}
