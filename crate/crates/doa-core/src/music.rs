//! MUSIC baseline estimator.
//!
//! Pipeline: sample covariance of one observation's snapshots, Hermitian
//! eigendecomposition (cyclic Jacobi with unitary 2x2 rotations), noise
//! subspace from the L-M smallest eigenpairs, pseudo-spectrum
//! P(theta) = 1 / ||E_n^H a(theta)||^2 over the class angle grid, argmax.
//!
//! The source count M is fixed to 1 (one active transmission). Dataset
//! evaluation equalizes each observation's rows by the known per-antenna
//! mixing gains before classification; the gains are receiver parameters and
//! re-derivable from the dataset's master seed.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::signal::{ArrayGeometry, Observation, WidebandGrid};

/// Pseudo-spectrum denominators are floored here to keep values finite at
/// exact orthogonality.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Hermitian sample covariance of an observation's d snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Row-major L x L Hermitian matrix.
    pub matrix: Vec<Complex64>,
    pub dim: usize,
    pub snapshot_count: usize,
}

/// Eigenpairs of a covariance estimate, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SubspaceDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Concatenated orthonormal eigenvectors; eigenvector `j` occupies
    /// `eigenvectors[j*L..(j+1)*L]` and pairs with `eigenvalues[j]`.
    pub eigenvectors: Vec<Complex64>,
    pub dim: usize,
    /// Assumed number of sources M; the noise subspace is the trailing
    /// L - M eigenvectors.
    pub source_count: usize,
}

/// MUSIC pseudo-spectrum sampled on a class angle grid.
#[derive(Debug, Clone)]
pub struct PseudoSpectrum {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
}

// ── Covariance ───────────────────────────────────────────────────────

/// (1/d) X X^H over the observation's snapshots.
pub fn sample_covariance(obs: &Observation) -> Result<CovarianceEstimate> {
    let l = obs.antenna_count;
    let d = obs.samples_per_antenna;
    if d < l {
        return Err(Error::argument(format!("insufficient snapshots: d={d} < L={l}")));
    }
    let mut matrix = vec![Complex64::new(0.0, 0.0); l * l];
    for i in 0..l {
        let row_i = obs.row(i);
        for j in i..l {
            let row_j = obs.row(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..d {
                acc += row_i[t] * row_j[t].conj();
            }
            acc /= d as f64;
            matrix[i * l + j] = acc;
            matrix[j * l + i] = acc.conj();
        }
    }
    // Exact real diagonal.
    for i in 0..l {
        matrix[i * l + i] = Complex64::new(matrix[i * l + i].re, 0.0);
    }
    Ok(CovarianceEstimate { matrix, dim: l, snapshot_count: d })
}

// ── Eigendecomposition ───────────────────────────────────────────────

fn hermitian_deviation(matrix: &[Complex64], n: usize) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..n {
        dev = dev.max(matrix[i * n + i].im.abs());
        for j in (i + 1)..n {
            dev = dev.max((matrix[i * n + j] - matrix[j * n + i].conj()).norm());
        }
    }
    dev
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix. Eigenvalues come
/// out descending with orthonormal eigenvectors; `source_count` is carried
/// into the decomposition for the noise-subspace split.
pub fn hermitian_eig(cov: &CovarianceEstimate, source_count: usize) -> Result<SubspaceDecomposition> {
    let n = cov.dim;
    if cov.matrix.len() != n * n {
        return Err(Error::argument(format!(
            "covariance buffer holds {} entries, expected {}",
            cov.matrix.len(),
            n * n
        )));
    }
    let scale = cov.matrix.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if hermitian_deviation(&cov.matrix, n) > 1e-12 * scale.max(1.0) {
        return Err(Error::argument("matrix is not Hermitian within tolerance".to_string()));
    }

    let mut a = cov.matrix.clone();
    let mut v = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = Complex64::new(1.0, 0.0);
    }

    let off = |a: &[Complex64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let frob = cov.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);

    for _sweep in 0..60 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let r = apq.norm();
                if r <= tol / (n as f64) {
                    continue;
                }
                let phi = apq.arg();
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let theta = 0.5 * (2.0 * r).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                let e_pos = Complex64::from_polar(1.0, phi);
                let e_neg = e_pos.conj();

                // Right-multiply columns p,q of A and V by the rotation.
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip + s * e_neg * aiq;
                    a[i * n + q] = -s * e_pos * aip + c * aiq;
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip + s * e_neg * viq;
                    v[i * n + q] = -s * e_pos * vip + c * viq;
                }
                // Left-multiply rows p,q of A by the adjoint rotation.
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj + s * e_pos * aqj;
                    a[q * n + j] = -s * e_neg * apj + c * aqj;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eigvals: Vec<f64> = (0..n).map(|i| a[i * n + i].re).collect();
    order.sort_by(|&i, &j| eigvals[j].partial_cmp(&eigvals[i]).unwrap());

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n * n);
    for &col in &order {
        eigenvalues.push(eigvals[col]);
        for row in 0..n {
            eigenvectors.push(v[row * n + col]);
        }
    }
    Ok(SubspaceDecomposition { eigenvalues, eigenvectors, dim: n, source_count })
}

// ── Pseudo-spectrum and classification ───────────────────────────────

/// MUSIC spectrum 1 / ||E_n^H a(theta)||^2 over `angles_deg`.
pub fn pseudo_spectrum(
    dec: &SubspaceDecomposition,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    angles_deg: &[f64],
) -> Result<PseudoSpectrum> {
    let l = dec.dim;
    let m = dec.source_count;
    if m >= l {
        return Err(Error::argument(format!("source count {m} must be < L={l}")));
    }
    if geometry.antenna_count != l {
        return Err(Error::argument(format!(
            "geometry has {} elements, decomposition is {l}-dimensional",
            geometry.antenna_count
        )));
    }
    let mut values = Vec::with_capacity(angles_deg.len());
    for &angle in angles_deg {
        let a = geometry.steering_vector(frequency_hz, angle)?;
        let mut denom = 0.0;
        for k in m..l {
            let e = &dec.eigenvectors[k * l..(k + 1) * l];
            let mut dot = Complex64::new(0.0, 0.0);
            for i in 0..l {
                dot += e[i].conj() * a[i];
            }
            denom += dot.norm_sqr();
        }
        values.push(1.0 / denom.max(DENOMINATOR_FLOOR));
    }
    Ok(PseudoSpectrum { angles_deg: angles_deg.to_vec(), values })
}

/// Classify one observation as the grid angle maximizing the pseudo-spectrum.
/// Ties break to the lowest class index.
pub fn music_classify(
    obs: &Observation,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    class_angles_deg: &[f64],
) -> Result<usize> {
    if class_angles_deg.is_empty() {
        return Err(Error::argument("empty class angle grid".to_string()));
    }
    let cov = sample_covariance(obs)?;
    let dec = hermitian_eig(&cov, 1)?;
    let spectrum = pseudo_spectrum(&dec, geometry, frequency_hz, class_angles_deg)?;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (k, &value) in spectrum.values.iter().enumerate() {
        if value > best_value {
            best_value = value;
            best = k;
        }
    }
    Ok(best)
}

/// Undo the known per-antenna mixing gains of the occupied band
/// (receiver-side equalization). Requires every gain to be nonzero.
pub fn compensate_mixing(obs: &Observation, grid: &WidebandGrid) -> Result<Observation> {
    if grid.antenna_count() != obs.antenna_count {
        return Err(Error::argument(format!(
            "grid is sized for {} antennas, observation has {}",
            grid.antenna_count(),
            obs.antenna_count
        )));
    }
    if grid.occupied_bands.len() != 1 {
        return Err(Error::Unsupported(format!(
            "{} occupied bands; exactly one is supported",
            grid.occupied_bands.len()
        )));
    }
    let busy = grid.occupied_bands[0];
    let d = obs.samples_per_antenna;
    let mut out = obs.clone();
    for antenna in 0..obs.antenna_count {
        let gain = grid.mixing_gain(antenna, busy);
        if gain.abs() < 1e-300 {
            return Err(Error::DegenerateInput(format!(
                "mixing gain for antenna {antenna} is zero; cannot equalize"
            )));
        }
        for z in &mut out.samples[antenna * d..(antenna + 1) * d] {
            *z /= gain;
        }
    }
    Ok(out)
}

/// Fraction of test-split observations MUSIC classifies correctly, after
/// equalizing the dataset's mixing gains.
pub fn music_accuracy(ds: &LabeledDataset) -> Result<f64> {
    let test = ds.split_indices(Split::Test);
    if test.is_empty() {
        return Err(Error::argument("dataset has no test split".to_string()));
    }
    let geometry = ds.params.geometry()?;
    let grid = ds.params.grid()?;
    let carrier = ds.params.carrier_hz();
    let angles = ds.params.class_angles()?;

    let correct: usize = test
        .par_iter()
        .map(|&i| -> Result<usize> {
            let obs = &ds.observations[i];
            let equalized = compensate_mixing(obs, &grid)?;
            let predicted = music_classify(&equalized, &geometry, carrier, &angles)?;
            Ok((Some(predicted as u16) == obs.true_label) as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / test.len() as f64)
}

// ── Tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_observation, SourceSpec};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GHZ: f64 = 1.0e9;

    fn obs_from_rows(rows: Vec<Vec<Complex64>>) -> Observation {
        let l = rows.len();
        let d = rows[0].len();
        Observation {
            antenna_count: l,
            samples_per_antenna: d,
            sample_rate_hz: 1.0,
            samples: rows.into_iter().flatten().collect(),
            true_label: None,
            snr_db: None,
        }
    }

    fn noiseless_obs(l: usize, angle: f64, d: usize, seed: u64) -> (Observation, ArrayGeometry) {
        let geometry = ArrayGeometry::half_wavelength(l, GHZ).unwrap();
        let grid = WidebandGrid::unit(l, 14, 20.0e6, 1).unwrap();
        let center = grid.band_center_hz(&geometry, 1);
        let obs =
            synthesize_observation(&[SourceSpec::qpsk(center, angle, 1)], &grid, &geometry, d, seed)
                .unwrap();
        (obs, geometry)
    }

    // Independent eigenvalue oracle: Sylvester inertia bisection. The number
    // of negative pivots of the unpivoted LDL^H factorization of A - s*I
    // counts the eigenvalues below s.
    fn count_eigs_below(matrix: &[Complex64], n: usize, shift: f64) -> Option<usize> {
        let mut b = matrix.to_vec();
        for i in 0..n {
            b[i * n + i] -= shift;
        }
        let mut negatives = 0;
        for col in 0..n {
            let pivot = b[col * n + col].re;
            if pivot.abs() < 1e-300 {
                return None; // exact hit; caller jitters the shift
            }
            if pivot < 0.0 {
                negatives += 1;
            }
            for row in (col + 1)..n {
                let factor = b[row * n + col] / pivot;
                for j in col..n {
                    let upper = b[col * n + j];
                    b[row * n + j] -= factor * upper;
                }
            }
        }
        Some(negatives)
    }

    fn eigenvalues_by_bisection(matrix: &[Complex64], n: usize) -> Vec<f64> {
        // Gershgorin bounds.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let center = matrix[i * n + i].re;
            let radius: f64 = (0..n).filter(|&j| j != i).map(|j| matrix[i * n + j].norm()).sum();
            lo = lo.min(center - radius);
            hi = hi.max(center + radius);
        }
        let width = (hi - lo).max(1e-12);
        let count = |s: f64| -> usize {
            let mut shift = s;
            loop {
                if let Some(c) = count_eigs_below(matrix, n, shift) {
                    return c;
                }
                shift += width * 1e-13;
            }
        };
        (1..=n)
            .map(|k| {
                let (mut a, mut b) = (lo - width * 1e-9, hi + width * 1e-9);
                for _ in 0..120 {
                    let mid = 0.5 * (a + b);
                    if count(mid) >= k {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CovarianceEstimate {
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            m[i * n + i] = Complex64::new(rng.random_range(-2.0..2.0), 0.0);
            for j in (i + 1)..n {
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m[i * n + j] = z;
                m[j * n + i] = z.conj();
            }
        }
        CovarianceEstimate { matrix: m, dim: n, snapshot_count: n }
    }

    #[test]
    fn covariance_of_zero_observation_is_zero() {
        let obs = obs_from_rows(vec![vec![Complex64::new(0.0, 0.0); 8]; 3]);
        let cov = sample_covariance(&obs).unwrap();
        assert!(cov.matrix.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn covariance_of_repeated_snapshot_is_rank_one() {
        // d copies of the same snapshot x give exactly x x^H.
        let x = [Complex64::new(1.0, 0.5), Complex64::new(-0.3, 2.0), Complex64::new(0.0, -1.0)];
        let rows: Vec<Vec<Complex64>> = (0..3).map(|i| vec![x[i]; 4]).collect();
        let cov = sample_covariance(&obs_from_rows(rows)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = x[i] * x[j].conj();
                assert!((cov.matrix[i * 3 + j] - expected).norm() < 1e-12);
            }
        }
        let dec = hermitian_eig(&cov, 1).unwrap();
        assert!(dec.eigenvalues[1].abs() <= 1e-9 * dec.eigenvalues[0].abs());
    }

    #[test]
    fn too_few_snapshots_is_an_error() {
        let obs = obs_from_rows(vec![vec![Complex64::new(1.0, 0.0); 2]; 3]);
        assert!(sample_covariance(&obs).is_err());
    }

    #[test]
    fn noiseless_single_source_covariance_is_numerically_rank_one() {
        let (obs, _) = noiseless_obs(4, 37.0, 64, 5);
        let cov = sample_covariance(&obs).unwrap();
        let dec = hermitian_eig(&cov, 1).unwrap();
        assert!(
            dec.eigenvalues[1].abs() <= 1e-9 * dec.eigenvalues[0],
            "eigenvalues: {:?}",
            dec.eigenvalues
        );
    }

    #[test]
    fn eig_of_identity_and_diagonal() {
        let id = CovarianceEstimate {
            matrix: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
            dim: 2,
            snapshot_count: 2,
        };
        let dec = hermitian_eig(&id, 1).unwrap();
        assert_eq!(dec.eigenvalues, vec![1.0, 1.0]);

        let diag = CovarianceEstimate {
            matrix: vec![
                Complex64::new(3.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
            dim: 2,
            snapshot_count: 2,
        };
        let dec = hermitian_eig(&diag, 1).unwrap();
        assert_eq!(dec.eigenvalues, vec![3.0, 1.0]);
        // Eigenvectors are the basis vectors up to a unit phase.
        assert!((dec.eigenvectors[0].norm() - 1.0).abs() < 1e-12);
        assert!(dec.eigenvectors[1].norm() < 1e-12);
        assert!(dec.eigenvectors[2].norm() < 1e-12);
        assert!((dec.eigenvectors[3].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_the_inertia_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 2 + (trial % 5);
            let cov = random_hermitian(n, &mut rng);
            let dec = hermitian_eig(&cov, 1).unwrap();
            let mut oracle = eigenvalues_by_bisection(&cov.matrix, n);
            oracle.reverse(); // ascending -> descending
            for (got, want) in dec.eigenvalues.iter().zip(&oracle) {
                assert!((got - want).abs() <= 1e-8, "n={n} trial={trial}: {got} vs oracle {want}");
            }
        }
    }

    #[test]
    fn eigenpairs_satisfy_residual_and_orthonormality_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..200 {
            let n = 2 + (trial % 5);
            let cov = random_hermitian(n, &mut rng);
            let dec = hermitian_eig(&cov, 1).unwrap();
            let norm = cov.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for k in 0..n {
                let v = &dec.eigenvectors[k * n..(k + 1) * n];
                for i in 0..n {
                    let mut av = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        av += cov.matrix[i * n + j] * v[j];
                    }
                    let resid = (av - dec.eigenvalues[k] * v[i]).norm();
                    assert!(resid <= 1e-8 * norm.max(1e-30), "residual {resid} at n={n}");
                }
                for k2 in 0..n {
                    let w = &dec.eigenvectors[k2 * n..(k2 + 1) * n];
                    let mut dot = Complex64::new(0.0, 0.0);
                    for i in 0..n {
                        dot += v[i].conj() * w[i];
                    }
                    let expected = if k == k2 { 1.0 } else { 0.0 };
                    assert!((dot.norm() - expected).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let cov = CovarianceEstimate {
            matrix: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(0.2, 0.0),
                Complex64::new(1.0, 0.0),
            ],
            dim: 2,
            snapshot_count: 2,
        };
        assert!(hermitian_eig(&cov, 1).is_err());
    }

    #[test]
    fn spectrum_peaks_at_the_source_angle() {
        let (obs, geometry) = noiseless_obs(4, 45.0, 64, 9);
        let cov = sample_covariance(&obs).unwrap();
        let dec = hermitian_eig(&cov, 1).unwrap();
        let grid: Vec<f64> = (0..20).map(|k| -90.0 + 9.0 * k as f64).collect();
        let spec = pseudo_spectrum(&dec, &geometry, GHZ, &grid).unwrap();
        let best =
            spec.values.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(spec.angles_deg[best], 45.0);
        assert!(spec.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn spectrum_is_mirror_symmetric_about_the_array_axis() {
        let (obs, geometry) = noiseless_obs(4, 30.0, 64, 13);
        let cov = sample_covariance(&obs).unwrap();
        let dec = hermitian_eig(&cov, 1).unwrap();
        for theta in [10.0, 30.0, 62.0, 85.0] {
            let spec = pseudo_spectrum(&dec, &geometry, GHZ, &[theta, 180.0 - theta]).unwrap();
            let (a, b) = (spec.values[0], spec.values[1]);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()), "{theta}: {a} vs {b}");
        }
    }

    #[test]
    fn source_count_must_be_below_dimension() {
        let (obs, geometry) = noiseless_obs(3, 10.0, 32, 1);
        let cov = sample_covariance(&obs).unwrap();
        let dec = hermitian_eig(&cov, 3).unwrap();
        assert!(pseudo_spectrum(&dec, &geometry, GHZ, &[0.0]).is_err());
    }

    #[test]
    fn classify_self_mirror_angle_on_the_full_circle() {
        let (obs, geometry) = noiseless_obs(4, 90.0, 64, 21);
        let grid: Vec<f64> = (0..40).map(|k| 9.0 * k as f64).collect();
        let class = music_classify(&obs, &geometry, GHZ, &grid).unwrap();
        assert_eq!(grid[class], 90.0);
    }

    #[test]
    fn classify_45_on_a_half_plane_grid_with_two_antennas() {
        let (obs, geometry) = noiseless_obs(2, 45.0, 64, 33);
        let grid: Vec<f64> = (0..4).map(|k| 45.0 * k as f64).collect(); // 0,45,90,135
        let class = music_classify(&obs, &geometry, GHZ, &grid).unwrap();
        assert_eq!(grid[class], 45.0);
    }

    #[test]
    fn classification_is_scale_invariant() {
        let (obs, geometry) = noiseless_obs(4, -27.0, 64, 41);
        let noisy =
            crate::signal::add_awgn(&obs, &crate::signal::NoiseSpec { snr_db: 5.0, rng_seed: 4 })
                .unwrap();
        let grid: Vec<f64> = (0..20).map(|k| -90.0 + 9.0 * k as f64).collect();
        let base = music_classify(&noisy, &geometry, GHZ, &grid).unwrap();
        for scale in [10.0, 0.001, -3.0] {
            let mut scaled = noisy.clone();
            for z in &mut scaled.samples {
                *z *= scale;
            }
            assert_eq!(music_classify(&scaled, &geometry, GHZ, &grid).unwrap(), base);
        }
    }

    #[test]
    fn pure_noise_still_yields_a_valid_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rows: Vec<Vec<Complex64>> = (0..4)
            .map(|_| {
                (0..64)
                    .map(|_| {
                        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    })
                    .collect()
            })
            .collect();
        let obs = obs_from_rows(rows);
        let geometry = ArrayGeometry::half_wavelength(4, GHZ).unwrap();
        let grid: Vec<f64> = (0..8).map(|k| 45.0 * k as f64).collect();
        let class = music_classify(&obs, &geometry, GHZ, &grid).unwrap();
        assert!(class < 8);
    }

    #[test]
    fn mixing_compensation_divides_rows_by_their_gains() {
        let geometry = ArrayGeometry::half_wavelength(2, GHZ).unwrap();
        let grid = WidebandGrid::with_mixing(2, 20.0e6, vec![2.0, 1.0, -0.5, 1.0], vec![1]).unwrap();
        let center = grid.band_center_hz(&geometry, 1);
        let obs =
            synthesize_observation(&[SourceSpec::tone(center, 30.0, 1)], &grid, &geometry, 32, 3)
                .unwrap();
        let eq = compensate_mixing(&obs, &grid).unwrap();
        for (a, b) in eq.row(0).iter().zip(obs.row(0)) {
            assert!((a * 2.0 - b).norm() < 1e-12);
        }
        for (a, b) in eq.row(1).iter().zip(obs.row(1)) {
            assert!((a * -0.5 - b).norm() < 1e-12);
        }
    }
}
