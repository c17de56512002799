//! Exact discrete Fourier analysis of embeddings over the token axis.
//!
//! Frequency `k` and `p − k` describe the same circle, so a [`Spectrum`]
//! stores `k = 1..=⌊(p−1)/2⌋` plus the real `k = 0` row (and, for even `p`,
//! the real Nyquist row `k = p/2`). The latter two are kept only so the
//! inverse transform is exact; they are never counted as circles.
//!
//! The DFT is a direct `O(p²d)` summation with a shared twiddle table.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Signal given to every non-selected frequency by [`construct_embedding`].
pub const DEFAULT_CONSTRUCT_EPS: f64 = 1e-6;

/// Number of circle frequencies for modulus `p`.
pub fn n_freq(p: usize) -> usize {
    p.saturating_sub(1) / 2
}

/// Fourier coefficients of an embedding, `F_k = Σ_n e^{−i2πkn/p} E_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    p: usize,
    d: usize,
    /// Row `k − 1` holds `F_k ∈ ℂ^d`.
    coefficients: Vec<Complex64>,
    dc: Vec<f64>,
    nyquist: Option<Vec<f64>>,
}

/// `(cos, sin)` of `2πm/p` for `m = 0..p`.
fn twiddles(p: usize) -> Vec<(f64, f64)> {
    (0..p)
        .map(|m| {
            let (s, c) = (TAU * m as f64 / p as f64).sin_cos();
            (c, s)
        })
        .collect()
}

impl Spectrum {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_freq(&self) -> usize {
        n_freq(self.p)
    }

    pub fn dc(&self) -> &[f64] {
        &self.dc
    }

    pub fn dc_mut(&mut self) -> &mut [f64] {
        &mut self.dc
    }

    pub fn nyquist(&self) -> Option<&[f64]> {
        self.nyquist.as_deref()
    }

    /// An all-zero spectrum.
    pub fn zeros(p: usize, d: usize) -> Spectrum {
        assert!(p >= 3, "spectrum needs p >= 3");
        Spectrum {
            p,
            d,
            coefficients: vec![Complex64::new(0.0, 0.0); n_freq(p) * d],
            dc: vec![0.0; d],
            nyquist: (p % 2 == 0).then(|| vec![0.0; d]),
        }
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_freq() {
            Err(Error::domain(format!(
                "frequency k = {k} outside 1..={} for p = {}",
                self.n_freq(),
                self.p
            )))
        } else {
            Ok(())
        }
    }

    /// `F_k` as a `d`-vector.
    pub fn coefficient(&self, k: usize) -> Result<&[Complex64]> {
        self.check_k(k)?;
        Ok(&self.coefficients[(k - 1) * self.d..k * self.d])
    }

    pub fn coefficient_mut(&mut self, k: usize) -> Result<&mut [Complex64]> {
        self.check_k(k)?;
        Ok(&mut self.coefficients[(k - 1) * self.d..k * self.d])
    }

    /// `‖F_k‖² = Σ_j |F_k^j|²`.
    pub fn signal(&self, k: usize) -> Result<f64> {
        Ok(self.coefficient(k)?.iter().map(|z| z.norm_sqr()).sum())
    }

    /// Signals of all frequencies; index `k − 1` holds frequency `k`.
    pub fn signals(&self) -> Vec<f64> {
        self.coefficients
            .chunks_exact(self.d.max(1))
            .map(|row| row.iter().map(|z| z.norm_sqr()).sum())
            .take(self.n_freq())
            .collect()
    }

    /// Multiply `F_k` by a real factor.
    pub fn scale_frequency(&mut self, k: usize, factor: f64) -> Result<()> {
        for z in self.coefficient_mut(k)? {
            *z *= factor;
        }
        Ok(())
    }

    /// Write as CSV with header `freq,dim,re,im`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq,dim,re,im\n");
        for k in 1..=self.n_freq() {
            for (j, z) in self.coefficients[(k - 1) * self.d..k * self.d].iter().enumerate() {
                let _ = writeln!(out, "{k},{j},{:.17e},{:.17e}", z.re, z.im);
            }
        }
        out
    }
}

/// DFT of the token axis of a `p×d` embedding.
pub fn dft_embedding(e: &Matrix) -> Spectrum {
    let (p, d) = e.shape();
    let tw = twiddles(p);
    let mut spec = Spectrum::zeros(p, d);
    for n in 0..p {
        let row = e.row(n);
        for (acc, &x) in spec.dc.iter_mut().zip(row) {
            *acc += x;
        }
        if let Some(nyq) = spec.nyquist.as_mut() {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            for (acc, &x) in nyq.iter_mut().zip(row) {
                *acc += sign * x;
            }
        }
    }
    for k in 1..=n_freq(p) {
        let coef = &mut spec.coefficients[(k - 1) * d..k * d];
        for n in 0..p {
            let (c, s) = tw[(k * n) % p];
            for (z, &x) in coef.iter_mut().zip(e.row(n)) {
                z.re += c * x;
                z.im -= s * x;
            }
        }
    }
    spec
}

/// Inverse of [`dft_embedding`]:
/// `E_n = (dc + 2·Σ_k Re(F_k e^{i2πkn/p}) [+ (−1)^n·nyquist]) / p`.
pub fn inverse_dft(spec: &Spectrum) -> Matrix {
    let (p, d) = (spec.p, spec.d);
    let tw = twiddles(p);
    let inv_p = 1.0 / p as f64;
    let mut e = Matrix::zeros(p, d);
    for n in 0..p {
        let row = e.row_mut(n);
        row.copy_from_slice(&spec.dc);
        if let Some(nyq) = &spec.nyquist {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            for (x, v) in row.iter_mut().zip(nyq) {
                *x += sign * v;
            }
        }
        for k in 1..=n_freq(p) {
            let (c, s) = tw[(k * n) % p];
            let coef = &spec.coefficients[(k - 1) * d..k * d];
            for (x, z) in row.iter_mut().zip(coef) {
                *x += 2.0 * (z.re * c - z.im * s);
            }
        }
        for x in row.iter_mut() {
            *x *= inv_p;
        }
    }
    e
}

/// Signal of frequency `k` of an embedding.
pub fn signal(spec: &Spectrum, k: usize) -> Result<f64> {
    spec.signal(k)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Step between adjacent tokens along the frequency-`k` circle: the inverse
/// of `k` modulo `p`, in `1..p`.
pub fn delta_of_frequency(k: usize, p: usize) -> Result<usize> {
    if p < 2 || gcd(k % p, p) != 1 {
        return Err(Error::domain(format!("frequency {k} has no inverse modulo {p} (gcd != 1)")));
    }
    // Extended Euclid on (k mod p, p).
    let (mut old_r, mut r) = ((k % p) as i64, p as i64);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    Ok(old_s.rem_euclid(p as i64) as usize)
}

/// Planar projection of every token onto the frequency-`k` circle plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirclePoints {
    pub k: usize,
    /// `None` when `gcd(k, p) != 1`.
    pub delta: Option<usize>,
    pub points: Vec<(f64, f64)>,
}

impl CirclePoints {
    pub fn radii(&self) -> Vec<f64> {
        self.points.iter().map(|(x, y)| x.hypot(*y)).collect()
    }

    /// Standard deviation over mean of the radii; 0 for a perfect circle.
    pub fn radius_cv(&self) -> f64 {
        let r = self.radii();
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }

    pub fn max_radius(&self) -> f64 {
        self.radii().into_iter().fold(0.0, f64::max)
    }

    /// CSV with header `token,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,x,y\n");
        for (t, (x, y)) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{t},{x:.17e},{y:.17e}");
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Project tokens onto the orthonormalized plane spanned by `Re F_k` and
/// `Im F_k`. Vanishing axes map to zero coordinates.
pub fn project_onto_frequency(e: &Matrix, k: usize) -> Result<CirclePoints> {
    let p = e.rows();
    let spec = dft_embedding(e);
    let coef = spec.coefficient(k)?;
    let re: Vec<f64> = coef.iter().map(|z| z.re).collect();
    let im: Vec<f64> = coef.iter().map(|z| z.im).collect();
    // Axis lengths below this are roundoff of an absent component.
    let floor = 1e-12 * e.norm_fro() * (p as f64).sqrt() + f64::MIN_POSITIVE;
    let unit = |v: Vec<f64>| {
        let n = norm(&v);
        if n > floor {
            v.into_iter().map(|x| x / n).collect()
        } else {
            vec![0.0; v.len()]
        }
    };
    let u = unit(re);
    let proj = dot(&im, &u);
    let v = unit(im.iter().zip(&u).map(|(a, b)| a - proj * b).collect());
    let points = (0..p).map(|t| (dot(e.row(t), &u), dot(e.row(t), &v))).collect();
    Ok(CirclePoints {
        k,
        delta: delta_of_frequency(k, p).ok(),
        points,
    })
}

/// How closely the frequency-`k` planar projection traces a circle that
/// advances by `2πk/p` per token; 1 for a perfect circle, 0 when the
/// projection has no frequency-`k` content.
///
/// With `X_j = (E_j·Re F_k, E_j·Im F_k)`:
/// `c_k = 2/(p·Σ_j‖X_j‖²) · ‖Σ_j X_j e^{2πi·jk/p}‖²`.
pub fn circularity(e: &Matrix, k: usize) -> Result<f64> {
    let p = e.rows();
    let spec = dft_embedding(e);
    let coef = spec.coefficient(k)?;
    let re: Vec<f64> = coef.iter().map(|z| z.re).collect();
    let im: Vec<f64> = coef.iter().map(|z| z.im).collect();
    let xs: Vec<(f64, f64)> = (0..p).map(|j| (dot(e.row(j), &re), dot(e.row(j), &im))).collect();
    circularity_of_points(&xs, k)
}

/// [`circularity`] for already-projected planar points `X_j`.
pub fn circularity_of_points(xs: &[(f64, f64)], k: usize) -> Result<f64> {
    let p = xs.len();
    let energy: f64 = xs.iter().map(|(a, b)| a * a + b * b).sum();
    if !(energy > 0.0) {
        return Err(Error::domain("degenerate projection"));
    }
    let tw = twiddles(p);
    let (mut sx, mut sy) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (j, &(a, b)) in xs.iter().enumerate() {
        let (c, s) = tw[(j * k) % p];
        let w = Complex64::new(c, s);
        sx += w * a;
        sy += w * b;
    }
    Ok(2.0 / (p as f64 * energy) * (sx.norm_sqr() + sy.norm_sqr()))
}

/// Leading principal directions of the mean-centred embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `m` orthonormal directions in `ℝ^d`.
    pub directions: Vec<Vec<f64>>,
    /// Non-increasing singular values of the centred embedding.
    pub singular_values: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Pca {
    /// Coordinates of every token in the principal basis.
    pub fn project(&self, e: &Matrix) -> Matrix {
        Matrix::from_fn(e.rows(), self.directions.len(), |t, i| {
            e.row(t)
                .iter()
                .zip(&self.mean)
                .zip(&self.directions[i])
                .map(|((x, m), v)| (x - m) * v)
                .sum()
        })
    }

    /// Rank-`m` reconstruction of the centred embedding.
    pub fn reconstruct_centered(&self, e: &Matrix) -> Matrix {
        let coords = self.project(e);
        Matrix::from_fn(e.rows(), e.cols(), |t, j| {
            (0..self.directions.len()).map(|i| coords[(t, i)] * self.directions[i][j]).sum()
        })
    }
}

const PCA_TOL: f64 = 1e-8;
const PCA_MAX_ITER: usize = 10_000;

/// Top-`m` right singular directions of the centred embedding by power
/// iteration on the `d×d` Gram matrix, deflating by projecting out the
/// directions already found.
pub fn pca_top_components(e: &Matrix, m: usize) -> Result<Pca> {
    let (p, d) = e.shape();
    if m == 0 || m > p.min(d) {
        return Err(Error::domain(format!("component count m = {m} outside 1..={}", p.min(d))));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..p).map(|t| e[(t, j)]).sum::<f64>() / p as f64).collect();
    let centered = Matrix::from_fn(p, d, |t, j| e[(t, j)] - mean[j]);
    let gram = centered.transpose().matmul(&centered);
    let top_scale = (0..d).map(|j| gram[(j, j)]).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut rng = SplitMix64::new(0x5eed_0f_9ca);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut eigs: Vec<f64> = Vec::with_capacity(m);
    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        // Two passes of modified Gram–Schmidt.
        for _ in 0..2 {
            for b in basis {
                let c = dot(v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
    };
    for comp in 0..m {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        orthogonalize(&mut v, &dirs);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..PCA_MAX_ITER {
            let mut w = gram.matvec(&v);
            orthogonalize(&mut w, &dirs);
            lambda = dot(&w, &v);
            let wn = norm(&w);
            if wn <= 1e-13 * top_scale {
                // Remaining spectrum is numerically zero.
                lambda = 0.0;
                converged = true;
                break;
            }
            let residual: f64 = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / wn).collect();
            let reference = eigs.first().copied().unwrap_or(lambda).max(f64::MIN_POSITIVE);
            if residual <= PCA_TOL * reference {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numeric(format!(
                "power iteration for component {comp} did not converge in {PCA_MAX_ITER} iterations"
            )));
        }
        orthogonalize(&mut v, &dirs);
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        dirs.push(v);
        eigs.push(lambda.max(0.0));
    }
    // Near-equal eigenvalues can come out marginally out of order.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eigs[b].total_cmp(&eigs[a]));
    Ok(Pca {
        directions: order.iter().map(|&i| dirs[i].clone()).collect(),
        singular_values: order.iter().map(|&i| eigs[i].sqrt()).collect(),
        mean,
    })
}

/// Multiply `F_k` by `scale`, leaving every other frequency unchanged.
pub fn perturb_frequency(e: &Matrix, k: usize, scale: f64) -> Result<Matrix> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::domain(format!("perturbation scale must be finite and >= 0 (got {scale})")));
    }
    let mut spec = dft_embedding(e);
    spec.scale_frequency(k, scale)?;
    Ok(inverse_dft(&spec))
}

/// Embedding whose spectrum is a random Gaussian embedding's spectrum
/// rescaled so that `signal(k1) = s`, `signal(k2) = r·s` and every other
/// frequency has signal `eps`.
#[allow(clippy::too_many_arguments)]
pub fn construct_embedding(
    p: usize,
    d: usize,
    k1: usize,
    k2: usize,
    s: f64,
    r: f64,
    eps: f64,
    seed: u64,
) -> Result<Matrix> {
    if p < 3 || d < 1 {
        return Err(Error::domain(format!("invalid embedding shape ({p}, {d})")));
    }
    if k1 == k2 {
        return Err(Error::domain("k1 and k2 must differ"));
    }
    if !(s > 0.0) || !(0.0..=1.0).contains(&r) || !(eps >= 0.0) {
        return Err(Error::domain(format!("need s > 0, r in [0,1], eps >= 0 (got s={s}, r={r}, eps={eps})")));
    }
    let mut rng = SplitMix64::new(seed);
    let mut base = Matrix::zeros(p, d);
    rng.fill_normal(base.as_mut_slice());
    let mut spec = dft_embedding(&base);
    spec.check_k(k1)?;
    spec.check_k(k2)?;
    for k in 1..=n_freq(p) {
        let target = if k == k1 {
            s
        } else if k == k2 {
            r * s
        } else {
            eps
        };
        let mut current = spec.signal(k)?;
        while target > 0.0 && !(current > 0.0) {
            for z in spec.coefficient_mut(k)? {
                *z = Complex64::new(rng.normal(), rng.normal());
            }
            current = spec.signal(k)?;
        }
        let factor = if target > 0.0 { (target / current).sqrt() } else { 0.0 };
        spec.scale_frequency(k, factor)?;
    }
    Ok(inverse_dft(&spec))
}

/// Keep only the listed frequencies; the mean (and Nyquist row) are zeroed.
pub fn ablate_to_frequencies(e: &Matrix, keep: &[usize]) -> Result<Matrix> {
    let mut spec = dft_embedding(e);
    if keep.is_empty() {
        return Err(Error::domain("keep set must be nonempty"));
    }
    for &k in keep {
        spec.check_k(k)?;
    }
    for k in 1..=spec.n_freq() {
        if !keep.contains(&k) {
            spec.scale_frequency(k, 0.0)?;
        }
    }
    spec.dc.iter_mut().for_each(|x| *x = 0.0);
    if let Some(nyq) = spec.nyquist.as_mut() {
        nyq.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(inverse_dft(&spec))
}

/// Frequencies ordered by descending signal (ties by frequency).
pub fn frequencies_by_signal(signals: &[f64]) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..=signals.len()).collect();
    ks.sort_by(|&a, &b| signals[b - 1].total_cmp(&signals[a - 1]).then(a.cmp(&b)));
    ks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(p: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        let mut e = Matrix::zeros(p, d);
        rng.fill_normal(e.as_mut_slice());
        e
    }

    /// Direct complex summation, independent of the twiddle-table path.
    fn naive_coefficient(e: &Matrix, k: usize, j: usize) -> Complex64 {
        let p = e.rows();
        (0..p)
            .map(|n| Complex64::from_polar(1.0, -TAU * (k * n) as f64 / p as f64) * e[(n, j)])
            .sum()
    }

    fn cosine_embedding(p: usize, d: usize, k: usize) -> Matrix {
        Matrix::from_fn(p, d, |n, j| if j == 0 { (TAU * (k * n) as f64 / p as f64).cos() } else { 0.0 })
    }

    fn circle_embedding(p: usize, d: usize, k: usize) -> Matrix {
        Matrix::from_fn(p, d, |t, j| {
            let th = TAU * (k * t) as f64 / p as f64;
            match j {
                0 => th.cos(),
                1 => th.sin(),
                _ => 0.0,
            }
        })
    }

    #[test]
    fn zero_embedding_has_zero_spectrum() {
        let spec = dft_embedding(&Matrix::zeros(11, 3));
        assert!(spec.signals().iter().all(|&s| s == 0.0));
        assert_eq!(spec.signal(3).unwrap(), 0.0);
    }

    #[test]
    fn pure_cosine_concentrates_at_its_frequency() {
        let e = cosine_embedding(59, 4, 7);
        let spec = dft_embedding(&e);
        let f = spec.coefficient(7).unwrap()[0];
        let naive = naive_coefficient(&e, 7, 0);
        assert!((f - naive).norm() < 1e-10);
        assert!((f.norm() - 29.5).abs() < 1e-10);
        assert!((spec.signal(7).unwrap() - 870.25).abs() < 1e-9);
        for k in (1..=29).filter(|&k| k != 7) {
            assert!(spec.signal(k).unwrap() < 1e-18, "k={k}: {}", spec.signal(k).unwrap());
        }
        let back = inverse_dft(&spec);
        for (a, b) in back.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_summation_on_random_input() {
        let e = random(13, 5, 4);
        let spec = dft_embedding(&e);
        for k in 1..=6 {
            for j in 0..5 {
                assert!((spec.coefficient(k).unwrap()[j] - naive_coefficient(&e, k, j)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn signal_rejects_out_of_range_frequency() {
        let spec = dft_embedding(&random(7, 2, 1));
        assert!(spec.signal(0).unwrap_err().is_domain());
        assert!(spec.signal(4).unwrap_err().is_domain());
        assert!(spec.signal(3).is_ok());
    }

    #[test]
    fn signals_scale_quadratically() {
        let e = random(17, 6, 2);
        let s1 = dft_embedding(&e).signals();
        let s2 = dft_embedding(&e.scale(-3.0)).signals();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((b - 9.0 * a).abs() <= 1e-9 * b);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant_column() {
        let mut spec = Spectrum::zeros(9, 3);
        spec.dc_mut()[0] = 9.0;
        let e = inverse_dft(&spec);
        for t in 0..9 {
            assert!((e[(t, 0)] - 1.0).abs() < 1e-15);
            assert_eq!(e[(t, 1)], 0.0);
        }
    }

    #[test]
    fn even_modulus_round_trips_through_nyquist_row() {
        let e = random(12, 4, 8);
        let back = inverse_dft(&dft_embedding(&e));
        for (a, b) in back.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_examples_and_brute_force() {
        assert_eq!(delta_of_frequency(1, 59).unwrap(), 1);
        assert_eq!(delta_of_frequency(2, 59).unwrap(), 30);
        assert_eq!(delta_of_frequency(29, 59).unwrap(), 57);
        let brute = |k: usize, p: usize| (1..p).find(|dl| (k * dl) % p == 1);
        assert_eq!(brute(2, 59), Some(30));
        assert_eq!(brute(29, 59), Some(57));
        assert!(delta_of_frequency(4, 12).unwrap_err().is_domain());
        assert_eq!(delta_of_frequency(5, 12).unwrap(), 5);
    }

    #[test]
    fn circle_projection_has_constant_radius() {
        let e = circle_embedding(31, 6, 4);
        let pts = project_onto_frequency(&e, 4).unwrap();
        let r = pts.radii();
        for x in &r {
            assert!((x - r[0]).abs() < 1e-9);
        }
        assert_eq!(pts.delta, Some(8));
        let zero = project_onto_frequency(&Matrix::zeros(31, 6), 4).unwrap();
        assert!(zero.points.iter().all(|&(x, y)| x == 0.0 && y == 0.0));
    }

    #[test]
    fn circularity_extremes() {
        for (p, k) in [(59, 7), (31, 1), (13, 6)] {
            let pts: Vec<(f64, f64)> = (0..p)
                .map(|j| {
                    let th = TAU * (j * k) as f64 / p as f64;
                    (th.cos(), th.sin())
                })
                .collect();
            assert!((circularity_of_points(&pts, k).unwrap() - 1.0).abs() < 1e-12);
            let c = circularity(&circle_embedding(p, 5, k), k).unwrap();
            assert!((c - 1.0).abs() < 1e-9, "embedded circle {c}");
        }
        let constant = vec![(0.3, -1.2); 59];
        assert!(circularity_of_points(&constant, 5).unwrap().abs() < 1e-12);
        assert!(circularity_of_points(&[(0.0, 0.0); 7], 2).unwrap_err().to_string().contains("degenerate projection"));
        assert!(circularity(&Matrix::zeros(7, 3), 2).is_err());
    }

    #[test]
    fn circularity_of_random_embeddings_is_intermediate() {
        let mut total = 0.0;
        let mut n = 0.0;
        for seed in 0..50 {
            let e = random(59, 128, 1000 + seed);
            for k in 1..=29 {
                let c = circularity(&e, k).unwrap();
                assert!((0.0..=1.0 + 1e-9).contains(&c));
                total += c;
                n += 1.0;
            }
        }
        let mean = total / n;
        assert!(mean > 0.0 && mean < 1.0, "mean circularity {mean}");
    }

    #[test]
    fn pca_single_column() {
        let e = Matrix::from_fn(10, 4, |t, j| if j == 2 { t as f64 * 0.7 - 1.0 } else { 0.0 });
        let pca = pca_top_components(&e, 3).unwrap();
        assert!((pca.directions[0][2].abs() - 1.0).abs() < 1e-9);
        assert!(pca.singular_values[0] > 1.0);
        assert!(pca.singular_values[1].abs() < 1e-9 && pca.singular_values[2].abs() < 1e-9);
    }

    #[test]
    fn pca_of_circle_has_two_equal_values() {
        let pca = pca_top_components(&circle_embedding(59, 8, 3), 3).unwrap();
        let sv = &pca.singular_values;
        assert!((sv[0] - sv[1]).abs() < 1e-6 * sv[0], "{sv:?}");
        assert!(sv[2] < 1e-6 * sv[0]);
    }

    #[test]
    fn pca_full_rank_reconstruction() {
        let e = random(59, 128, 77);
        let pca = pca_top_components(&e, 59).unwrap();
        for w in pca.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let rec = pca.reconstruct_centered(&e);
        for t in 0..59 {
            for j in 0..128 {
                let centered = e[(t, j)] - pca.mean[j];
                assert!((rec[(t, j)] - centered).abs() < 1e-6);
            }
        }
        assert!(pca_top_components(&e, 60).unwrap_err().is_domain());
    }

    #[test]
    fn perturbation_examples() {
        let e = random(23, 7, 5);
        let before = dft_embedding(&e).signals();
        let same = perturb_frequency(&e, 4, 1.0).unwrap();
        for (a, b) in same.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        let killed = dft_embedding(&perturb_frequency(&e, 4, 0.0).unwrap()).signals();
        assert!(killed[3] < 1e-18);
        for k in (1..=11).filter(|&k| k != 4) {
            assert!((killed[k - 1] - before[k - 1]).abs() <= 1e-9 * before[k - 1]);
        }
        let tripled = dft_embedding(&perturb_frequency(&e, 4, 3.0).unwrap()).signals();
        assert!((tripled[3] - 9.0 * before[3]).abs() <= 1e-9 * tripled[3]);
        assert!(perturb_frequency(&e, 4, -1.0).unwrap_err().is_domain());
    }

    #[test]
    fn constructed_spectrum_is_as_requested() {
        let e = construct_embedding(59, 128, 5, 17, 7552.0, 0.4, DEFAULT_CONSTRUCT_EPS, 3).unwrap();
        let s = dft_embedding(&e).signals();
        assert!((s[4] - 7552.0).abs() <= 1e-9 * 7552.0);
        assert!((s[16] - 0.4 * 7552.0).abs() <= 1e-9 * 7552.0);
        for k in (1..=29).filter(|&k| k != 5 && k != 17) {
            assert!((s[k - 1] - 1e-6).abs() <= 1e-6 * 1e-6, "k={k}: {}", s[k - 1]);
        }
        let eq = construct_embedding(59, 16, 2, 3, 10.0, 1.0, 0.0, 9).unwrap();
        let s = dft_embedding(&eq).signals();
        assert!((s[1] - s[2]).abs() <= 1e-9 * 10.0);
        assert!(construct_embedding(59, 16, 2, 2, 10.0, 1.0, 0.0, 9).is_err());
        assert!(construct_embedding(59, 16, 2, 3, 10.0, 1.5, 0.0, 9).is_err());
    }

    #[test]
    fn ablation_keeps_only_selected_rows() {
        let e = random(29, 6, 12);
        let spec = dft_embedding(&e);
        let only = dft_embedding(&ablate_to_frequencies(&e, &[5]).unwrap());
        assert!((only.signal(5).unwrap() - spec.signal(5).unwrap()).abs() <= 1e-9 * spec.signal(5).unwrap());
        for k in (1..=14).filter(|&k| k != 5) {
            assert!(only.signal(k).unwrap() < 1e-18);
        }
        assert!(only.dc().iter().all(|x| x.abs() < 1e-9));

        let mut zero_mean = spec.clone();
        zero_mean.dc_mut().iter_mut().for_each(|x| *x = 0.0);
        let centered = inverse_dft(&zero_mean);
        let all: Vec<usize> = (1..=14).collect();
        let kept = ablate_to_frequencies(&centered, &all).unwrap();
        for (a, b) in kept.as_slice().iter().zip(centered.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(ablate_to_frequencies(&e, &[]).is_err());
        assert!(ablate_to_frequencies(&e, &[15]).is_err());
    }

    #[test]
    fn csv_headers() {
        let e = circle_embedding(7, 2, 1);
        assert!(dft_embedding(&e).to_csv().starts_with("freq,dim,re,im\n1,0,"));
        assert!(project_onto_frequency(&e, 1).unwrap().to_csv().starts_with("token,x,y\n0,"));
    }

    #[test]
    fn ordering_by_signal() {
        assert_eq!(frequencies_by_signal(&[1.0, 5.0, 3.0, 5.0]), vec![2, 4, 3, 1]);
    }
}
