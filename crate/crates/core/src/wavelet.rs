//! Beta-kernel graph wavelets.
//!
//! A Beta kernel of order `(p, q)` is the Beta(p+1, q+1) density stretched
//! to the normalized-Laplacian spectrum `[0, 2]`:
//!
//! ```text
//! g(w) = (w/2)^p (1 - w/2)^q / (2 B(p+1, q+1)),   B(p+1, q+1) = p! q! / (p+q+1)!
//! ```
//!
//! Because `g` is a polynomial, `g(L) x` needs only `p + q` sparse
//! mat-vecs and is exactly `(p + q)`-hop local. A bank of order `C` holds
//! the `C + 1` kernels with `p + q = C`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, LaplacianKind, LinearOperator};
use crate::quadrature::integrate;
use crate::spectral::Spectrum;

/// Largest supported bank order; the normalization constant loses precision beyond it.
pub const MAX_ORDER: usize = 30;

/// Lower cutoff for the admissibility integral.
pub const ADMISSIBILITY_EPS: f64 = 1e-9;

// `1 / B(p+1, q+1) = (p+q+1) * C(p+q, p)`, exact in integers for p + q <= MAX_ORDER.
fn inv_beta(p: usize, q: usize) -> f64 {
    let mut binom: u128 = 1;
    for i in 0..p {
        binom = binom * (q + 1 + i) as u128 / (i + 1) as u128;
    }
    ((p + q + 1) as u128 * binom) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaKernel {
    p: usize,
    q: usize,
    norm_const: f64,
}

impl BetaKernel {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p + q > MAX_ORDER {
            return Err(Error::invalid(format!(
                "kernel order p + q = {} exceeds the supported maximum {MAX_ORDER}",
                p + q
            )));
        }
        Ok(Self {
            p,
            q,
            norm_const: 0.5 * inv_beta(p, q),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn order(&self) -> usize {
        self.p + self.q
    }

    /// `1 / (2 B(p+1, q+1))`
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    /// `B(p+1, q+1)`
    pub fn beta_fn(&self) -> f64 {
        1.0 / inv_beta(self.p, self.q)
    }

    pub fn evaluate(&self, w: f64) -> f64 {
        if !(0.0..=2.0).contains(&w) {
            return 0.0;
        }
        let half = w / 2.0;
        self.norm_const * half.powi(self.p as i32) * (1.0 - half).powi(self.q as i32)
    }

    /// Frequency of the response peak, `2p / (p + q)`.
    pub fn peak(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        2.0 * self.p as f64 / self.order() as f64
    }

    pub fn id(&self) -> String {
        format!("beta_{}_{}", self.p, self.q)
    }
}

/// `g(w)` of the kernel; see [`BetaKernel::evaluate`].
pub fn kernel_evaluate(k: &BetaKernel, w: f64) -> f64 {
    k.evaluate(w)
}

fn require_normalized(l: &Laplacian) -> Result<()> {
    match l.kind() {
        LaplacianKind::Normalized => Ok(()),
        LaplacianKind::Regular => Err(Error::RequiresNormalized),
    }
}

// x <- x - L x / 2
fn low_step(l: &Laplacian, x: &mut [f64], scratch: &mut [f64]) {
    l.apply_into(x, scratch);
    for (v, s) in x.iter_mut().zip(scratch.iter()) {
        *v -= 0.5 * s;
    }
}

// x <- L x / 2
fn high_step(l: &Laplacian, x: &mut [f64], scratch: &mut [f64]) {
    l.apply_into(x, scratch);
    for (v, s) in x.iter_mut().zip(scratch.iter()) {
        *v = 0.5 * s;
    }
}

fn apply_kernel_into(k: &BetaKernel, l: &Laplacian, x: &mut [f64], scratch: &mut [f64]) {
    for _ in 0..k.q {
        low_step(l, x, scratch);
    }
    for _ in 0..k.p {
        high_step(l, x, scratch);
    }
    for v in x.iter_mut() {
        *v *= k.norm_const;
    }
}

/// `g(L) x` via `p + q` sparse mat-vecs: the `(I - L/2)` factors first,
/// then the `L/2` factors.
pub fn wavelet_apply(k: &BetaKernel, l: &Laplacian, x: &[f64]) -> Result<Vec<f64>> {
    require_normalized(l)?;
    if x.len() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            found: x.len(),
        });
    }
    let mut out = x.to_vec();
    let mut scratch = vec![0.0; x.len()];
    apply_kernel_into(k, l, &mut out, &mut scratch);
    Ok(out)
}

/// [`wavelet_apply`] on every column of `x`.
pub fn wavelet_apply_columns(k: &BetaKernel, l: &Laplacian, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_normalized(l)?;
    if x.nrows() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            found: x.nrows(),
        });
    }
    let mut out = x.clone();
    let mut scratch = vec![0.0; x.nrows()];
    for mut col in out.column_iter_mut() {
        apply_kernel_into(k, l, col.as_mut_slice(), &mut scratch);
    }
    Ok(out)
}

/// The `C + 1` Beta kernels `(0, C), (1, C-1), ..., (C, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletBank {
    order: usize,
    kernels: Vec<BetaKernel>,
}

impl WaveletBank {
    pub fn new(order: usize) -> Result<Self> {
        let kernels = (0..=order)
            .map(|p| BetaKernel::new(p, order - p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { order, kernels })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn kernels(&self) -> &[BetaKernel] {
        &self.kernels
    }

    /// Applies every member to every column of `x`. Output `i` is kernel
    /// `(i, C - i)`, bitwise equal to [`wavelet_apply_columns`] for that
    /// kernel: the shared `(I - L/2)^q x` prefixes are computed once.
    pub fn apply_all(&self, l: &Laplacian, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        require_normalized(l)?;
        if x.nrows() != l.dim() {
            return Err(Error::DimensionMismatch {
                expected: l.dim(),
                found: x.nrows(),
            });
        }
        let c = self.order;
        let mut scratch = vec![0.0; x.nrows()];
        // low[q] = (I - L/2)^q x
        let mut low = Vec::with_capacity(c + 1);
        low.push(x.clone());
        for q in 1..=c {
            let mut next = low[q - 1].clone();
            for mut col in next.column_iter_mut() {
                low_step(l, col.as_mut_slice(), &mut scratch);
            }
            low.push(next);
        }
        let mut out = Vec::with_capacity(c + 1);
        for k in &self.kernels {
            let mut z = low[k.q].clone();
            for mut col in z.column_iter_mut() {
                let col = col.as_mut_slice();
                for _ in 0..k.p {
                    high_step(l, col, &mut scratch);
                }
                for v in col.iter_mut() {
                    *v *= k.norm_const;
                }
            }
            out.push(z);
        }
        Ok(out)
    }
}

/// `g(w) = exp(-tau w)`, the low-pass reference kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernel {
    tau: f64,
}

impl HeatKernel {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("heat kernel scale must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn evaluate(&self, w: f64) -> f64 {
        (-self.tau * w).exp()
    }

    /// `U exp(-tau Lambda) U^T x` column-wise; small graphs only.
    pub fn apply_columns(&self, spectrum: &Spectrum, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        spectrum.filter_columns(x, |w| self.evaluate(w))
    }

    pub fn id(&self) -> String {
        format!("heat_{}", self.tau)
    }

    /// Chebyshev coefficients of `exp(-tau w)` on `[0, 2]` in the variable
    /// `t = w - 1`, truncated at the first term below `1e-15`.
    pub fn chebyshev_coefficients(&self) -> Vec<f64> {
        const NODES: usize = 512;
        const MAX_TERMS: usize = 256;
        let theta: Vec<f64> = (0..NODES)
            .map(|j| std::f64::consts::PI * (j as f64 + 0.5) / NODES as f64)
            .collect();
        let f: Vec<f64> = theta.iter().map(|t| self.evaluate(1.0 + t.cos())).collect();
        let mut coeffs: Vec<f64> = (0..MAX_TERMS)
            .map(|k| {
                let sum: f64 = theta.iter().zip(&f).map(|(t, v)| v * (k as f64 * t).cos()).sum();
                2.0 * sum / NODES as f64
            })
            .collect();
        coeffs[0] *= 0.5;
        // The true coefficients decay monotonically; past the first one
        // under the cutoff only rounding noise remains.
        let keep = (1..MAX_TERMS).find(|&k| coeffs[k].abs() < 1e-15).unwrap_or(MAX_TERMS);
        coeffs.truncate(keep);
        coeffs
    }
}

/// `sum_k c_k T_k(L - I) x` for each coefficient set, sharing the
/// three-term recurrence. Matrix-free, `O(K |E|)` per column.
pub fn chebyshev_apply_columns(l: &Laplacian, x: &DMatrix<f64>, coeffs: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
    require_normalized(l)?;
    if x.nrows() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            found: x.nrows(),
        });
    }
    let terms = coeffs.iter().map(Vec::len).max().unwrap_or(0);
    let mut out: Vec<DMatrix<f64>> = coeffs.iter().map(|c| x * c.first().copied().unwrap_or(0.0)).collect();
    if terms < 2 {
        return Ok(out);
    }
    // T_1 = (L - I) x, T_{k+1} = 2 (L - I) T_k - T_{k-1}
    let shifted = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> { Ok(l.apply_columns(m)? - m) };
    let mut prev = x.clone();
    let mut cur = shifted(x)?;
    for k in 1..terms {
        for (o, c) in out.iter_mut().zip(coeffs) {
            if let Some(&ck) = c.get(k) {
                o.zip_apply(&cur, |a, b| *a += ck * b);
            }
        }
        if k + 1 < terms {
            let mut next = shifted(&cur)? * 2.0;
            next -= &prev;
            prev = std::mem::replace(&mut cur, next);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub p: usize,
    pub q: usize,
    /// Quadrature of `|g(w)|^2 / w` over `(eps, 2]`.
    pub integral: f64,
    pub quadrature_error: f64,
    /// Upper bound on the omitted `(0, eps]` piece; infinite when `p = 0`.
    pub truncation_bound: f64,
    /// `1 / B(p+1, q+1)`
    pub constant_bound: f64,
    pub pass: bool,
    pub reason: Option<String>,
}

/// Checks the wavelet admissibility integral of a Beta kernel.
pub fn check_admissibility(k: &BetaKernel) -> Admissibility {
    let eps = ADMISSIBILITY_EPS;
    let r = integrate(|w| k.evaluate(w).powi(2) / w, eps, 2.0, 1e-13, 1e-12);
    let constant_bound = 1.0 / k.beta_fn();
    if k.p == 0 {
        return Admissibility {
            p: k.p,
            q: k.q,
            integral: r.value,
            quadrature_error: r.error,
            truncation_bound: f64::INFINITY,
            constant_bound,
            pass: false,
            reason: Some("low-pass member, g(0)≠0".into()),
        };
    }
    // Near zero the integrand is at most c^2 w^{2p-1} / 4^p.
    let two_p = 2 * k.p as i32;
    let truncation_bound = k.norm_const.powi(2) * eps.powi(two_p) / (two_p as f64 * 2f64.powi(two_p));
    let total = r.value + truncation_bound;
    let pass = total.is_finite() && total <= constant_bound;
    Admissibility {
        p: k.p,
        q: k.q,
        integral: r.value,
        quadrature_error: r.error,
        truncation_bound,
        constant_bound,
        pass,
        reason: (!pass).then(|| "integral exceeds bound".to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub mean_quadrature: f64,
    pub variance_quadrature: f64,
    /// Quadrature of the kernel itself; 1 for a density.
    pub mass_quadrature: f64,
}

/// Mean and variance of the kernel viewed as a density on `[0, 2]`, in
/// closed form and by quadrature.
pub fn kernel_moments(k: &BetaKernel) -> Moments {
    let (p, q) = (k.p as f64, k.q as f64);
    let s = p + q;
    let mean = 2.0 * (p + 1.0) / (s + 2.0);
    let variance = 4.0 * (p + 1.0) * (q + 1.0) / ((s + 2.0).powi(2) * (s + 3.0));
    let tol = 1e-14;
    let mass = integrate(|w| k.evaluate(w), 0.0, 2.0, tol, tol).value;
    let mean_quadrature = integrate(|w| w * k.evaluate(w), 0.0, 2.0, tol, tol).value;
    let second = integrate(|w| w * w * k.evaluate(w), 0.0, 2.0, tol, tol).value;
    Moments {
        mean,
        variance,
        mean_quadrature,
        variance_quadrature: second - mean_quadrature * mean_quadrature,
        mass_quadrature: mass,
    }
}

/// A spectral kernel shown in a response table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Beta(BetaKernel),
    Heat(HeatKernel),
}

impl Kernel {
    pub fn evaluate(&self, w: f64) -> f64 {
        match self {
            Kernel::Beta(k) => k.evaluate(w),
            Kernel::Heat(k) => k.evaluate(w),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Kernel::Beta(k) => k.id(),
            Kernel::Heat(k) => k.id(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassType {
    /// Response peaks at zero frequency.
    LowPass,
    /// Response peaks away from zero.
    BandPass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelResponse {
    pub kernel_id: String,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub tau: Option<f64>,
    pub values: Vec<f64>,
    pub argmax: f64,
    pub pass_type: PassType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    pub grid: Vec<f64>,
    pub kernels: Vec<KernelResponse>,
}

impl ResponseTable {
    /// Long-format CSV with columns `kernel_id,p,q,w,g_of_w`; `p` and `q`
    /// are empty for heat kernels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel_id,p,q,w,g_of_w\n");
        for k in &self.kernels {
            let p = k.p.map(|v| v.to_string()).unwrap_or_default();
            let q = k.q.map(|v| v.to_string()).unwrap_or_default();
            for (w, g) in self.grid.iter().zip(&k.values) {
                writeln!(out, "{},{p},{q},{w},{g}", k.kernel_id).unwrap();
            }
        }
        out
    }
}

/// Evenly spaced grid over `[0, 2]` with `step` spacing.
pub fn spectral_grid(step: f64) -> Vec<f64> {
    let n = (2.0 / step).round() as usize;
    (0..=n).map(|i| (i as f64 * step).min(2.0)).collect()
}

/// Evaluates each kernel on `grid` (which must lie in `[0, 2]` and contain 0
/// for the low-pass flag to be meaningful) and classifies it.
pub fn frequency_response_table(kernels: &[Kernel], grid: &[f64]) -> Result<ResponseTable> {
    if grid.is_empty() {
        return Err(Error::invalid("empty frequency grid"));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=2.0).contains(*w)) {
        return Err(Error::invalid(format!("grid point {w} outside [0, 2]")));
    }
    let rows = kernels
        .iter()
        .map(|k| {
            let values: Vec<f64> = grid.iter().map(|&w| k.evaluate(w)).collect();
            let best = values
                .iter()
                .enumerate()
                .fold(0, |best, (i, v)| if *v > values[best] { i } else { best });
            let argmax = grid[best];
            let pass_type = if argmax == 0.0 {
                PassType::LowPass
            } else {
                PassType::BandPass
            };
            let (p, q, tau) = match k {
                Kernel::Beta(b) => (Some(b.p), Some(b.q), None),
                Kernel::Heat(h) => (None, None, Some(h.tau)),
            };
            KernelResponse {
                kernel_id: k.id(),
                p,
                q,
                tau,
                values,
                argmax,
                pass_type,
            }
        })
        .collect();
    Ok(ResponseTable {
        grid: grid.to_vec(),
        kernels: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSet;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn norm_const_matches_factorials() {
        for c in 0..=12 {
            for p in 0..=c {
                let q = c - p;
                let b = factorial(p) * factorial(q) / factorial(p + q + 1);
                let k = BetaKernel::new(p, q).unwrap();
                assert!((k.norm_const() - 1.0 / (2.0 * b)).abs() <= 1e-12 * k.norm_const());
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let k11 = BetaKernel::new(1, 1).unwrap();
        assert!((kernel_evaluate(&k11, 1.0) - 0.75).abs() < 1e-14);
        for c in 1..8 {
            let k = BetaKernel::new(0, c).unwrap();
            assert!((k.evaluate(0.0) - (c as f64 + 1.0) / 2.0).abs() < 1e-12);
        }
        assert_eq!(BetaKernel::new(2, 1).unwrap().evaluate(2.0), 0.0);
        assert_eq!(k11.evaluate(-0.1), 0.0);
        assert_eq!(k11.evaluate(2.1), 0.0);
        assert_eq!(k11.evaluate(0.0), 0.0);
    }

    #[test]
    fn order_cap() {
        assert!(BetaKernel::new(20, 11).is_err());
        assert!(WaveletBank::new(MAX_ORDER).is_ok());
    }

    #[test]
    fn bank_layout() {
        let bank = WaveletBank::new(4).unwrap();
        assert_eq!(bank.kernels().len(), 5);
        for (i, k) in bank.kernels().iter().enumerate() {
            assert_eq!((k.p(), k.q()), (i, 4 - i));
        }
    }

    #[test]
    fn order_zero_halves_the_signal() {
        let edges = EdgeSet::from_pairs(3, [(0, 1), (1, 2)]).unwrap().0;
        let l = Laplacian::new(edges, LaplacianKind::Normalized).unwrap();
        let k = BetaKernel::new(0, 0).unwrap();
        assert_eq!(wavelet_apply(&k, &l, &[2.0, -4.0, 6.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn regular_laplacian_rejected() {
        let edges = EdgeSet::from_pairs(2, [(0, 1)]).unwrap().0;
        let l = Laplacian::new(edges, LaplacianKind::Regular).unwrap();
        let err = wavelet_apply(&BetaKernel::new(1, 1).unwrap(), &l, &[1.0, 0.0]).unwrap_err();
        assert_eq!(err.to_string(), "Beta wavelet requires normalized Laplacian");
    }

    #[test]
    fn bank_matches_single_kernel_bitwise() {
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5)];
        let edges = EdgeSet::from_pairs(6, pairs).unwrap().0;
        let l = Laplacian::new(edges, LaplacianKind::Normalized).unwrap();
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 + 1.0) * if j == 0 { 1.0 } else { -0.3 });
        let bank = WaveletBank::new(3).unwrap();
        let all = bank.apply_all(&l, &x).unwrap();
        for (k, z) in bank.kernels().iter().zip(&all) {
            assert_eq!(z, &wavelet_apply_columns(k, &l, &x).unwrap());
        }
    }

    #[test]
    fn admissibility_examples() {
        let a11 = check_admissibility(&BetaKernel::new(1, 1).unwrap());
        assert!(a11.pass);
        assert!((a11.constant_bound - 6.0).abs() < 1e-12);
        // 9 * int_0^1 u (1-u)^2 du
        assert!((a11.integral - 0.75).abs() < 1e-10, "{}", a11.integral);

        let a02 = check_admissibility(&BetaKernel::new(0, 2).unwrap());
        assert!(!a02.pass);
        assert_eq!(a02.reason.as_deref(), Some("low-pass member, g(0)≠0"));

        let a31 = check_admissibility(&BetaKernel::new(3, 1).unwrap());
        assert!(a31.pass && a31.integral.is_finite());
    }

    #[test]
    fn moments_examples() {
        let m = kernel_moments(&BetaKernel::new(1, 1).unwrap());
        assert!((m.mean - 1.0).abs() < 1e-15);
        assert!((m.variance - 0.2).abs() < 1e-15);
        assert!((m.mean_quadrature - 1.0).abs() < 1e-10);
        assert!((m.variance_quadrature - 0.2).abs() < 1e-10);
        for p in 0..6 {
            assert!((kernel_moments(&BetaKernel::new(p, p).unwrap()).mean - 1.0).abs() < 1e-15);
        }
        let wide = kernel_moments(&BetaKernel::new(1, 1).unwrap()).variance;
        let narrow = kernel_moments(&BetaKernel::new(9, 9).unwrap()).variance;
        assert!(narrow < wide);
    }

    #[test]
    fn chebyshev_heat_matches_spectrum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let edges = crate::synth::barabasi_albert(60, 2, &mut rng).unwrap();
        let lap = Laplacian::new(edges, LaplacianKind::Normalized).unwrap();
        let spectrum = crate::spectral::eigendecompose(&lap).unwrap();
        let x = DMatrix::from_fn(60, 3, |_, _| rng.gen_range(-1.0..1.0));
        let kernels: Vec<HeatKernel> = [0.5, 1.0, 3.0, 10.0].iter().map(|&t| HeatKernel::new(t).unwrap()).collect();
        let coeffs: Vec<Vec<f64>> = kernels.iter().map(HeatKernel::chebyshev_coefficients).collect();
        let got = chebyshev_apply_columns(&lap, &x, &coeffs).unwrap();
        for (k, g) in kernels.iter().zip(&got) {
            let want = k.apply_columns(&spectrum, &x).unwrap();
            assert!((g - &want).amax() <= 1e-10 * want.amax(), "tau {}", k.tau());
        }
        assert!(coeffs[3].len() < 80);
    }

    #[test]
    fn response_classification() {
        let bank = WaveletBank::new(4).unwrap();
        let mut kernels: Vec<Kernel> = bank.kernels().iter().copied().map(Kernel::Beta).collect();
        for tau in [1.0, 3.0, 5.0, 10.0] {
            kernels.push(Kernel::Heat(HeatKernel::new(tau).unwrap()));
        }
        let table = frequency_response_table(&kernels, &spectral_grid(0.01)).unwrap();
        for row in &table.kernels {
            let expect_low = row.p == Some(0) || row.tau.is_some();
            assert_eq!(row.pass_type == PassType::LowPass, expect_low, "{}", row.kernel_id);
        }
        let csv = table.to_csv();
        assert!(csv.starts_with("kernel_id,p,q,w,g_of_w\nbeta_0_4,0,4,0,2.5\n"));
        assert!(csv.contains("\nheat_1,,,0,1\n"));
    }

    #[test]
    fn argmax_matches_calculus() {
        let grid = spectral_grid(1e-4);
        for (p, q) in [(1, 1), (1, 3), (2, 3), (4, 1), (3, 7)] {
            let k = BetaKernel::new(p, q).unwrap();
            let table = frequency_response_table(&[Kernel::Beta(k)], &grid).unwrap();
            assert!((table.kernels[0].argmax - k.peak()).abs() <= 1e-4);
        }
    }

    #[test]
    fn grid_outside_range_rejected() {
        let k = Kernel::Beta(BetaKernel::new(1, 1).unwrap());
        assert!(frequency_response_table(&[k], &[0.0, 2.5]).is_err());
    }
}
