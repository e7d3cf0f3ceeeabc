//! Gaussian-process preference regression with a Laplace approximation.
//!
//! Utilities `f` live on the unique training inputs. Comparisons use
//! `P(a ≻ b) = Φ((f_a − f_b)/(√2 σ_p))` (or `sigmoid((f_a − f_b)/σ_p)`), ordinal
//! labels `g((b_y − f)/σ_o) − g((b_{y−1} − f)/σ_o)`.
//!
//! Newton runs in the coordinates `a = C⁻¹f`, so `C` is never inverted:
//!
//! ```text
//! a ← (I + W C)⁻¹ (W f + ∇ℓ),   Σ̂ = C (I + W C)⁻¹,   Σ* = K₀ − k*ᵀ (I + W C)⁻¹ W k*
//! ```
//!
//! This module computes in `f64` only.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{Link, OrdinalThresholds};
use crate::scalar::{norm_cdf, norm_pdf, sigmoid, sq_dist};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GPError {
    #[error("no training data")]
    NoData,
    #[error("ordinal data needs thresholds")]
    NoThresholds,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("label {0} outside the threshold categories")]
    LabelRange(u32),
    #[error("kernel matrix not positive definite even with jitter {0}")]
    IllConditioned(f64),
    #[error("Newton did not converge in {iters} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iters: usize, grad_norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, GPError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPConfig {
    pub theta: f64,
    /// Zero-utility anchor `ψ̃`.
    pub anchor: Vec<f64>,
    pub sigma_pref: f64,
    pub sigma_ord: f64,
    pub thresholds: Option<OrdinalThresholds<f64>>,
    pub link: Link,
    pub jitter: f64,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
}

impl GPConfig {
    pub fn new(theta: f64, anchor: Vec<f64>) -> Self {
        GPConfig {
            theta,
            anchor,
            sigma_pref: 1.0,
            sigma_ord: 1.0,
            thresholds: None,
            link: Link::GaussianCdf,
            jitter: 1e-6,
            newton_max_iter: 100,
            newton_tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [("theta", self.theta), ("sigma_pref", self.sigma_pref), ("sigma_ord", self.sigma_ord), ("jitter", self.jitter)];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GPError::Config(format!("{name} must be positive")));
            }
        }
        if self.anchor.is_empty() {
            return Err(GPError::Config("anchor must have dimension ≥ 1".into()));
        }
        Ok(())
    }

    /// Scale dividing `f_a − f_b` inside the comparison link.
    fn pref_scale(&self) -> f64 {
        match self.link {
            Link::GaussianCdf => std::f64::consts::SQRT_2 * self.sigma_pref,
            Link::Sigmoid => self.sigma_pref,
        }
    }
}

/// Anchored RBF variant `exp(−ϑ‖ψ_i−ψ_j‖²) − exp(−ϑ‖ψ_i−ψ̃‖² − ϑ‖ψ_j−ψ̃‖²)`.
pub fn kernel(a: &[f64], b: &[f64], cfg: &GPConfig) -> Result<f64> {
    if a.len() != b.len() || a.len() != cfg.anchor.len() {
        return Err(GPError::DimMismatch(a.len(), b.len().max(cfg.anchor.len())));
    }
    Ok(kernel_unchecked(a, b, cfg))
}

fn kernel_unchecked(a: &[f64], b: &[f64], cfg: &GPConfig) -> f64 {
    let t = cfg.theta;
    (-t * sq_dist(a, b)).exp() - (-t * sq_dist(a, &cfg.anchor) - t * sq_dist(b, &cfg.anchor)).exp()
}

fn gram(points: &[Vec<f64>], cfg: &GPConfig) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| kernel_unchecked(&points[i], &points[j], cfg))
}

/// `φ(z)/Φ(z)` with an asymptotic expansion deep in the left tail.
fn mills_inv(z: f64) -> f64 {
    if z > -30.0 {
        norm_pdf(z) / norm_cdf(z)
    } else {
        let zi = 1.0 / z;
        -z - zi + 2.0 * zi * zi * zi
    }
}

/// `(ln P, d/dz, d²/dz²)` of `ln g(z)`.
fn log_link_derivs(z: f64, link: Link) -> (f64, f64, f64) {
    match link {
        Link::GaussianCdf => {
            let l = mills_inv(z);
            let lp = if z > -30.0 { norm_cdf(z).ln() } else { -0.5 * z * z - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() };
            (lp, l, -l * (z + l))
        }
        Link::Sigmoid => {
            let s = sigmoid(z);
            let lp = -(-z).exp().ln_1p();
            let lp = if lp.is_finite() { lp } else { z };
            (lp, 1.0 - s, -s * (1.0 - s))
        }
    }
}

/// `g, g', g''` at `x`, with the conventions at `±∞`.
fn link_parts(x: f64, link: Link) -> (f64, f64, f64) {
    if x == f64::INFINITY {
        return (1.0, 0.0, 0.0);
    }
    if x == f64::NEG_INFINITY {
        return (0.0, 0.0, 0.0);
    }
    match link {
        Link::GaussianCdf => {
            let p = norm_pdf(x);
            (norm_cdf(x), p, -x * p)
        }
        Link::Sigmoid => {
            let s = sigmoid(x);
            let d = s * (1.0 - s);
            (s, d, d * (1.0 - 2.0 * s))
        }
    }
}

/// One comparison datum on unique-point indices.
#[derive(Debug, Clone, Copy)]
struct Cmp {
    win: usize,
    lose: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ord {
    at: usize,
    label: usize,
}

struct Objective<'a> {
    cfg: &'a GPConfig,
    cmps: &'a [Cmp],
    ords: &'a [Ord],
    n: usize,
}

impl Objective<'_> {
    /// `ℓ(f)`, `∇ℓ`, and `W = −∇²ℓ`.
    fn eval(&self, f: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let mut ll = 0.0;
        let mut g = DVector::zeros(self.n);
        let mut w = DMatrix::zeros(self.n, self.n);
        let s = self.cfg.pref_scale();
        for c in self.cmps {
            let z = (f[c.win] - f[c.lose]) / s;
            let (lp, d1, d2) = log_link_derivs(z, self.cfg.link);
            ll += lp;
            g[c.win] += d1 / s;
            g[c.lose] -= d1 / s;
            let h = -d2 / (s * s);
            w[(c.win, c.win)] += h;
            w[(c.lose, c.lose)] += h;
            w[(c.win, c.lose)] -= h;
            w[(c.lose, c.win)] -= h;
        }
        if let Some(thr) = &self.cfg.thresholds {
            let so = self.cfg.sigma_ord;
            for o in self.ords {
                let a = (thr.bound(o.label) - f[o.at]) / so;
                let c = (thr.bound(o.label - 1) - f[o.at]) / so;
                let (_, pa, qa) = link_parts(a, self.cfg.link);
                let (_, pc, qc) = link_parts(c, self.cfg.link);
                let big = self.cfg.link.cdf_diff(a, c).max(1e-300);
                ll += big.ln();
                let r1 = (pa - pc) / big;
                let r2 = (qa - qc) / big;
                g[o.at] -= r1 / so;
                w[(o.at, o.at)] -= (r2 - r1 * r1) / (so * so);
            }
        }
        (ll, g, w)
    }
}

/// Laplace-approximated posterior over latent utilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GPPosterior {
    pub cfg: GPConfig,
    /// Unique training inputs.
    pub points: Vec<Vec<f64>>,
    pub f_map: Vec<f64>,
    /// `C + jitter·I`.
    pub prior_cov: DMatrix<f64>,
    /// `W`, the negative log-likelihood Hessian at `f̂`.
    pub hess: DMatrix<f64>,
    /// `Σ̂ = (C⁻¹ + W)⁻¹`.
    pub post_cov: DMatrix<f64>,
    /// `C⁻¹ f̂`.
    pub alpha: DVector<f64>,
    /// `(I + W C)⁻¹ W`, the predictive covariance correction.
    pub pred: DMatrix<f64>,
    pub jitter_used: f64,
    pub iterations: usize,
    /// `‖∇ℓ(f̂) − C⁻¹f̂‖` at the returned mode.
    pub grad_norm: f64,
}

/// Comparison datum: winner and loser features.
pub type Comparison = (Vec<f64>, Vec<f64>);
/// Ordinal datum: features and label in `1..=o`.
pub type OrdinalDatum = (Vec<f64>, u32);

fn intern(points: &mut Vec<Vec<f64>>, index: &mut HashMap<Vec<u64>, usize>, p: &[f64]) -> usize {
    let key: Vec<u64> = p.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect();
    *index.entry(key).or_insert_with(|| {
        points.push(p.to_vec());
        points.len() - 1
    })
}

/// Fits the Laplace posterior by damped Newton.
pub fn laplace_fit(comparisons: &[Comparison], ordinals: &[OrdinalDatum], cfg: &GPConfig) -> Result<GPPosterior> {
    cfg.validate()?;
    if comparisons.is_empty() && ordinals.is_empty() {
        return Err(GPError::NoData);
    }
    let d = cfg.anchor.len();
    let mut points = Vec::new();
    let mut index = HashMap::new();
    let mut cmps = Vec::with_capacity(comparisons.len());
    for (a, b) in comparisons {
        for p in [a, b] {
            if p.len() != d {
                return Err(GPError::DimMismatch(p.len(), d));
            }
        }
        cmps.push(Cmp { win: intern(&mut points, &mut index, a), lose: intern(&mut points, &mut index, b) });
    }
    let mut ords = Vec::with_capacity(ordinals.len());
    if !ordinals.is_empty() {
        let thr = cfg.thresholds.as_ref().ok_or(GPError::NoThresholds)?;
        for (p, label) in ordinals {
            if p.len() != d {
                return Err(GPError::DimMismatch(p.len(), d));
            }
            if *label < 1 || *label as usize > thr.categories() {
                return Err(GPError::LabelRange(*label));
            }
            ords.push(Ord { at: intern(&mut points, &mut index, p), label: *label as usize });
        }
    }
    let n = points.len();
    let base = gram(&points, cfg);
    let mut jitter = cfg.jitter;
    let c = loop {
        let c = &base + DMatrix::identity(n, n) * jitter;
        if c.clone().cholesky().is_some() {
            break c;
        }
        jitter *= 10.0;
        if jitter > 1e-2 * (1.0 + 1e-9) {
            return Err(GPError::IllConditioned(jitter / 10.0));
        }
    };
    let obj = Objective { cfg, cmps: &cmps, ords: &ords, n };
    let psi = |a: &DVector<f64>| {
        let f = &c * a;
        let (ll, _, _) = obj.eval(&f);
        ll - 0.5 * a.dot(&f)
    };
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = DVector::<f64>::zeros(n);
    let mut cur = psi(&a);
    let mut iters = 0;
    let mut grad_norm = f64::INFINITY;
    while iters < cfg.newton_max_iter {
        let f = &c * &a;
        let (_, g, w) = obj.eval(&f);
        grad_norm = (&g - &a).norm();
        if grad_norm <= cfg.newton_tol {
            break;
        }
        iters += 1;
        let b = &w * &f + &g;
        let lhs = &eye + &w * &c;
        let Some(target) = lhs.lu().solve(&b) else {
            return Err(GPError::IllConditioned(jitter));
        };
        let dir = target - &a;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = &a + &dir * t;
            let v = psi(&cand);
            if v >= cur {
                a = cand;
                cur = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let f = &c * &a;
    let (_, g, w) = obj.eval(&f);
    grad_norm = grad_norm.min((&g - &a).norm());
    if grad_norm > cfg.newton_tol.max(1e-6) {
        return Err(GPError::NoConvergence { iters, grad_norm });
    }
    let lu = (&eye + &w * &c).lu();
    let inv = lu.try_inverse().ok_or(GPError::IllConditioned(jitter))?;
    let post_cov = &c * &inv;
    let post_cov = (&post_cov + post_cov.transpose()) * 0.5;
    let pred = &inv * &w;
    Ok(GPPosterior {
        cfg: cfg.clone(),
        points,
        f_map: f.iter().copied().collect(),
        prior_cov: c,
        hess: w,
        post_cov,
        alpha: a,
        pred,
        jitter_used: jitter,
        iterations: iters,
        grad_norm,
    })
}

impl GPPosterior {
    /// Kernel of the fitted prior: the jitter is a nugget on the training
    /// inputs only, so untrained inputs such as the anchor keep `k`.
    fn k_fit(&self, a: &[f64], b: &[f64]) -> f64 {
        let nugget = if a == b && self.points.iter().any(|p| p.as_slice() == a) { self.jitter_used } else { 0.0 };
        kernel_unchecked(a, b, &self.cfg) + nugget
    }

    fn k_star(&self, xs: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(self.points.len(), xs.len(), |i, j| self.k_fit(&self.points[i], xs[j]))
    }

    /// Predictive mean and covariance at arbitrary inputs.
    pub fn infer(&self, xs: &[&[f64]]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let d = self.cfg.anchor.len();
        if let Some(x) = xs.iter().find(|x| x.len() != d) {
            return Err(GPError::DimMismatch(x.len(), d));
        }
        let ks = self.k_star(xs);
        let mu = ks.transpose() * &self.alpha;
        let k0 = DMatrix::from_fn(xs.len(), xs.len(), |i, j| self.k_fit(xs[i], xs[j]));
        let cov = k0 - ks.transpose() * &self.pred * &ks;
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok((mu.iter().copied().collect(), cov))
    }

    /// Mean 2-vector and 2×2 covariance of `(f(ψ1), f(ψ2))`.
    pub fn infer_pair(&self, a: &[f64], b: &[f64]) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let (mu, cov) = self.infer(&[a, b])?;
        Ok(([mu[0], mu[1]], [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]]))
    }

    /// Predictive mean and standard deviation at one input.
    pub fn mean_sd(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (mu, cov) = self.infer(&[x])?;
        Ok((mu[0], cov[(0, 0)].max(0.0).sqrt()))
    }

    /// `P(a ≻ b)` with the latent utilities marginalized.
    pub fn pref_prob(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let (mu, cov) = self.infer_pair(a, b)?;
        let g = (cov[0][0] + cov[1][1] - 2.0 * cov[0][1]).max(0.0);
        let dm = mu[0] - mu[1];
        Ok(match self.cfg.link {
            Link::GaussianCdf => norm_cdf(dm / (2.0 * self.cfg.sigma_pref * self.cfg.sigma_pref + g).sqrt()),
            // probit approximation of the logistic-normal integral
            Link::Sigmoid => sigmoid(dm / (self.cfg.sigma_pref * (1.0 + std::f64::consts::PI * g / (8.0 * self.cfg.sigma_pref.powi(2))).sqrt())),
        })
    }
}

/// Indices of candidates with `μ + λσ > b₁`.
pub fn estimate_roi(post: &GPPosterior, candidates: &[Vec<f64>], lambda: f64, b1: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let (m, s) = post.mean_sd(c)?;
        if m + lambda * s > b1 {
            out.push(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg1() -> GPConfig {
        GPConfig::new(1.0, vec![0.0, 0.0])
    }

    #[test]
    fn kernel_examples() {
        let c = cfg1();
        assert_eq!(kernel(&[0.0, 0.0], &[0.0, 0.0], &c).unwrap(), 0.0);
        assert!((kernel(&[9.0, 9.0], &[9.0, 9.0], &c).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(kernel(&[1.0, 0.0], &[0.0, 0.0], &c).unwrap(), 0.0);
        assert!(kernel(&[1.0], &[0.0, 0.0], &c).is_err());
    }

    #[test]
    fn single_and_symmetric_comparisons() {
        let c = cfg1();
        let a = vec![1.0, 0.5];
        let b = vec![-0.5, 1.0];
        let post = laplace_fit(&[(a.clone(), b.clone())], &[], &c).unwrap();
        assert!(post.f_map[0] > post.f_map[1]);
        assert!(post.grad_norm <= 1e-8);
        let post = laplace_fit(&[(a.clone(), b.clone()), (b.clone(), a.clone())], &[], &c).unwrap();
        assert!((post.f_map[0] - post.f_map[1]).abs() < 1e-8);
        assert_eq!(post.points.len(), 2);
    }

    #[test]
    fn inference_examples() {
        let mut c = cfg1();
        c.link = Link::Sigmoid;
        let x = vec![1.0, 1.0];
        let y = vec![-1.0, 0.5];
        let data: Vec<Comparison> = (0..30).map(|_| (x.clone(), y.clone())).collect();
        let post = laplace_fit(&data, &[], &c).unwrap();
        let (mu, cov) = post.infer_pair(&x, &x).unwrap();
        assert_eq!(mu[0], mu[1]);
        assert_eq!(cov[0], cov[1]);
        let (m, _) = post.mean_sd(&x).unwrap();
        assert!((m - post.f_map[0]).abs() < 1e-4);
        let (m0, s0) = post.mean_sd(&[0.0, 0.0]).unwrap();
        assert!(m0.abs() < 1e-9 && s0 < 1e-6);
    }

    #[test]
    fn ordinal_fit_respects_labels() {
        let mut c = cfg1();
        c.thresholds = Some(OrdinalThresholds::new(vec![-0.5, 0.0, 0.5]).unwrap());
        for link in [Link::GaussianCdf, Link::Sigmoid] {
            c.link = link;
            let post = laplace_fit(&[], &[(vec![1.0, 1.0], 4), (vec![-1.0, 1.0], 1)], &c).unwrap();
            assert!(post.f_map[0] > 0.0 && post.f_map[1] < 0.0);
            assert!(post.grad_norm < 1e-6);
        }
        c.thresholds = None;
        assert_eq!(laplace_fit(&[], &[(vec![1.0, 1.0], 1)], &c).unwrap_err(), GPError::NoThresholds);
    }

    #[test]
    fn roi_grows_with_lambda() {
        let c = cfg1();
        let post = laplace_fit(&[(vec![1.0, 0.0], vec![0.0, 1.0])], &[], &c).unwrap();
        let cands: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0, 0.3]).collect();
        assert_eq!(estimate_roi(&post, &cands, 1e6, 0.0).unwrap().len(), cands.len());
        let lo = estimate_roi(&post, &cands, -1.0, 0.0).unwrap();
        let hi = estimate_roi(&post, &cands, 1.0, 0.0).unwrap();
        assert!(lo.iter().all(|i| hi.contains(i)));
    }

    #[test]
    fn mills_ratio_is_continuous_at_switch() {
        let a = mills_inv(-29.999_999);
        let b = mills_inv(-30.000_001);
        assert!((a - b).abs() / a < 1e-6);
    }
}
