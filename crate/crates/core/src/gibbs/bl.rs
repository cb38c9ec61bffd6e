//! Partially collapsed Gibbs sampler for Bernoulli-Laplace increments.
//!
//! Increments are `u_k = v_k * s_k` with `v_k ~ Bernoulli(1 - zero_prob)` and
//! `s_k | w_k ~ N(0, w_k)`, `w_k ~ Exp(rate^2 / 2)`, which makes the slab a
//! Laplace law with the given rate. Each iteration draws `w | u, v`, then
//! sweeps the support bits with `u` integrated out, then draws `u | v, w`.
//!
//! Two equivalent ways of evaluating the support log-odds are provided:
//! [`BlState`] keeps a Cholesky factor of the marginal measurement covariance
//! `B = sigma^2 I + H diag(v w) H^T` (`H = A D^{-1}`) under rank-one updates;
//! the sequential backend treats row-selection operators as a scalar
//! state-space model and evaluates the same marginal likelihood ratios with a
//! Kalman filter and backward information messages in `O(d)` per sweep.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use super::{check_init, ChainSettings, Likelihood};
use crate::distributions::gig;
use crate::error::{dims, domain, Error, Result};
use crate::levy::{apply_d, apply_d_inv};
use crate::linalg::{cholesky_rank_one, dot, solve_lower_in_place};
use crate::rng::BenchRng;

/// How the support log-odds are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlBackend {
    /// Sequential for row-selection operators, Woodbury otherwise.
    #[default]
    Auto,
    Woodbury,
    Sequential,
}

#[derive(Debug, Clone)]
pub struct BlProblem<'a> {
    lik: &'a Likelihood,
    zero_prob: f64,
    rate: f64,
    backend: BlBackend,
}

/// `H = A D^{-1}`: column `k` is the sum of columns `k..d` of `A`.
pub fn increment_operator(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut h = a.clone();
    for k in (0..a.ncols().saturating_sub(1)).rev() {
        let next = h.column(k + 1).into_owned();
        h.column_mut(k).axpy(1.0, &next, 1.0);
    }
    h
}

fn logit_prior(zero_prob: f64) -> f64 {
    ((1.0 - zero_prob) / zero_prob).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn draw_mixing_scale<R: Rng + ?Sized>(on: bool, u: f64, rate: f64, rng: &mut R) -> f64 {
    let a = rate * rate;
    if !on {
        // Exp with rate b^2 / 2
        loop {
            let e: f64 = rng.sample(Exp1);
            if e > 0.0 {
                return e * 2.0 / a;
            }
        }
    }
    if u != 0.0 {
        gig::sample(a, u * u, 0.5, rng)
    } else {
        gig::sample_b_zero(a, 0.5, rng)
    }
}

fn bernoulli<R: Rng + ?Sized>(logodds: f64, rng: &mut R) -> bool {
    let p = sigmoid(logodds);
    let u: f64 = rng.sample(StandardUniform);
    u < p
}

/// Sampler state with the cached factorization of `B(v, w)`.
#[derive(Debug, Clone)]
pub struct BlState {
    h: DMatrix<f64>,
    y: DVector<f64>,
    sigma2: f64,
    zero_prob: f64,
    pub u: Vec<f64>,
    pub v: Vec<bool>,
    pub w: Vec<f64>,
    chol: DMatrix<f64>,
    /// `L^{-1} y`.
    ly: DVector<f64>,
    log_det: f64,
    quad: f64,
}

impl BlState {
    pub fn new(
        h: DMatrix<f64>,
        y: DVector<f64>,
        sigma_n: f64,
        zero_prob: f64,
        u: Vec<f64>,
        v: Vec<bool>,
        w: Vec<f64>,
    ) -> Result<Self> {
        let d = h.ncols();
        if h.nrows() != y.len() || u.len() != d || v.len() != d || w.len() != d {
            return Err(dims("inconsistent Bernoulli-Laplace state dimensions"));
        }
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err(domain("mixing scales must be non-negative"));
        }
        let m = y.len();
        let mut s = Self {
            h,
            y,
            sigma2: sigma_n * sigma_n,
            zero_prob,
            u,
            v,
            w,
            chol: DMatrix::zeros(m, m),
            ly: DVector::zeros(m),
            log_det: 0.0,
            quad: 0.0,
        };
        s.refactor()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    /// Dense `B(v, w)` for the current bits and scales.
    pub fn dense_b(&self) -> DMatrix<f64> {
        let m = self.y.len();
        let mut b = DMatrix::identity(m, m) * self.sigma2;
        for k in 0..self.dim() {
            if self.v[k] && self.w[k] > 0.0 {
                let col = self.h.column(k);
                b.ger(self.w[k], &col, &col, 1.0);
            }
        }
        b
    }

    /// Recomputes the factorization of `B` from scratch.
    pub fn refactor(&mut self) -> Result<()> {
        let chol = self
            .dense_b()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("marginal measurement covariance".into()))?;
        self.chol = chol.unpack();
        self.log_det = 2.0 * self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        self.refresh_ly();
        self.quad = self.ly.norm_squared();
        Ok(())
    }

    fn refresh_ly(&mut self) {
        self.ly.copy_from(&self.y);
        solve_lower_in_place(&self.chol, self.ly.as_mut_slice());
    }

    /// Cached `log |B|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Cached `y^T B^{-1} y`.
    pub fn quad(&self) -> f64 {
        self.quad
    }

    /// `(log |B|, y^T B^{-1} y)` by dense recomputation.
    pub fn dense_log_det_and_quad(&self) -> (f64, f64) {
        let chol = self.dense_b().cholesky().expect("B is positive definite");
        let ld = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        (ld, self.y.dot(&chol.solve(&self.y)))
    }

    /// `tau_k = H_k^T B0^{-1} H_k` and `eta_k = H_k^T B0^{-1} y`, where `B0`
    /// is `B` with bit `k` off.
    fn off_state_terms(&self, k: usize) -> (f64, f64) {
        let mut s: Vec<f64> = self.h.column(k).iter().copied().collect();
        solve_lower_in_place(&self.chol, &mut s);
        let tau = dot(&s, &s);
        let eta = dot(&s, self.ly.as_slice());
        if self.v[k] {
            let c = 1.0 - self.w[k] * tau;
            (tau / c, eta / c)
        } else {
            (tau, eta)
        }
    }

    /// Log-odds of `v_k = 1` against `v_k = 0` given the other bits and `w`.
    pub fn flip_logodds(&self, k: usize) -> f64 {
        let (tau, eta) = self.off_state_terms(k);
        let wk = self.w[k];
        let g = 1.0 + wk * tau;
        logit_prior(self.zero_prob) - 0.5 * g.ln() + 0.5 * wk * eta * eta / g
    }

    /// Sets bit `k`, updating the factor, `log |B|` and `y^T B^{-1} y` by
    /// rank-one modifications.
    pub fn set_bit(&mut self, k: usize, on: bool) -> Result<()> {
        if self.v[k] == on {
            return Ok(());
        }
        let wk = self.w[k];
        let (tau, eta) = self.off_state_terms(k);
        let g = 1.0 + wk * tau;
        let dq = wk * eta * eta / g;
        self.v[k] = on;
        if wk == 0.0 {
            return Ok(());
        }
        let mut x: Vec<f64> = self.h.column(k).iter().map(|h| h * wk.sqrt()).collect();
        if cholesky_rank_one(&mut self.chol, &mut x, !on) {
            if on {
                self.log_det += g.ln();
                self.quad -= dq;
            } else {
                self.log_det -= g.ln();
                self.quad += dq;
            }
            self.refresh_ly();
            Ok(())
        } else {
            self.refactor()
        }
    }

    /// Draws `w` given `u` and `v`, then refactors.
    pub fn draw_w<R: Rng + ?Sized>(&mut self, rate: f64, rng: &mut R) -> Result<()> {
        for k in 0..self.dim() {
            self.w[k] = draw_mixing_scale(self.v[k], self.u[k], rate, rng);
        }
        self.refactor()
    }

    /// One systematic sweep over the support bits.
    pub fn sweep_v<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for k in 0..self.dim() {
            let on = bernoulli(self.flip_logodds(k), rng);
            self.set_bit(k, on)?;
        }
        Ok(())
    }

    /// Draws `u` given `v` and `w`: zero off the support, Gaussian on it with
    /// precision `H_on^T H_on / sigma^2 + diag(1 / w_on)`.
    pub fn draw_u<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let on: Vec<usize> = (0..self.dim()).filter(|&k| self.v[k]).collect();
        for k in 0..self.dim() {
            if !self.v[k] {
                self.u[k] = 0.0;
            }
        }
        if on.is_empty() {
            return Ok(());
        }
        let g = self.conditional_u(&on)?;
        let draw = g.factor()?.sample(rng);
        for (j, &k) in on.iter().enumerate() {
            self.u[k] = draw[j];
        }
        Ok(())
    }

    /// Gaussian of `u_on` given `v` and `w`.
    pub fn conditional_u(&self, on: &[usize]) -> Result<crate::distributions::PrecisionGaussian> {
        let h_on = self.h.select_columns(on);
        let mut prec = h_on.tr_mul(&h_on) / self.sigma2;
        for (j, &k) in on.iter().enumerate() {
            prec[(j, j)] += 1.0 / self.w[k].max(1e-300);
        }
        let shift = h_on.tr_mul(&self.y) / self.sigma2;
        crate::distributions::PrecisionGaussian::new(prec, shift)
    }
}

/// Scalar state-space view for row-selection operators: `x_k = x_{k-1} + u_k`
/// with `x_0 = 0`, observations `y = x_i + noise` at a subset of indices.
#[derive(Debug, Clone)]
struct Sequential {
    /// `(1 / sigma^2, y_i / sigma^2)` per index, zero where unobserved.
    obs_prec: Vec<f64>,
    obs_shift: Vec<f64>,
    sigma2: f64,
    obs_value: Vec<Option<f64>>,
    j: Vec<f64>,
    h: Vec<f64>,
    mf: Vec<f64>,
    pf: Vec<f64>,
}

impl Sequential {
    fn new(lik: &Likelihood) -> Self {
        let d = lik.d();
        let sigma2 = lik.sigma_n() * lik.sigma_n();
        let mut obs_value = vec![None; d];
        for (r, &i) in lik.observed().expect("row-selection operator").iter().enumerate() {
            obs_value[i] = Some(lik.y()[r]);
        }
        let obs_prec = obs_value.iter().map(|o| if o.is_some() { 1.0 / sigma2 } else { 0.0 }).collect();
        let obs_shift = obs_value.iter().map(|o| o.map_or(0.0, |y| y / sigma2)).collect();
        Self {
            obs_prec,
            obs_shift,
            sigma2,
            obs_value,
            j: vec![0.0; d],
            h: vec![0.0; d],
            mf: vec![0.0; d],
            pf: vec![0.0; d],
        }
    }

    /// Backward information messages: `exp(-J_k x^2 / 2 + h_k x)` is the
    /// likelihood of observations at indices `>= k` as a function of `x_k`.
    fn backward(&mut self, q: &[f64]) {
        let d = q.len();
        let (mut jn, mut hn) = (0.0, 0.0);
        for k in (0..d).rev() {
            if k + 1 < d {
                let c = 1.0 + q[k + 1] * jn;
                jn /= c;
                hn /= c;
            }
            jn += self.obs_prec[k];
            hn += self.obs_shift[k];
            self.j[k] = jn;
            self.h[k] = hn;
        }
    }

    /// Log of the V-dependent part of `int N(x; m, V) exp(-J x^2 / 2 + h x) dx`.
    fn log_g(v: f64, m: f64, j: f64, h: f64) -> f64 {
        let c = 1.0 + j * v;
        let r = h - j * m;
        -0.5 * c.ln() + 0.5 * v * r * r / c
    }

    fn filter_step(&mut self, k: usize, m: &mut f64, p: &mut f64, q: f64) {
        let pp = *p + q;
        match self.obs_value[k] {
            Some(y) if pp > 0.0 => {
                let s = pp + self.sigma2;
                *m += pp / s * (y - *m);
                *p = pp * self.sigma2 / s;
            }
            _ => *p = pp,
        }
        self.mf[k] = *m;
        self.pf[k] = *p;
    }

    /// Log-odds of every bit at fixed `v` (no sampling).
    fn logodds(&mut self, v: &[bool], w: &[f64], zero_prob: f64) -> Vec<f64> {
        let q: Vec<f64> = v.iter().zip(w).map(|(&on, &wk)| if on { wk } else { 0.0 }).collect();
        self.backward(&q);
        let (mut m, mut p) = (0.0, 0.0);
        let mut out = Vec::with_capacity(q.len());
        for k in 0..q.len() {
            out.push(logit_prior(zero_prob) + Self::log_g(p + w[k], m, self.j[k], self.h[k]) - Self::log_g(p, m, self.j[k], self.h[k]));
            self.filter_step(k, &mut m, &mut p, q[k]);
        }
        out
    }

    /// Sweeps the bits in order, running the forward filter alongside.
    fn sweep<R: Rng + ?Sized>(&mut self, v: &mut [bool], w: &[f64], zero_prob: f64, rng: &mut R) {
        let q: Vec<f64> = v.iter().zip(w).map(|(&on, &wk)| if on { wk } else { 0.0 }).collect();
        self.backward(&q);
        let prior = logit_prior(zero_prob);
        let (mut m, mut p) = (0.0, 0.0);
        for k in 0..v.len() {
            let (jk, hk) = (self.j[k], self.h[k]);
            let delta = prior + Self::log_g(p + w[k], m, jk, hk) - Self::log_g(p, m, jk, hk);
            v[k] = bernoulli(delta, rng);
            self.filter_step(k, &mut m, &mut p, if v[k] { w[k] } else { 0.0 });
        }
    }

    /// Forward-filter backward-sample of the signal; requires the filter to
    /// have been run with the current bits. Returns `x`; `u` gets exact zeros
    /// off the support.
    fn sample_signal<R: Rng + ?Sized>(&self, v: &[bool], w: &[f64], u: &mut [f64], rng: &mut R) -> Vec<f64> {
        let d = v.len();
        let mut x = vec![0.0; d];
        let z: f64 = rng.sample(StandardNormal);
        x[d - 1] = self.mf[d - 1] + self.pf[d - 1].sqrt() * z;
        for k in (0..d - 1).rev() {
            if !v[k + 1] {
                x[k] = x[k + 1];
                continue;
            }
            let (mk, pk, q) = (self.mf[k], self.pf[k], w[k + 1]);
            let s = pk + q;
            let z: f64 = rng.sample(StandardNormal);
            x[k] = if s > 0.0 {
                mk + pk / s * (x[k + 1] - mk) + (pk * q / s).sqrt() * z
            } else {
                mk
            };
        }
        for k in 0..d {
            u[k] = if v[k] { x[k] - if k > 0 { x[k - 1] } else { 0.0 } } else { 0.0 };
        }
        x
    }
}

impl<'a> BlProblem<'a> {
    pub fn new(lik: &'a Likelihood, zero_prob: f64, rate: f64) -> Result<Self> {
        crate::distributions::UnivariateLaw::bernoulli_laplace(zero_prob, rate)?;
        Ok(Self {
            lik,
            zero_prob,
            rate,
            backend: BlBackend::Auto,
        })
    }

    pub fn with_backend(mut self, backend: BlBackend) -> Result<Self> {
        if backend == BlBackend::Sequential && !self.lik.is_pointwise() {
            return Err(domain("the sequential backend needs a row-selection operator"));
        }
        self.backend = backend;
        Ok(self)
    }

    fn sequential(&self) -> bool {
        match self.backend {
            BlBackend::Auto => self.lik.is_pointwise(),
            BlBackend::Woodbury => false,
            BlBackend::Sequential => true,
        }
    }

    /// Builds a state at the given increments, bits and scales.
    pub fn state(&self, u: Vec<f64>, v: Vec<bool>, w: Vec<f64>) -> Result<BlState> {
        BlState::new(
            increment_operator(&self.lik.matrix()),
            self.lik.y().clone(),
            self.lik.sigma_n(),
            self.zero_prob,
            u,
            v,
            w,
        )
    }

    /// Log-odds of every bit at fixed `(v, w)` using the sequential backend.
    pub fn sequential_logodds(&self, v: &[bool], w: &[f64]) -> Result<Vec<f64>> {
        if !self.lik.is_pointwise() {
            return Err(domain("the sequential backend needs a row-selection operator"));
        }
        Ok(Sequential::new(self.lik).logodds(v, w, self.zero_prob))
    }

    pub fn run<F: FnMut(&[f64])>(&self, settings: ChainSettings, init: &[f64], rng: &mut BenchRng, mut sink: F) -> Result<()> {
        check_init(self.lik, init)?;
        let d = self.lik.d();
        let mut u: Vec<f64> = apply_d(init).iter().copied().collect();
        let mut v: Vec<bool> = u.iter().map(|&x| x != 0.0).collect();
        let total = settings.burn_in + settings.samples;
        if self.sequential() {
            let mut seq = Sequential::new(self.lik);
            let mut w = vec![0.0; d];
            for it in 0..total {
                for k in 0..d {
                    w[k] = draw_mixing_scale(v[k], u[k], self.rate, rng);
                }
                seq.sweep(&mut v, &w, self.zero_prob, rng);
                let x = seq.sample_signal(&v, &w, &mut u, rng);
                if it >= settings.burn_in {
                    sink(&x);
                }
            }
        } else {
            let mut state = self.state(u, v, vec![0.0; d])?;
            for it in 0..total {
                state.draw_w(self.rate, rng)?;
                state.sweep_v(rng)?;
                state.draw_u(rng)?;
                if it >= settings.burn_in {
                    sink(apply_d_inv(&state.u).as_slice());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{build_operator, OperatorKind};
    use crate::rng::stream;

    fn random_state(d: usize, seed: u64, kind: OperatorKind) -> (Likelihood, BlState) {
        let mut rng = stream(seed, &[]);
        let model = build_operator(kind, d, &mut rng).unwrap().with_noise(0.3).unwrap();
        let y = DVector::from_fn(model.m(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let lik = Likelihood::from_model(&model, &y).unwrap();
        let v: Vec<bool> = (0..d).map(|_| rng.random::<bool>()).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 + 0.05).collect();
        let problem = BlProblem::new(&lik, 0.3, 1.0).unwrap();
        let state = problem.state(vec![0.0; d], v, w).unwrap();
        (lik, state)
    }

    fn dense_logodds(state: &BlState, k: usize) -> f64 {
        let mut s1 = state.clone();
        s1.v[k] = true;
        let mut s0 = state.clone();
        s0.v[k] = false;
        let (l1, q1) = s1.dense_log_det_and_quad();
        let (l0, q0) = s0.dense_log_det_and_quad();
        logit_prior(state.zero_prob) - 0.5 * (l1 - l0) - 0.5 * (q1 - q0)
    }

    #[test]
    fn increment_operator_is_a_times_d_inverse() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let mut d_inv = DMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..=i {
                d_inv[(i, j)] = 1.0;
            }
        }
        assert_eq!(increment_operator(&a), &a * d_inv);
    }

    #[test]
    fn logodds_match_dense_recomputation() {
        for kind in OperatorKind::ALL {
            let (_, state) = random_state(16, 3 + kind as u64, kind);
            for k in 0..16 {
                let fast = state.flip_logodds(k);
                let slow = dense_logodds(&state, k);
                assert!((fast - slow).abs() <= 1e-8 * slow.abs().max(1.0), "{kind}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn zero_scale_gives_prior_logodds() {
        let (_, mut state) = random_state(16, 4, OperatorKind::Convolution);
        state.w[2] = 0.0;
        state.refactor().unwrap();
        assert!((state.flip_logodds(2) - (0.7f64 / 0.3).ln()).abs() < 1e-14);
        state.zero_prob = 0.5;
        assert!(state.flip_logodds(2).abs() < 1e-14);
    }

    #[test]
    fn cached_terms_survive_flip_sequences() {
        let (_, mut state) = random_state(16, 5, OperatorKind::PartialFourier);
        let mut rng = stream(6, &[]);
        for _ in 0..100 {
            let k = rng.random_range(0..16);
            let on = !state.v[k];
            state.set_bit(k, on).unwrap();
        }
        let (ld, q) = state.dense_log_det_and_quad();
        assert!((state.log_det() - ld).abs() <= 1e-8 * ld.abs().max(1.0));
        assert!((state.quad() - q).abs() <= 1e-8 * q.abs().max(1.0));
    }

    #[test]
    fn sequential_backend_matches_woodbury() {
        for kind in [OperatorKind::Identity, OperatorKind::Imputation] {
            let (lik, state) = random_state(20, 7 + kind as u64, kind);
            let problem = BlProblem::new(&lik, 0.3, 1.0).unwrap();
            let seq = problem.sequential_logodds(&state.v, &state.w).unwrap();
            for k in 0..20 {
                let wb = state.flip_logodds(k);
                assert!((seq[k] - wb).abs() <= 1e-8 * wb.abs().max(1.0), "{kind} k={k}: {} vs {wb}", seq[k]);
            }
        }
    }

    #[test]
    fn u_draw_matches_fixed_latent_oracle() {
        let (_, mut state) = random_state(8, 8, OperatorKind::PartialFourier);
        state.v = vec![true; 8];
        state.refactor().unwrap();
        let on: Vec<usize> = (0..8).collect();
        let g = state.conditional_u(&on).unwrap();
        // dense oracle: precision H^T H / s^2 + diag(1/w)
        let mut prec = state.h.tr_mul(&state.h) / state.sigma2;
        for k in 0..8 {
            prec[(k, k)] += 1.0 / state.w[k];
        }
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * (state.h.tr_mul(&state.y) / state.sigma2);
        let mut rng = stream(9, &[]);
        let n = 100_000;
        let mut draws = DMatrix::zeros(8, n);
        for i in 0..n {
            state.draw_u(&mut rng).unwrap();
            draws.column_mut(i).copy_from_slice(&state.u);
        }
        let (m, c) = crate::linalg::sample_covariance(&draws);
        assert!((g.mean().unwrap() - &mean).amax() < 1e-10);
        assert!((m - &mean).norm() <= 0.01 * mean.norm().max(cov.diagonal().map(f64::sqrt).norm()));
        assert!((c - &cov).norm() <= 0.01 * cov.norm() * 3.0);
    }

    #[test]
    fn exact_zeros_off_support() {
        let y = DVector::from_fn(32, |i, _| if i > 16 { 2.0 } else { 0.0 });
        let lik = Likelihood::denoising(&y, 0.2).unwrap();
        for backend in [BlBackend::Sequential, BlBackend::Woodbury] {
            let p = BlProblem::new(&lik, 0.5, 1.0).unwrap().with_backend(backend).unwrap();
            let mut zeros = 0;
            p.run(ChainSettings { burn_in: 10, samples: 200 }, &[0.1; 32], &mut stream(10, &[]), |x| {
                let u = apply_d(x);
                zeros += u.iter().filter(|&&v| v == 0.0).count();
            })
            .unwrap();
            assert!(zeros > 1000, "{backend:?}: {zeros}");
        }
    }

    #[test]
    fn one_dimensional_support_posterior() {
        // d = 1, A = I: P(v = 1 | y) from quadrature of the slab marginal
        let (y0, sigma, lambda, b) = (0.8, 0.5, 0.4, 1.0);
        let norm = |x: f64, s: f64| (-0.5 * x * x / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let p0 = norm(y0, sigma);
        let p1 = crate::distributions::special::simpson(|u| norm(y0 - u, sigma) * 0.5 * b * (-b * u.abs()).exp(), -30.0, 30.0, 200_000);
        let exact = (1.0 - lambda) * p1 / ((1.0 - lambda) * p1 + lambda * p0);
        let y = DVector::from_vec(vec![y0]);
        let lik = Likelihood::denoising(&y, sigma).unwrap();
        for backend in [BlBackend::Sequential, BlBackend::Woodbury] {
            let p = BlProblem::new(&lik, lambda, b).unwrap().with_backend(backend).unwrap();
            let mut on = 0usize;
            let n = 100_000;
            p.run(ChainSettings { burn_in: 100, samples: n }, &[0.5], &mut stream(11, &[]), |x| {
                on += (x[0] != 0.0) as usize;
            })
            .unwrap();
            let freq = on as f64 / n as f64;
            assert!((freq - exact).abs() <= 0.01, "{backend:?}: {freq} vs {exact}");
        }
    }

    #[test]
    fn all_atoms_when_zero_prob_is_one() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let lik = Likelihood::denoising(&y, 0.5).unwrap();
        let p = BlProblem::new(&lik, 1.0, 1.0).unwrap();
        p.run(ChainSettings { burn_in: 5, samples: 50 }, &[1.0, 2.0, 3.0], &mut stream(12, &[]), |x| {
            assert!(x.iter().all(|&v| v == 0.0));
        })
        .unwrap();
    }
}
