//! Exact desk-scale propagation: Heisenberg and Schrödinger evolution,
//! region truncation, Dyson truncation and Lieb-Robinson bound evaluation.
//!
//! The propagator solves `∂_t T(s,t) = S(t) ∘ T(s,t)`, so evolving an
//! observable means integrating `dO/dt = S(t)(O)` forward from `O(s) = O`.
//! States are evolved with the exact trace dual `T(s,t)*`, integrated
//! backwards in time, so that `tr[T(s,t)(O) ρ] = tr[O T(s,t)*(ρ)]` holds to
//! integrator tolerance for every schedule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dense::{CMatrix, DenseOperator};
use crate::error::{Error, Result};
use crate::model::{CoeffIndex, LindbladAnsatz};
use crate::pauli::{product_phase_word, Axis, PauliString};
use crate::schedule::PolySchedule;

pub use crate::dense::DenseOperator as Operator;

// ---------------------------------------------------------------------------
// Runge-Kutta 4(5)

/// State types the integrator can advance.
pub trait OdeState: Clone {
    /// `self += a · x`.
    fn axpy(&mut self, a: f64, x: &Self);
    /// Largest entry magnitude.
    fn max_abs(&self) -> f64;
    fn zeros_like(&self) -> Self;
}

impl OdeState for Vec<f64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
}

impl OdeState for CMatrix {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x.iter()) {
            *s += v * a;
        }
    }
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }
    fn zeros_like(&self) -> Self {
        CMatrix::zeros(self.nrows(), self.ncols())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rk45Options {
    /// Mixed absolute/relative local error target per step.
    pub tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Rk45Options { tol: 1e-10, max_step: 0.25, max_steps: 1_000_000 }
    }
}

impl Rk45Options {
    pub fn with_tol(tol: f64) -> Self {
        Rk45Options { tol, ..Default::default() }
    }
}

// Dormand-Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1 >= t0`.
///
/// `outputs` must be sorted and inside `[t0, t1]`; `sink(i, y)` receives the
/// dense-output value at `outputs[i]`. Returns `y(t1)`.
pub fn integrate<V, F, S>(mut f: F, t0: f64, t1: f64, y0: V, outputs: &[f64], opts: &Rk45Options, mut sink: S) -> Result<V>
where
    V: OdeState,
    F: FnMut(f64, &V) -> V,
    S: FnMut(usize, &V),
{
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        sink(next_out, &y0);
        next_out += 1;
    }
    if t1 <= t0 {
        while next_out < outputs.len() {
            sink(next_out, &y0);
            next_out += 1;
        }
        return Ok(y0);
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = (0.05 * span).min(opts.max_step);
    let scale0 = y.max_abs();
    let f0 = k1.max_abs();
    if f0 > 0.0 && scale0 > 0.0 {
        h = h.min(0.1 * scale0 / f0);
    }
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;
    loop {
        if t >= t1 {
            break;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepUnderflow { t });
        }
        let last = t + h >= t1 - 1e-15 * span;
        if last {
            h = t1 - t;
        }
        if h < 1e-14 * span.max(t.abs()) {
            return Err(Error::StepUnderflow { t });
        }
        let stage = |base: &V, terms: &[(f64, &V)]| {
            let mut s = base.clone();
            for &(a, k) in terms {
                s.axpy(h * a, k);
            }
            s
        };
        let k2 = f(t + C2 * h, &stage(&y, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &stage(&y, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &stage(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + C5 * h, &stage(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(t + h, &stage(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y_new = stage(&y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h, &y_new);
        let mut err = k1.zeros_like();
        for &(e, k) in &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)] {
            err.axpy(h * e, k);
        }
        let scale = opts.tol * (1.0 + y.max_abs().max(y_new.max_abs()));
        let en = (err.max_abs() / scale).max(1e-16);
        if en <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            if next_out < outputs.len() && outputs[next_out] <= t_new {
                // continuous extension coefficients
                let mut r2 = y_new.clone();
                r2.axpy(-1.0, &y);
                let mut r3 = k1.zeros_like();
                r3.axpy(h, &k1);
                r3.axpy(-1.0, &r2);
                let mut r4 = r2.clone();
                r4.axpy(-h, &k7);
                r4.axpy(-1.0, &r3);
                let mut r5 = k1.zeros_like();
                for &(d, k) in &[(D1, &k1), (D3, &k3), (D4, &k4), (D5, &k5), (D6, &k6), (D7, &k7)] {
                    r5.axpy(h * d, k);
                }
                while next_out < outputs.len() && outputs[next_out] <= t_new {
                    let th = ((outputs[next_out] - t) / h).clamp(0.0, 1.0);
                    let th1 = 1.0 - th;
                    // y + th (r2 + th1 (r3 + th (r4 + th1 r5)))
                    let mut v = r4.clone();
                    v.axpy(th1, &r5);
                    let mut w = r3.clone();
                    w.axpy(th, &v);
                    let mut u = r2.clone();
                    u.axpy(th1, &w);
                    let mut out = y.clone();
                    out.axpy(th, &u);
                    sink(next_out, &out);
                    next_out += 1;
                }
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            let fac = 0.9 * en.powf(-0.17) * err_prev.powf(0.04);
            h *= fac.clamp(0.2, 5.0);
            h = h.min(opts.max_step);
            err_prev = en.max(1e-4);
        } else {
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    while next_out < outputs.len() {
        sink(next_out, &y);
        next_out += 1;
    }
    Ok(y)
}

// ---------------------------------------------------------------------------
// Dense evolution

fn check_n(a: &LindbladAnsatz, o: &DenseOperator) -> Result<()> {
    if a.n() != o.n() {
        return Err(Error::Dimension { expected: a.n(), got: o.n() });
    }
    Ok(())
}

fn check_interval(s: f64, t: f64) -> Result<()> {
    if !(s <= t) {
        return Err(Error::Invalid(format!("need s <= t, got s = {s}, t = {t}")));
    }
    Ok(())
}

/// `T(s,t)(O)` by dense integration.
pub fn evolve_observable(a: &LindbladAnsatz, o: &DenseOperator, s: f64, t: f64, tol: f64) -> Result<DenseOperator> {
    check_n(a, o)?;
    check_interval(s, t)?;
    let opts = Rk45Options::with_tol(tol);
    let rhs = |tt: f64, m: &CMatrix| {
        a.apply_generator(tt, &DenseOperator::new(a.n(), m.clone()).expect("shape")).expect("shape").into_matrix()
    };
    let m = integrate(rhs, s, t, o.matrix().clone(), &[], &opts, |_, _| {})?;
    DenseOperator::new(a.n(), m)
}

/// `T(s,t)*(ρ)`, the exact trace dual of [`evolve_observable`].
pub fn evolve_state(a: &LindbladAnsatz, rho: &DenseOperator, s: f64, t: f64, tol: f64) -> Result<DenseOperator> {
    check_n(a, rho)?;
    check_interval(s, t)?;
    let opts = Rk45Options::with_tol(tol);
    // X(u) = T(u,t)*(ρ) obeys dX/du = -S(u)* X; integrate in v = t - u
    let rhs = |v: f64, m: &CMatrix| {
        a.apply_adjoint_generator(t - v, &DenseOperator::new(a.n(), m.clone()).expect("shape"))
            .expect("shape")
            .into_matrix()
    };
    let m = integrate(rhs, 0.0, t - s, rho.matrix().clone(), &[], &opts, |_, _| {})?;
    DenseOperator::new(a.n(), m)
}

/// Support of a dense operator (sites carrying a non-negligible Pauli component).
pub fn dense_support(o: &DenseOperator) -> BTreeSet<usize> {
    let n = o.n();
    let c = o.to_pauli_coeffs();
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut s = BTreeSet::new();
    for (idx, v) in c.iter().enumerate() {
        if v.abs() > 1e-13 * scale {
            s.extend(PauliString::from_index(n, idx as u64).support());
        }
    }
    s
}

/// Evolution under the sub-ansatz inside `region`.
pub fn truncated_evolve(
    a: &LindbladAnsatz,
    o: &DenseOperator,
    region: &BTreeSet<usize>,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<DenseOperator> {
    check_n(a, o)?;
    let sup = dense_support(o);
    if !sup.is_subset(region) {
        return Err(Error::RegionSupport {
            region: region.iter().copied().collect(),
            support: sup.into_iter().collect(),
        });
    }
    evolve_observable(&a.truncated(region), o, s, t, tol)
}

// ---------------------------------------------------------------------------
// Pauli-basis evolution

/// Generator compiled for action on real Pauli-coefficient vectors of length `4^n`.
///
/// Index layout follows [`PauliString::index`]: `x | z << n`.
#[derive(Clone, Debug)]
pub struct PauliGenerator {
    n: usize,
    ham: Vec<(u64, u64, PolySchedule)>,
    diss: Vec<(usize, Axis, PolySchedule)>,
}

impl PauliGenerator {
    pub fn new(a: &LindbladAnsatz) -> Result<Self> {
        let n = a.n();
        if n > 15 {
            return Err(Error::DenseLimit { n, limit: 15 });
        }
        let mut ham = Vec::new();
        let mut diss = Vec::new();
        for (idx, s) in a.terms() {
            match idx {
                CoeffIndex::Hamiltonian(p) => ham.push((p.x_words()[0], p.z_words()[0], s.clone())),
                CoeffIndex::Dissipative { site, axis } => diss.push((*site, *axis, s.clone())),
            }
        }
        Ok(PauliGenerator { n, ham, diss })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << (2 * self.n)
    }

    /// `out = S(t)(v)`, or the trace dual when `adjoint`.
    pub fn apply(&self, t: f64, v: &[f64], adjoint: bool) -> Vec<f64> {
        let n = self.n;
        let low = (1u64 << n) - 1;
        let mut out = vec![0.0; v.len()];
        for (xa, za, s) in &self.ham {
            let h = s.eval(t);
            if h == 0.0 {
                continue;
            }
            let a = xa | (za << n);
            let hh = if adjoint { -h } else { h };
            for (b, &vb) in v.iter().enumerate() {
                if vb == 0.0 {
                    continue;
                }
                let b = b as u64;
                let (xb, zb) = (b & low, b >> n);
                if ((xa & zb) ^ (za & xb)).count_ones() & 1 == 0 {
                    continue;
                }
                // i · i^g with g odd: g = 1 gives -1, g = 3 gives +1
                let g = product_phase_word(*xa, *za, xb, zb).rem_euclid(4);
                let sign = if g == 3 { 1.0 } else { -1.0 };
                out[(b ^ a) as usize] += hh * sign * vb;
            }
        }
        if !self.diss.is_empty() {
            // per-site decay rate of each axis: a Pauli with axis B on site j decays
            // at the sum of the rates of the other two jump axes
            let mut rates = vec![[0.0f64; 3]; n];
            for (site, axis, s) in &self.diss {
                let l = s.eval(t);
                for b in Axis::ALL {
                    if b != *axis {
                        rates[*site][b.index()] += l;
                    }
                }
            }
            let sites: Vec<usize> = (0..n).filter(|&j| rates[j].iter().any(|&r| r != 0.0)).collect();
            for (b, &vb) in v.iter().enumerate() {
                if vb == 0.0 {
                    continue;
                }
                let b = b as u64;
                let mut r = 0.0;
                for &j in &sites {
                    let xb = (b >> j) & 1 == 1;
                    let zb = (b >> (n + j)) & 1 == 1;
                    if let Some(ax) = Axis::from_bits(xb, zb) {
                        r += rates[j][ax.index()];
                    }
                }
                out[b as usize] -= r * vb;
            }
        }
        out
    }

    /// Heisenberg evolution of a Pauli vector from `s`, reporting at `outputs`.
    pub fn evolve(&self, v: Vec<f64>, s: f64, outputs: &[f64], opts: &Rk45Options) -> Result<Vec<Vec<f64>>> {
        let t_end = outputs.iter().copied().fold(s, f64::max);
        let mut res = vec![Vec::new(); outputs.len()];
        integrate(|t, y: &Vec<f64>| self.apply(t, y, false), s, t_end, v, outputs, opts, |i, y| {
            res[i] = y.clone()
        })?;
        Ok(res)
    }

    /// Like [`evolve`](Self::evolve) but keeps only the entries at `picks`.
    pub fn evolve_entries(&self, v: Vec<f64>, s: f64, outputs: &[f64], picks: &[usize], opts: &Rk45Options) -> Result<Vec<Vec<f64>>> {
        let t_end = outputs.iter().copied().fold(s, f64::max);
        let mut res = vec![Vec::new(); outputs.len()];
        integrate(|t, y: &Vec<f64>| self.apply(t, y, false), s, t_end, v, outputs, opts, |i, y| {
            res[i] = picks.iter().map(|&p| y[p]).collect()
        })?;
        Ok(res)
    }

    /// Evolution to a single time.
    pub fn evolve_to(&self, v: Vec<f64>, s: f64, t: f64, opts: &Rk45Options) -> Result<Vec<f64>> {
        check_interval(s, t)?;
        integrate(|tt, y: &Vec<f64>| self.apply(tt, y, false), s, t, v, &[], opts, |_, _| {})
    }

    /// Trace dual `T(s,t)*` applied to a Pauli vector.
    pub fn evolve_dual(&self, v: Vec<f64>, s: f64, t: f64, opts: &Rk45Options) -> Result<Vec<f64>> {
        check_interval(s, t)?;
        integrate(|w, y: &Vec<f64>| self.apply(t - w, y, true), 0.0, t - s, v, &[], opts, |_, _| {})
    }
}

/// Unit Pauli vector.
pub fn pauli_vector(p: &PauliString) -> Vec<f64> {
    let mut v = vec![0.0; 1 << (2 * p.n())];
    v[p.index() as usize] = 1.0;
    v
}

// ---------------------------------------------------------------------------
// Dyson truncation

/// `(M Δt)^{K+1} / (K+1)!`.
pub fn dyson_tail(m: f64, dt: f64, k: usize) -> f64 {
    let x = m * dt;
    let mut v = 1.0;
    for j in 1..=(k + 1) {
        v *= x / j as f64;
    }
    v
}

/// Smallest `K` with `dyson_tail(M, Δt, K) <= eps`.
pub fn dyson_order(m: f64, dt: f64, eps: f64) -> usize {
    let mut k = 0;
    while dyson_tail(m, dt, k) > eps && k < 100_000 {
        k += 1;
    }
    k
}

/// Truncated Dyson series `D_K(t)(O)` on Pauli vectors, from time 0.
///
/// The iterated integrals `Y_j(t) = ∫_0^t S(u) Y_{j-1}(u) du`, `Y_0 = O`, are
/// integrated jointly as one ODE hierarchy; `D_K = Σ_{j<=K} Y_j`.
pub fn dyson_series(gen: &PauliGenerator, o: &[f64], t: f64, k: usize, opts: &Rk45Options) -> Result<Vec<f64>> {
    let d = o.len();
    let mut y0 = vec![0.0; d * (k + 1)];
    y0[..d].copy_from_slice(o);
    let rhs = |tt: f64, y: &Vec<f64>| {
        let mut out = vec![0.0; y.len()];
        for j in 1..=k {
            let src = &y[(j - 1) * d..j * d];
            let v = gen.apply(tt, src, false);
            out[j * d..(j + 1) * d].copy_from_slice(&v);
        }
        out
    };
    let y = integrate(rhs, 0.0, t, y0, &[], opts, |_, _| {})?;
    let mut sum = vec![0.0; d];
    for j in 0..=k {
        for (s, v) in sum.iter_mut().zip(&y[j * d..(j + 1) * d]) {
            *s += v;
        }
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Lieb-Robinson bounds

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSource {
    Formula,
    Calibrated,
}

/// Constants of `C3 e^{-μ r} (e^{v Δt} - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LRParams {
    pub v: f64,
    pub mu: f64,
    pub c3: f64,
    pub source: LrSource,
}

/// Inputs of the explicit closed-form bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrFormula {
    pub c: f64,
    pub c1: f64,
    pub k: f64,
    pub d: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LrModel {
    Calibrated(LRParams),
    Formula(LrFormula),
}

/// Truncation-error bound at radius `r` after time `Δt` for support radius `r_A`.
pub fn lr_bound(model: &LrModel, r: usize, dt: f64, r_a: usize) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    match model {
        LrModel::Calibrated(p) => p.c3 * (-p.mu * r as f64).exp() * (p.v * dt).exp_m1(),
        LrModel::Formula(f) => {
            let kd = f.k.powi(f.d as i32);
            let q = 4f64.powf(f.c1 * kd);
            let lam = 2.0 * f.c1 * kd * q * dt;
            let poly = ((r + r_a) as f64 + f.k).powi(2 * f.d as i32 - 1);
            // lam^{r+1} / (r+1)! accumulated stably
            let mut term = 1.0;
            for j in 1..=(r + 1) {
                term *= lam / j as f64;
            }
            f.c * q * poly * term * lam.exp()
        }
    }
}

/// Smallest radius whose bound is at most `eps`, capped at `r_cap`.
///
/// Returns `(radius, capped)`.
pub fn lr_radius(model: &LrModel, eps: f64, dt: f64, r_a: usize, r_cap: usize) -> (usize, bool) {
    for r in 0..=r_cap {
        if lr_bound(model, r, dt, r_a) <= eps {
            return (r, false);
        }
    }
    (r_cap, true)
}

/// Constants of `C τ ‖O‖ r_A^{2D-1} (e^{μ' Δt} - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonParams {
    pub c: f64,
    pub mu_prime: f64,
    pub d: u32,
}

/// Bound on `‖O_1(t) - O_2(t)‖` for generators differing by local terms of strength `τ`.
///
/// A single-site support has radius 0; it is counted as radius 1 so the bound
/// stays nontrivial.
pub fn comparison_bound(tau: f64, op_norm: f64, r_a: usize, dt: f64, p: &ComparisonParams) -> f64 {
    let ra = r_a.max(1) as f64;
    p.c * tau * op_norm * ra.powi(2 * p.d as i32 - 1) * (p.mu_prime * dt).exp_m1()
}

/// One measured truncation error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationSample {
    pub r: usize,
    pub t: f64,
    pub error: f64,
}

/// Operator norm of a Pauli vector (dense eigen-solve).
pub fn pauli_vector_norm(n: usize, v: &[f64]) -> Result<f64> {
    Ok(DenseOperator::from_pauli_coeffs(n, v)?.op_norm())
}

/// Measures `‖T(0,t)(O) - T_{B_r}(0,t)(O)‖` for all `(r, t)` pairs.
pub fn truncation_sweep(
    a: &LindbladAnsatz,
    o: &PauliString,
    radii: &[usize],
    times: &[f64],
    tol: f64,
) -> Result<Vec<TruncationSample>> {
    let n = a.n();
    let opts = Rk45Options::with_tol(tol);
    let full_gen = PauliGenerator::new(a)?;
    let mut ts = times.to_vec();
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let full = full_gen.evolve(pauli_vector(o), 0.0, &ts, &opts)?;
    let supp: BTreeSet<usize> = o.support().into_iter().collect();
    let mut out = Vec::new();
    for &r in radii {
        let region = a.graph.enlarge(&supp, r)?;
        let gen = PauliGenerator::new(&a.truncated(&region))?;
        let trunc = gen.evolve(pauli_vector(o), 0.0, &ts, &opts)?;
        for (i, &t) in ts.iter().enumerate() {
            let diff: Vec<f64> = full[i].iter().zip(&trunc[i]).map(|(x, y)| x - y).collect();
            out.push(TruncationSample { r, t, error: pauli_vector_norm(n, &diff)? });
        }
    }
    Ok(out)
}

/// Fits `C3 e^{-μ r}(e^{v t} - 1)` to a sweep and raises `C3` until every
/// sample is covered, times `safety`.
pub fn calibrate_lr(samples: &[TruncationSample], safety: f64) -> LRParams {
    let pts: Vec<&TruncationSample> = samples.iter().filter(|s| s.error > 1e-13 && s.t > 0.0).collect();
    let mut best = (f64::INFINITY, 1.0, 1.0, 1.0);
    if pts.len() >= 2 {
        for i in 0..=120 {
            let v = 10f64.powf(-2.0 + 4.0 * i as f64 / 120.0);
            // least squares for (log C3, μ) on y = log err - log(e^{vt} - 1)
            let (mut s1, mut sr, mut srr, mut sy, mut sry) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for p in &pts {
                let y = p.error.ln() - (v * p.t).exp_m1().ln();
                let r = p.r as f64;
                s1 += 1.0;
                sr += r;
                srr += r * r;
                sy += y;
                sry += r * y;
            }
            let det = s1 * srr - sr * sr;
            let (lc, slope) = if det.abs() > 1e-12 {
                ((srr * sy - sr * sry) / det, (s1 * sry - sr * sy) / det)
            } else {
                (sy / s1, 0.0)
            };
            let mu = (-slope).max(1e-3);
            let res: f64 = pts
                .iter()
                .map(|p| {
                    let pred = lc - mu * p.r as f64 + (v * p.t).exp_m1().ln();
                    (p.error.ln() - pred).powi(2)
                })
                .sum();
            if res < best.0 {
                best = (res, lc.exp(), mu, v);
            }
        }
    }
    let (_, mut c3, mu, v) = best;
    let params = |c3: f64| LRParams { v, mu, c3, source: LrSource::Calibrated };
    let model = LrModel::Calibrated(params(1.0));
    let worst = samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| s.error / lr_bound(&model, s.r, s.t, 0))
        .fold(0.0f64, f64::max);
    c3 = c3.max(worst) * safety;
    params(c3.max(1e-300))
}

/// Prefactor `C` making the closed-form bound cover every sample.
pub fn calibrate_formula_prefactor(samples: &[TruncationSample], f: LrFormula, r_a: usize) -> f64 {
    let unit = LrModel::Formula(LrFormula { c: 1.0, ..f });
    samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| s.error / lr_bound(&unit, s.r, s.t, r_a))
        .fold(0.0f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::InteractionGraph;
    use crate::pauli::PhasedPauli;

    fn op(s: &str) -> DenseOperator {
        let p: PhasedPauli = s.parse().unwrap();
        DenseOperator::new(p.pauli.n(), p.to_dense().unwrap()).unwrap()
    }

    fn one(idx: CoeffIndex, c: f64) -> LindbladAnsatz {
        LindbladAnsatz::new(InteractionGraph::path(1), 1, 1.0, 10.0).with_term(idx, PolySchedule::constant(1.0, c))
    }

    #[test]
    fn bloch_rotation() {
        let a = one(CoeffIndex::Hamiltonian("X".parse().unwrap()), 1.0);
        let z = evolve_observable(&a, &op("Z"), 0.0, 0.8, 1e-10).unwrap();
        let expect = op("Z").matrix() * num_complex::Complex64::new(0.8f64.cos(), 0.0)
            + op("Y").matrix() * num_complex::Complex64::new(0.8f64.sin(), 0.0);
        assert!(crate::dense::max_entry_norm(&(z.matrix() - expect)) < 1e-8);
    }

    #[test]
    fn dephasing_decay() {
        let g = 0.7;
        let a = one(CoeffIndex::Dissipative { site: 0, axis: Axis::Z }, g);
        let x = evolve_observable(&a, &op("X"), 0.0, 1.0, 1e-10).unwrap();
        assert!(crate::dense::max_entry_norm(&(x.matrix() - op("X").matrix() * num_complex::Complex64::new((-g).exp(), 0.0))) < 1e-8);
    }

    #[test]
    fn dense_output_accuracy() {
        // y' = cos(t) y, y = exp(sin t)
        let outs: Vec<f64> = (0..50).map(|i| 0.013 + i as f64 * 0.039).collect();
        let mut got = vec![0.0; outs.len()];
        integrate(
            |t, y: &Vec<f64>| vec![t.cos() * y[0]],
            0.0,
            2.0,
            vec![1.0],
            &outs,
            &Rk45Options::with_tol(1e-12),
            |i, y| got[i] = y[0],
        )
        .unwrap();
        for (t, v) in outs.iter().zip(got) {
            assert!((v - t.sin().exp()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn pauli_engine_matches_dense() {
        let g = InteractionGraph::path(2);
        let a = LindbladAnsatz::new(g, 2, 1.0, 0.5)
            .with_term(CoeffIndex::Hamiltonian("ZZ".parse().unwrap()), PolySchedule::from_monomial(1.0, &[0.3, 0.4]))
            .with_term(CoeffIndex::Hamiltonian("XI".parse().unwrap()), PolySchedule::constant(1.0, 0.8))
            .with_term(CoeffIndex::Dissipative { site: 1, axis: Axis::Y }, PolySchedule::constant(1.0, 0.2));
        let gen = PauliGenerator::new(&a).unwrap();
        for code in 0..16u64 {
            let p = PauliString::from_index(2, code);
            let dense = a.apply_generator(0.4, &DenseOperator::pauli(&p).unwrap()).unwrap().to_pauli_coeffs();
            let fast = gen.apply(0.4, &pauli_vector(&p), false);
            for (x, y) in dense.iter().zip(&fast) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        let o = "YZ".parse::<PauliString>().unwrap();
        let d = evolve_observable(&a, &DenseOperator::pauli(&o).unwrap(), 0.0, 0.9, 1e-11).unwrap().to_pauli_coeffs();
        let f = gen.evolve_to(pauli_vector(&o), 0.0, 0.9, &Rk45Options::with_tol(1e-11)).unwrap();
        for (x, y) in d.iter().zip(&f) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dyson_values() {
        assert!((dyson_tail(1.0, 0.5, 3) - 0.5f64.powi(4) / 24.0).abs() < 1e-16);
        assert_eq!(dyson_tail(3.0, 0.0, 2), 0.0);
        assert!(dyson_tail(2.0, 1.0, 5) < dyson_tail(2.0, 1.0, 4));
    }

    #[test]
    fn lr_edge_cases() {
        let cal = LrModel::Calibrated(LRParams { v: 2.0, mu: 1.0, c3: 3.0, source: LrSource::Calibrated });
        let frm = LrModel::Formula(LrFormula { c: 1.0, c1: 3.0, k: 2.0, d: 1 });
        assert_eq!(lr_bound(&cal, 2, 0.0, 0), 0.0);
        assert_eq!(lr_bound(&frm, 2, 0.0, 0), 0.0);
        assert_eq!(lr_radius(&cal, 1e9, 0.3, 0, 10), (0, false));
        assert_eq!(lr_radius(&cal, 1e-3, 0.0, 0, 10), (0, false));
        // decreasing beyond r >= lam
        let lam = 2.0 * 3.0 * 2.0 * 4f64.powf(6.0) * 1e-4;
        let r0 = lam.ceil() as usize;
        assert!(lr_bound(&frm, r0 + 1, 1e-4, 0) < lr_bound(&frm, r0, 1e-4, 0));
    }

    #[test]
    fn comparison_zero_cases() {
        let p = ComparisonParams { c: 2.0, mu_prime: 3.0, d: 1 };
        assert_eq!(comparison_bound(0.0, 1.0, 0, 0.5, &p), 0.0);
        assert_eq!(comparison_bound(0.1, 1.0, 0, 0.0, &p), 0.0);
    }
}
