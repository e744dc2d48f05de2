//! Polynomial coefficient schedules on `[0, T]`: evaluation, Chebyshev-measure
//! nodes, least-squares and robust fitting, degree selection and the
//! Markov/extrapolation constants.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition-number ceiling for fitting problems.
pub const MAX_CONDITION: f64 = 1e12;

/// Degree-`m` polynomial on `[0, T]`, stored in the Chebyshev basis of `x = 2t/T - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    #[serde(rename = "T")]
    t_max: f64,
    cheb: Vec<f64>,
}

impl PolySchedule {
    pub fn from_chebyshev(t_max: f64, cheb: Vec<f64>) -> Self {
        assert!(t_max > 0.0, "interval length must be positive");
        let cheb = if cheb.is_empty() { vec![0.0] } else { cheb };
        PolySchedule { t_max, cheb }
    }

    /// From monomial coefficients `a_0 + a_1 t + ... + a_m t^m`.
    pub fn from_monomial(t_max: f64, a: &[f64]) -> Self {
        // t = T/2 (x + 1); expand each power in the Chebyshev basis of x
        let m = a.len().max(1) - 1;
        let mut out = vec![0.0; m + 1];
        // power of (T/2 (x+1)) in Chebyshev coefficients
        let mut pw = vec![1.0];
        for (k, &ak) in a.iter().enumerate() {
            if k > 0 {
                pw = cheb_mul_linear(&pw, t_max / 2.0, t_max / 2.0);
            }
            for (i, &c) in pw.iter().enumerate() {
                out[i] += ak * c;
            }
        }
        PolySchedule::from_chebyshev(t_max, out)
    }

    pub fn constant(t_max: f64, c: f64) -> Self {
        PolySchedule::from_chebyshev(t_max, vec![c])
    }

    pub fn zero(t_max: f64) -> Self {
        PolySchedule::constant(t_max, 0.0)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn chebyshev_coeffs(&self) -> &[f64] {
        &self.cheb
    }

    /// Nominal degree (length of the coefficient vector minus one).
    pub fn degree(&self) -> usize {
        self.cheb.len() - 1
    }

    pub fn to_x(&self, t: f64) -> f64 {
        2.0 * t / self.t_max - 1.0
    }

    pub fn eval(&self, t: f64) -> f64 {
        clenshaw(&self.cheb, self.to_x(t))
    }

    pub fn derivative(&self) -> PolySchedule {
        let c = &self.cheb;
        let m = c.len() - 1;
        if m == 0 {
            return PolySchedule::zero(self.t_max);
        }
        let mut d = vec![0.0; m + 2];
        for k in (0..m).rev() {
            d[k] = d[k + 2] + 2.0 * (k as f64 + 1.0) * c[k + 1];
        }
        d[0] /= 2.0;
        d.truncate(m);
        let s = 2.0 / self.t_max;
        PolySchedule::from_chebyshev(self.t_max, d.into_iter().map(|v| v * s).collect())
    }

    /// Monomial coefficients in `t`.
    pub fn monomial_coeffs(&self) -> Vec<f64> {
        // Chebyshev T_k(x) in monomials of x, then substitute x = (2/T) t - 1
        let m = self.degree();
        let mut px = vec![0.0; m + 1];
        let mut tkm1 = vec![1.0];
        let mut tk = vec![0.0, 1.0];
        for (k, &ck) in self.cheb.iter().enumerate() {
            let tkk: &Vec<f64> = if k == 0 { &tkm1 } else { &tk };
            for (i, &v) in tkk.iter().enumerate() {
                px[i] += ck * v;
            }
            if k >= 1 {
                let mut next = vec![0.0; tk.len() + 1];
                for (i, &v) in tk.iter().enumerate() {
                    next[i + 1] += 2.0 * v;
                }
                for (i, &v) in tkm1.iter().enumerate() {
                    next[i] -= v;
                }
                tkm1 = std::mem::replace(&mut tk, next);
            }
        }
        let a = 2.0 / self.t_max;
        let mut out = vec![0.0; m + 1];
        // (a t - 1)^i expanded binomially
        for (i, &pi) in px.iter().enumerate() {
            let mut binom = 1.0;
            for j in 0..=i {
                let term = binom * a.powi(j as i32) * (-1.0f64).powi((i - j) as i32);
                out[j] += pi * term;
                binom = binom * (i - j) as f64 / (j + 1) as f64;
            }
        }
        out
    }

    /// Sup-norm on `[0, T]` via a dense grid refined with Newton steps on the derivative.
    pub fn sup_norm(&self) -> f64 {
        let m = self.degree();
        let n = (64 * (m + 1)).max(512);
        let d1 = self.derivative();
        let d2 = d1.derivative();
        let mut best = self.eval(0.0).abs().max(self.eval(self.t_max).abs());
        let h = self.t_max / n as f64;
        for i in 1..=n {
            let t = i as f64 * h;
            best = best.max(self.eval(t).abs());
            // refine interior extrema bracketed by a derivative sign change
            let (da, db) = (d1.eval(t - h), d1.eval(t));
            if da == 0.0 || da.signum() != db.signum() {
                let mut s = t - h / 2.0;
                for _ in 0..30 {
                    let dd = d2.eval(s);
                    if dd == 0.0 {
                        break;
                    }
                    let step = d1.eval(s) / dd;
                    s -= step;
                    if !(t - h..=t).contains(&s) {
                        s = s.clamp(t - h, t);
                        break;
                    }
                    if step.abs() < 1e-15 * self.t_max {
                        break;
                    }
                }
                best = best.max(self.eval(s).abs());
            }
        }
        best
    }

    pub fn add(&self, other: &PolySchedule) -> PolySchedule {
        let n = self.cheb.len().max(other.cheb.len());
        let mut c = vec![0.0; n];
        for (i, v) in self.cheb.iter().enumerate() {
            c[i] += v;
        }
        for (i, v) in other.cheb.iter().enumerate() {
            c[i] += v;
        }
        PolySchedule::from_chebyshev(self.t_max, c)
    }

    pub fn scale(&self, s: f64) -> PolySchedule {
        PolySchedule::from_chebyshev(self.t_max, self.cheb.iter().map(|v| v * s).collect())
    }

    /// `sup_{[0,T]} |self - other|`.
    pub fn sup_distance(&self, other: &PolySchedule) -> f64 {
        self.add(&other.scale(-1.0)).sup_norm()
    }
}

/// Multiplies a Chebyshev series by `(a x + b)`.
fn cheb_mul_linear(c: &[f64], a: f64, b: f64) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (k, &ck) in c.iter().enumerate() {
        out[k] += b * ck;
        // x T_k = (T_{k+1} + T_{|k-1|}) / 2, with x T_0 = T_1
        if k == 0 {
            out[1] += a * ck;
        } else {
            out[k + 1] += a * ck / 2.0;
            out[k - 1] += a * ck / 2.0;
        }
    }
    out
}

/// Clenshaw evaluation of `sum c_k T_k(x)`.
pub fn clenshaw(c: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    x * b1 - b2 + c[0]
}

/// Values `T_0(x), ..., T_m(x)`.
pub fn chebyshev_row(x: f64, m: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if m >= 1 {
        out[1] = x;
    }
    for k in 2..=m {
        out[k] = 2.0 * x * out[k - 1] - out[k - 2];
    }
}

/// `C_der = 2 m^2 / T`.
pub fn markov_constant(m: usize, t_max: f64) -> f64 {
    2.0 * (m * m) as f64 / t_max
}

/// `G(m, K) = K m + K`.
pub fn dyson_degree(m: usize, k: usize) -> usize {
    k * m + k
}

/// `|T_m(2 T_f / T - 1)|`, evaluated as `cosh(m acosh(.))`.
pub fn extrapolation_factor(m: usize, t_max: f64, t_f: f64) -> f64 {
    let x = 2.0 * t_f / t_max - 1.0;
    if x.abs() <= 1.0 {
        return (m as f64 * x.acos()).cos().abs();
    }
    (m as f64 * x.abs().acosh()).cosh()
}

/// Sorted nodes drawn from the Chebyshev (arcsine) measure on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePlan {
    pub nodes: Vec<f64>,
    pub target_precision: f64,
    pub degree: usize,
    pub seed: u64,
    pub c_node: f64,
}

/// Default node-count constant.
pub const C_NODE: f64 = 4.0;

/// `ceil(c_node * max(m,1) * ln((m+2)/δ))`, and at least `m + 1`.
pub fn node_count(m: usize, delta: f64, c_node: f64) -> usize {
    let v = (c_node * (m.max(1) as f64) * ((m as f64 + 2.0) / delta).ln()).ceil() as usize;
    v.max(m + 1)
}

/// `count` i.i.d. draws `t = (T/2)(1 - cos(πU))`, sorted, all strictly inside `(0, T)`.
pub fn chebyshev_nodes<R: Rng + ?Sized>(t_max: f64, count: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..count)
        .map(|_| loop {
            let u: f64 = rng.gen();
            let t = 0.5 * t_max * (1.0 - (PI * u).cos());
            if t > 0.0 && t < t_max {
                break t;
            }
        })
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    LeastSquares,
    L1Robust,
}

/// Reusable least-squares fitter for a fixed node set and degree.
#[derive(Clone, Debug)]
pub struct LsFitter {
    t_max: f64,
    degree: usize,
    nodes: Vec<f64>,
    design: DMatrix<f64>,
    pinv: DMatrix<f64>,
    pub condition: f64,
}

impl LsFitter {
    pub fn new(nodes: &[f64], degree: usize, t_max: f64) -> Result<Self> {
        let design = design_matrix(nodes, degree, t_max, None)?;
        let (pinv, condition) = pseudo_inverse(&design)?;
        Ok(LsFitter {
            t_max,
            degree,
            nodes: nodes.to_vec(),
            design,
            pinv,
            condition,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn fit(&self, values: &[f64]) -> Result<PolySchedule> {
        if values.len() != self.nodes.len() {
            return Err(Error::Dimension {
                expected: self.nodes.len(),
                got: values.len(),
            });
        }
        let y = DVector::from_column_slice(values);
        let c = &self.pinv * y;
        Ok(PolySchedule::from_chebyshev(self.t_max, c.iter().copied().collect()))
    }

    /// Residuals `y_i - p(t_i)` of a fit.
    pub fn residuals(&self, p: &PolySchedule, values: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(p.chebyshev_coeffs());
        let fitted = &self.design * c;
        values.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect()
    }

    /// Linear map from node values to the fit evaluated at `points`.
    pub fn evaluation_operator(&self, points: &[f64]) -> DMatrix<f64> {
        let g = design_matrix(points, self.degree, self.t_max, None).expect("grid design");
        g * &self.pinv
    }
}

fn design_matrix(nodes: &[f64], m: usize, t_max: f64, w: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(nodes.len(), m + 1);
    let mut row = vec![0.0; m + 1];
    for (i, &t) in nodes.iter().enumerate() {
        chebyshev_row(2.0 * t / t_max - 1.0, m, &mut row);
        let s = w.map(|w| w[i]).unwrap_or(1.0);
        for k in 0..=m {
            a[(i, k)] = row[k] * s;
        }
    }
    Ok(a)
}

fn pseudo_inverse(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular(cond));
    }
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for i in 0..svd.singular_values.len() {
        sinv[(i, i)] = 1.0 / svd.singular_values[i];
    }
    Ok((vt.transpose() * sinv * u.transpose(), cond))
}

fn check_nodes(nodes: &[f64], values: &[f64], m: usize) -> Result<()> {
    if nodes.len() != values.len() {
        return Err(Error::Dimension {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    if nodes.len() < m + 1 {
        return Err(Error::Underdetermined {
            need: m + 1,
            got: nodes.len(),
        });
    }
    Ok(())
}

fn weighted_ls(nodes: &[f64], values: &[f64], m: usize, t_max: f64, w: &[f64]) -> Result<PolySchedule> {
    let a = design_matrix(nodes, m, t_max, Some(w))?;
    let y = DVector::from_iterator(values.len(), values.iter().zip(w).map(|(v, s)| v * s));
    let (pinv, _) = pseudo_inverse(&a)?;
    let c = pinv * y;
    Ok(PolySchedule::from_chebyshev(t_max, c.iter().copied().collect()))
}

/// Fits a degree-`m` polynomial through `(nodes, values)` on `[0, T]`.
///
/// `L1Robust` runs iteratively reweighted least squares towards the
/// least-absolute-deviation fit (200 iterations max, weight floor `1e-8`).
pub fn robust_fit(nodes: &[f64], values: &[f64], m: usize, mode: FitMode, t_max: f64) -> Result<PolySchedule> {
    check_nodes(nodes, values, m)?;
    let ones = vec![1.0; nodes.len()];
    let mut p = weighted_ls(nodes, values, m, t_max, &ones)?;
    if mode == FitMode::LeastSquares {
        return Ok(p);
    }
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let floor = 1e-8 * scale;
    let mut prev_obj = f64::INFINITY;
    for _ in 0..200 {
        let w: Vec<f64> = nodes
            .iter()
            .zip(values)
            .map(|(&t, &y)| 1.0 / (y - p.eval(t)).abs().max(floor).sqrt())
            .collect();
        p = weighted_ls(nodes, values, m, t_max, &w)?;
        let obj: f64 = nodes.iter().zip(values).map(|(&t, &y)| (y - p.eval(t)).abs()).sum();
        if (prev_obj - obj).abs() <= 1e-12 * prev_obj.max(1e-300) {
            break;
        }
        prev_obj = obj;
    }
    Ok(p)
}

/// Smallest `m <= m_cap` whose Chebyshev truncation of `f` has sup error `<= eps`.
///
/// Coefficients come from a discrete cosine expansion at `4 m_cap` Chebyshev
/// points; the truncation error is measured on a dense grid.
pub fn degree_for_schedule<F: Fn(f64) -> f64>(f: F, t_max: f64, eps: f64, m_cap: usize) -> Result<usize> {
    let coeffs = chebyshev_expansion(&f, t_max, 4 * m_cap.max(1));
    let grid: Vec<f64> = (0..=2000).map(|i| t_max * i as f64 / 2000.0).collect();
    let fv: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    for m in 0..=m_cap {
        let p = PolySchedule::from_chebyshev(t_max, coeffs[..=m].to_vec());
        let err = grid
            .iter()
            .zip(&fv)
            .map(|(&t, &v)| (p.eval(t) - v).abs())
            .fold(0.0, f64::max);
        if err <= eps {
            return Ok(m);
        }
    }
    Err(Error::DegreeUnreachable { cap: m_cap })
}

/// Chebyshev coefficients of `f` on `[0,T]` from `n` Chebyshev-Gauss points.
pub fn chebyshev_expansion<F: Fn(f64) -> f64>(f: &F, t_max: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    let vals: Vec<f64> = (0..n)
        .map(|j| {
            let th = PI * (j as f64 + 0.5) / n as f64;
            f(0.5 * t_max * (th.cos() + 1.0))
        })
        .collect();
    (0..n)
        .map(|k| {
            let s: f64 = vals
                .iter()
                .enumerate()
                .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                .sum();
            let c = 2.0 * s / n as f64;
            if k == 0 {
                c / 2.0
            } else {
                c
            }
        })
        .collect()
}

/// Interpolates `f` at the degree it needs for accuracy `eps` (capped at `m_cap`).
pub fn approximate<F: Fn(f64) -> f64>(f: F, t_max: f64, eps: f64, m_cap: usize) -> Result<PolySchedule> {
    let m = degree_for_schedule(&f, t_max, eps, m_cap)?;
    let coeffs = chebyshev_expansion(&f, t_max, 4 * m_cap.max(1));
    Ok(PolySchedule::from_chebyshev(t_max, coeffs[..=m].to_vec()))
}

/// 95th percentile over `seeds` trials of `sup|fit error| / max|noise|` for a
/// least-squares fit on `nodes` with uniform noise injected at each node.
///
/// The fit is linear, so the polynomial itself cancels and only the noise enters.
pub fn calibrate_c_int<R: Rng + ?Sized>(fitter: &LsFitter, seeds: usize, rng: &mut R) -> f64 {
    let t_max = fitter.t_max;
    let grid: Vec<f64> = (0..=400).map(|i| t_max * i as f64 / 400.0).collect();
    let op = fitter.evaluation_operator(&grid);
    let mut ratios: Vec<f64> = (0..seeds.max(1))
        .map(|_| {
            let e = DVector::from_fn(fitter.nodes.len(), |_, _| rng.gen_range(-1.0..1.0));
            let emax = e.amax();
            let out = &op * &e;
            out.amax() / emax
        })
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.95 * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
    ratios[idx]
}

/// Abstract Markov-stable function system, instantiated for polynomials.
pub trait Msfs {
    fn degree(&self) -> usize;
    fn interval(&self) -> f64;
    fn markov_constant(&self) -> f64 {
        markov_constant(self.degree(), self.interval())
    }
    fn dyson_degree(&self, k: usize) -> usize;
    fn fit(&self, nodes: &[f64], values: &[f64], mode: FitMode) -> Result<PolySchedule>;
}

/// Polynomials of degree at most `m` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialFamily {
    pub m: usize,
    pub t_max: f64,
}

impl Msfs for PolynomialFamily {
    fn degree(&self) -> usize {
        self.m
    }
    fn interval(&self) -> f64 {
        self.t_max
    }
    fn dyson_degree(&self, k: usize) -> usize {
        dyson_degree(self.m, k)
    }
    fn fit(&self, nodes: &[f64], values: &[f64], mode: FitMode) -> Result<PolySchedule> {
        robust_fit(nodes, values, self.m, mode, self.t_max)
    }
}

/// Schedule block of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// Explicit coefficients, `basis` is `"monomial"` or `"chebyshev"`.
    Poly { basis: Basis, coeffs: Vec<f64> },
    Const { value: f64 },
    Linear { a: f64, b: f64 },
    Cos { amp: f64, freq: f64, phase: f64, offset: f64 },
    Gaussian { amp: f64, center: f64, width: f64, offset: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Monomial,
    Chebyshev,
}

impl ScheduleSpec {
    pub fn eval(&self, t_max: f64, t: f64) -> f64 {
        match *self {
            ScheduleSpec::Poly { .. } => self.to_poly(t_max).expect("polynomial").eval(t),
            ScheduleSpec::Const { value } => value,
            ScheduleSpec::Linear { a, b } => a + b * t,
            ScheduleSpec::Cos { amp, freq, phase, offset } => offset + amp * (2.0 * PI * freq * t + phase).cos(),
            ScheduleSpec::Gaussian { amp, center, width, offset } => {
                offset + amp * (-(t - center).powi(2) / (2.0 * width * width)).exp()
            }
        }
    }

    /// Polynomial form; black-box built-ins are interpolated to `1e-12`.
    pub fn to_poly(&self, t_max: f64) -> Result<PolySchedule> {
        match self {
            ScheduleSpec::Poly { basis, coeffs } => Ok(match basis {
                Basis::Monomial => PolySchedule::from_monomial(t_max, coeffs),
                Basis::Chebyshev => PolySchedule::from_chebyshev(t_max, coeffs.clone()),
            }),
            ScheduleSpec::Const { value } => Ok(PolySchedule::constant(t_max, *value)),
            ScheduleSpec::Linear { a, b } => Ok(PolySchedule::from_monomial(t_max, &[*a, *b])),
            _ => approximate(|t| self.eval(t_max, t), t_max, 1e-12, 64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_and_derivative() {
        let s = PolySchedule::from_monomial(1.0, &[0.5, 0.3]);
        assert!((s.eval(0.5) - 0.65).abs() < 1e-15);
        let d = s.derivative();
        assert_eq!(d.degree(), 0);
        assert!((d.eval(0.1) - 0.3).abs() < 1e-14);
        assert_eq!(PolySchedule::constant(1.0, 3.0).derivative().eval(0.4), 0.0);
    }

    #[test]
    fn chebyshev_t3_node() {
        let s = PolySchedule::from_chebyshev(2.0, vec![0.0, 0.0, 0.0, 1.0]);
        // x = cos(pi/6) corresponds to t = (x + 1) T / 2
        let x = (PI / 6.0).cos();
        assert!(s.eval(x + 1.0).abs() < 1e-14);
    }

    #[test]
    fn monomial_round_trip() {
        let a = [2.0, -1.0, 0.5, 0.25];
        let s = PolySchedule::from_monomial(3.0, &a);
        for (u, v) in s.monomial_coeffs().iter().zip(a) {
            assert!((u - v).abs() < 1e-12);
        }
        let d = s.derivative();
        for t in [0.0, 0.7, 2.9] {
            assert!((d.eval(t) - (-1.0 + t + 0.75 * t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_values() {
        assert_eq!(markov_constant(3, 1.0), 18.0);
        assert_eq!(markov_constant(0, 1.0), 0.0);
        assert_eq!(markov_constant(10, 2.0), 100.0);
    }

    #[test]
    fn dyson_degrees() {
        assert_eq!(dyson_degree(2, 3), 9);
        assert_eq!(dyson_degree(5, 0), 0);
        assert_eq!(dyson_degree(0, 4), 4);
    }

    #[test]
    fn extrapolation_values() {
        assert!((extrapolation_factor(4, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((extrapolation_factor(1, 1.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((extrapolation_factor(3, 1.0, 1.5) - 26.0).abs() < 1e-9);
        assert!((extrapolation_factor(1, 1.0, 3.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nodes_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = chebyshev_nodes(2.0, 500, &mut rng);
        assert!(v.iter().all(|&t| t > 0.0 && t < 2.0));
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn exact_interpolation() {
        let p = PolySchedule::from_monomial(1.0, &[2.0, -1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nodes = chebyshev_nodes(1.0, 10, &mut rng);
        let vals: Vec<f64> = nodes.iter().map(|&t| p.eval(t)).collect();
        let q = robust_fit(&nodes, &vals, 2, FitMode::LeastSquares, 1.0).unwrap();
        for (u, v) in q.monomial_coeffs().iter().zip([2.0, -1.0, 0.5]) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            robust_fit(&[0.5], &[1.0], 2, FitMode::LeastSquares, 1.0),
            Err(Error::Underdetermined { .. })
        ));
        assert!(matches!(
            robust_fit(&[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0], 2, FitMode::LeastSquares, 1.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn degree_selection() {
        assert_eq!(degree_for_schedule(|_| 0.7, 1.0, 1e-12, 10).unwrap(), 0);
        assert_eq!(degree_for_schedule(|t| t * t * t, 1.0, 1e-12, 10).unwrap(), 3);
        let m = degree_for_schedule(|t| (2.0 * PI * t).cos(), 1.0, 1e-6, 30).unwrap();
        assert!((10..=16).contains(&m), "m = {m}");
        assert_eq!(m, 10);
        assert!(degree_for_schedule(|t| (40.0 * t).sin(), 1.0, 1e-9, 5).is_err());
    }

    #[test]
    fn sup_norm_refines() {
        // t(1 - t) peaks at 1/4 at t = 1/2
        let p = PolySchedule::from_monomial(1.0, &[0.0, 1.0, -1.0]);
        assert!((p.sup_norm() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn node_counts() {
        assert_eq!(node_count(1, 0.1, 4.0), 14);
        assert!(node_count(0, 0.5, 4.0) >= 1);
    }
}
