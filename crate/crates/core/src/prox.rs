//! KL proximal operators for the functionals driving the flows, plus the
//! calculus rules that combine them (tilt by a potential, equality coupling,
//! composition with a sum, fixed targets).
//!
//! Every operator here acts entrywise or on marginal vectors; none of them
//! needs the transport plan itself. `ProxFn::evaluate(q, sigma)` returns
//! argmin_p KL(p | q) + sigma * f(p).

use std::sync::Arc;

use crate::domain::PotentialField;
use crate::error::{Error, Result};

/// Proximal map of a single-density functional for the KL divergence.
pub trait ProxFn: Send + Sync {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>>;
}

impl ProxFn for Arc<dyn ProxFn> {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.as_ref().evaluate(q, sigma)
    }
}

/// f = 0; the prox is the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProx;

impl ProxFn for IdentityProx {
    fn evaluate(&self, q: &[f64], _sigma: f64) -> Result<Vec<f64>> {
        Ok(q.to_vec())
    }
}

/// Congestion functional: hard ceiling kappa plus a linear potential w.
/// Prox: p_i = min(q_i * exp(-sigma * w_i), kappa).
#[derive(Debug, Clone)]
pub struct CongestionProx {
    kappa: f64,
    potential: Option<Vec<f64>>,
}

impl CongestionProx {
    pub fn new(kappa: f64, potential: Option<PotentialField>) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Prox(format!("kappa must be positive, got {kappa}")));
        }
        Ok(CongestionProx {
            kappa,
            potential: potential.map(PotentialField::into_values),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl ProxFn for CongestionProx {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if let Some(w) = &self.potential {
            if w.len() != q.len() {
                return Err(Error::Prox(format!(
                    "potential has {} entries, density has {}",
                    w.len(),
                    q.len()
                )));
            }
        }
        Ok(q.iter()
            .enumerate()
            .map(|(i, &qi)| {
                let tilt = match &self.potential {
                    Some(w) => (-sigma * w[i]).exp(),
                    None => 1.0,
                };
                (qi * tilt).min(self.kappa)
            })
            .collect())
    }
}

/// Constant-or-per-node coefficient.
#[derive(Debug, Clone)]
pub enum Weight {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl Weight {
    fn get(&self, i: usize) -> f64 {
        match self {
            Weight::Constant(c) => *c,
            Weight::PerNode(v) => v[i],
        }
    }

    fn check_len(&self, n: usize, what: &str) -> Result<()> {
        match self {
            Weight::Constant(_) => Ok(()),
            Weight::PerNode(v) if v.len() == n => Ok(()),
            Weight::PerNode(v) => Err(Error::Prox(format!(
                "{what} has {} entries, density has {n}",
                v.len()
            ))),
        }
    }

    fn validate(&self, lo: f64, what: &str) -> Result<()> {
        let check = |x: f64| -> Result<()> {
            if !x.is_finite() || x < lo {
                return Err(Error::Prox(format!(
                    "{what} must be finite and >= {lo}, got {x}"
                )));
            }
            Ok(())
        };
        match self {
            Weight::Constant(c) => check(*c),
            Weight::PerNode(v) => v.iter().try_for_each(|&x| check(x)),
        }
    }
}

/// Generalized entropy functional sum_i b_i e_m(p_i) with spatially varying
/// exponent m_i >= 1 and weight b_i >= 0.
#[derive(Debug, Clone)]
pub struct EntropyProx {
    m: Weight,
    b: Weight,
}

impl EntropyProx {
    pub fn new(m: Weight, b: Weight) -> Result<Self> {
        m.validate(1.0, "entropy exponent m")?;
        b.validate(0.0, "entropy weight b")?;
        Ok(EntropyProx { m, b })
    }

    /// Uniform exponent, unit weight.
    pub fn uniform(m: f64) -> Result<Self> {
        Self::new(Weight::Constant(m), Weight::Constant(1.0))
    }
}

impl ProxFn for EntropyProx {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Prox(format!("sigma must be nonnegative, got {sigma}")));
        }
        self.m.check_len(q.len(), "entropy exponent m")?;
        self.b.check_len(q.len(), "entropy weight b")?;
        q.iter()
            .enumerate()
            .map(|(i, &s)| gen_entropy_prox_value(s, self.m.get(i), sigma * self.b.get(i)))
            .collect()
    }
}

/// Solve for the generalized-entropy prox at one node:
/// log psi + m sigma (psi^(m-1) - 1) / (m - 1) = log s, with the m = 1 limit
/// psi = s^(1 / (1 + sigma)).
///
/// Newton runs on t = log psi, where the residual is increasing and convex,
/// so starting from min(0, log s) the iteration approaches the root from
/// below and cannot leave the domain. A bisection fallback covers the
/// pathological case of Newton stalling short of the residual target.
pub fn gen_entropy_prox_value(s: f64, m: f64, sigma: f64) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Prox(format!("prox input must be nonnegative, got {s}")));
    }
    if sigma == 0.0 || s == 0.0 {
        return Ok(s);
    }
    if m == 1.0 {
        return Ok(s.powf(1.0 / (1.0 + sigma)));
    }
    let ln_s = s.ln();
    let resid = |t: f64| (t - ln_s) + (m * sigma / (m - 1.0)) * ((m - 1.0) * t).exp_m1();
    let slope = |t: f64| 1.0 + m * sigma * ((m - 1.0) * t).exp();

    let mut t = ln_s.min(0.0);
    let mut r = resid(t);
    for _ in 0..100 {
        if r.abs() <= 1e-13 {
            return Ok(t.exp());
        }
        let step = r / slope(t);
        let next = t - step;
        if next == t {
            break;
        }
        t = next;
        r = resid(t);
    }
    if r.abs() <= 1e-12 {
        return Ok(t.exp());
    }
    // Bisection fallback on a bracketing interval.
    let mut lo = ln_s.min(0.0);
    let mut hi = ln_s.max(0.0);
    debug_assert!(resid(lo) <= 0.0);
    while resid(hi) < 0.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rm = resid(mid);
        if rm.abs() <= 1e-13 || mid == lo || mid == hi {
            t = mid;
            break;
        }
        if rm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        t = mid;
    }
    let r = resid(t);
    if r.abs() <= 1e-12 {
        Ok(t.exp())
    } else {
        Err(Error::Prox(format!(
            "entropy prox root finding stalled at residual {r:.3e} (s={s}, m={m}, sigma={sigma})"
        )))
    }
}

/// Residual of the generalized-entropy optimality equation at psi.
pub fn gen_entropy_residual(psi: f64, s: f64, m: f64, sigma: f64) -> f64 {
    if psi == 0.0 && s == 0.0 {
        return 0.0;
    }
    let t = psi.ln();
    if m == 1.0 {
        return (1.0 + sigma) * t - s.ln();
    }
    (t - s.ln()) + (m * sigma / (m - 1.0)) * ((m - 1.0) * t).exp_m1()
}

/// Non-convex on/off congestion: mass either vanishes or saturates at kappa.
/// After the linear tilt, entries strictly above kappa / e jump to kappa and
/// everything else drops to zero; exact ties resolve to zero.
#[derive(Debug, Clone)]
pub struct BinaryCongestionProx {
    kappa: f64,
    potential: Option<Vec<f64>>,
}

impl BinaryCongestionProx {
    pub fn new(kappa: f64, potential: Option<PotentialField>) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Prox(format!("kappa must be positive, got {kappa}")));
        }
        Ok(BinaryCongestionProx {
            kappa,
            potential: potential.map(PotentialField::into_values),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl ProxFn for BinaryCongestionProx {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if let Some(w) = &self.potential {
            if w.len() != q.len() {
                return Err(Error::Prox(format!(
                    "potential has {} entries, density has {}",
                    w.len(),
                    q.len()
                )));
            }
        }
        let threshold = self.kappa / std::f64::consts::E;
        Ok(q.iter()
            .enumerate()
            .map(|(i, &qi)| {
                let tilted = match &self.potential {
                    Some(w) => qi * (-sigma * w[i]).exp(),
                    None => qi,
                };
                if tilted > threshold {
                    self.kappa
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Linear-tilt rule: the prox of f(p) + <w, p> is the prox of f evaluated at
/// q * exp(-sigma * w).
pub struct ShiftProx {
    inner: Box<dyn ProxFn>,
    w: Vec<f64>,
}

impl ShiftProx {
    pub fn new(inner: Box<dyn ProxFn>, w: PotentialField) -> Self {
        ShiftProx {
            inner,
            w: w.into_values(),
        }
    }
}

impl ProxFn for ShiftProx {
    fn evaluate(&self, q: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if self.w.len() != q.len() {
            return Err(Error::Prox(format!(
                "potential has {} entries, density has {}",
                self.w.len(),
                q.len()
            )));
        }
        let tilted: Vec<f64> = q
            .iter()
            .zip(&self.w)
            .map(|(&qi, &wi)| qi * (-sigma * wi).exp())
            .collect();
        self.inner.evaluate(&tilted, sigma)
    }
}

/// Proximal map acting jointly on the marginals of several couplings,
/// weighted by the KL weights lambda baked in at construction time.
pub trait JointProx: Send + Sync {
    /// Number of couplings this prox expects.
    fn arity(&self) -> usize;

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

fn check_arity(inputs: &[Vec<f64>], arity: usize) -> Result<usize> {
    if inputs.len() != arity {
        return Err(Error::Prox(format!(
            "joint prox expects {arity} marginals, got {}",
            inputs.len()
        )));
    }
    let n = inputs[0].len();
    if inputs.iter().any(|v| v.len() != n) {
        return Err(Error::Prox("marginal lengths differ".into()));
    }
    Ok(n)
}

/// Pins every marginal to a fixed target (prox of the singleton indicator).
pub struct SingletonProx {
    targets: Vec<Vec<f64>>,
}

impl SingletonProx {
    pub fn new(targets: Vec<Vec<f64>>) -> Self {
        SingletonProx { targets }
    }
}

impl JointProx for SingletonProx {
    fn arity(&self) -> usize {
        self.targets.len()
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = check_arity(inputs, self.arity())?;
        if self.targets.iter().any(|t| t.len() != n) {
            return Err(Error::Prox("target lengths differ from marginals".into()));
        }
        Ok(self.targets.clone())
    }
}

/// Equality coupling: all marginals forced equal, with an optional extra
/// functional h applied to the common value. The common value is
/// Prox_h(prod_i p_i^(e_i)) where the exponents e_i come from the KL weights.
pub struct EqualityProx {
    exponents: Vec<f64>,
    inner: Option<Arc<dyn ProxFn>>,
    inner_sigma: f64,
}

impl EqualityProx {
    pub fn new(exponents: Vec<f64>, inner: Option<Arc<dyn ProxFn>>, inner_sigma: f64) -> Self {
        EqualityProx {
            exponents,
            inner,
            inner_sigma,
        }
    }

    /// Exponents lambda_i / sum(lambda) from the KL weights.
    pub fn normalized_exponents(lambda: &[f64]) -> Vec<f64> {
        let total: f64 = lambda.iter().sum();
        lambda.iter().map(|l| l / total).collect()
    }
}

impl JointProx for EqualityProx {
    fn arity(&self) -> usize {
        self.exponents.len()
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = check_arity(inputs, self.arity())?;
        let mut common = vec![1.0; n];
        for (input, &e) in inputs.iter().zip(&self.exponents) {
            for (c, &x) in common.iter_mut().zip(input) {
                *c *= x.powf(e);
            }
        }
        if let Some(inner) = &self.inner {
            common = inner.evaluate(&common, self.inner_sigma)?;
        }
        Ok(vec![common; self.arity()])
    }
}

/// Adapter lifting a single-density prox to a one-coupling joint prox with a
/// fixed strength.
pub struct SoloProx {
    inner: Arc<dyn ProxFn>,
    sigma: f64,
}

impl SoloProx {
    pub fn new(inner: Arc<dyn ProxFn>, sigma: f64) -> Self {
        SoloProx { inner, sigma }
    }
}

impl JointProx for SoloProx {
    fn arity(&self) -> usize {
        1
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_arity(inputs, 1)?;
        Ok(vec![self.inner.evaluate(&inputs[0], self.sigma)?])
    }
}

/// Composition with a sum (unit KL weights): h(sum_i p_i) rescales every
/// marginal by the same factor Prox_h(s) / s.
pub struct SumProx {
    arity: usize,
    inner: Arc<dyn ProxFn>,
    inner_sigma: f64,
}

impl SumProx {
    pub fn new(arity: usize, inner: Arc<dyn ProxFn>, inner_sigma: f64) -> Self {
        SumProx {
            arity,
            inner,
            inner_sigma,
        }
    }
}

impl JointProx for SumProx {
    fn arity(&self) -> usize {
        self.arity
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = check_arity(inputs, self.arity)?;
        let mut total = vec![0.0; n];
        for input in inputs {
            for (t, &x) in total.iter_mut().zip(input) {
                *t += x;
            }
        }
        let proxed = self.inner.evaluate(&total, self.inner_sigma)?;
        let ratio: Vec<f64> = proxed
            .iter()
            .zip(&total)
            .map(|(&p, &t)| if t > 0.0 { p / t } else { 1.0 })
            .collect();
        Ok(inputs
            .iter()
            .map(|input| input.iter().zip(&ratio).map(|(&x, &r)| x * r).collect())
            .collect())
    }
}

/// Linear-tilt rule for joint proxes: inputs are tilted entrywise by
/// exp(-w_i / lambda_i) before the inner prox; tilts are precomputed.
pub struct ShiftJointProx {
    inner: Box<dyn JointProx>,
    tilts: Vec<Vec<f64>>,
}

impl ShiftJointProx {
    /// `scaled_potentials[i]` must already include all strength factors:
    /// the tilt applied is exp(-scaled_potentials[i] / lambda[i]).
    pub fn new(
        inner: Box<dyn JointProx>,
        scaled_potentials: &[Vec<f64>],
        lambda: &[f64],
    ) -> Result<Self> {
        if scaled_potentials.len() != inner.arity() || lambda.len() != inner.arity() {
            return Err(Error::Prox("tilt count differs from prox arity".into()));
        }
        let tilts = scaled_potentials
            .iter()
            .zip(lambda)
            .map(|(w, &l)| w.iter().map(|&wi| (-wi / l).exp()).collect())
            .collect();
        Ok(ShiftJointProx { inner, tilts })
    }
}

impl JointProx for ShiftJointProx {
    fn arity(&self) -> usize {
        self.inner.arity()
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = check_arity(inputs, self.arity())?;
        if self.tilts.iter().any(|t| t.len() != n) {
            return Err(Error::Prox("tilt lengths differ from marginals".into()));
        }
        let tilted: Vec<Vec<f64>> = inputs
            .iter()
            .zip(&self.tilts)
            .map(|(input, tilt)| input.iter().zip(tilt).map(|(&x, &t)| x * t).collect())
            .collect();
        self.inner.evaluate(&tilted)
    }
}

/// Mixed rule for three-way couplings: two designated marginals are tied
/// together (geometric mean with given exponents, then an optional h), the
/// remaining one is pinned to a fixed target.
pub struct TiePinProx {
    arity: usize,
    tie: (usize, usize),
    exponents: (f64, f64),
    inner: Option<Arc<dyn ProxFn>>,
    inner_sigma: f64,
    pin_slot: usize,
    pin: Vec<f64>,
}

impl TiePinProx {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        arity: usize,
        tie: (usize, usize),
        exponents: (f64, f64),
        inner: Option<Arc<dyn ProxFn>>,
        inner_sigma: f64,
        pin_slot: usize,
        pin: Vec<f64>,
    ) -> Result<Self> {
        if tie.0 >= arity || tie.1 >= arity || pin_slot >= arity {
            return Err(Error::Prox("tie or pin slot out of range".into()));
        }
        if tie.0 == tie.1 || pin_slot == tie.0 || pin_slot == tie.1 {
            return Err(Error::Prox("tie and pin slots must be distinct".into()));
        }
        Ok(TiePinProx {
            arity,
            tie,
            exponents,
            inner,
            inner_sigma,
            pin_slot,
            pin,
        })
    }
}

impl JointProx for TiePinProx {
    fn arity(&self) -> usize {
        self.arity
    }

    fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = check_arity(inputs, self.arity)?;
        if self.pin.len() != n {
            return Err(Error::Prox("pin target length differs from marginals".into()));
        }
        let (i, j) = self.tie;
        let (ei, ej) = self.exponents;
        let mut common: Vec<f64> = inputs[i]
            .iter()
            .zip(&inputs[j])
            .map(|(&a, &b)| a.powf(ei) * b.powf(ej))
            .collect();
        if let Some(inner) = &self.inner {
            common = inner.evaluate(&common, self.inner_sigma)?;
        }
        let mut out = vec![Vec::new(); self.arity];
        out[i] = common.clone();
        out[j] = common;
        out[self.pin_slot] = self.pin.clone();
        Ok(out)
    }
}

/// KL divergence sum_i p_i log(p_i / q_i) - p_i + q_i, with the conventions
/// 0 log 0 = 0 and KL = infinity when p charges a zero of q.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            acc += qi;
        } else if qi == 0.0 {
            return f64::INFINITY;
        } else {
            acc += pi * (pi / qi).ln() - pi + qi;
        }
    }
    acc
}

/// Generalized entropy e_m summed over nodes: p (log p - 1) at m = 1, else
/// p (p^(m-1) - m) / (m - 1).
pub fn gen_entropy_value(p: &[f64], m: f64) -> f64 {
    p.iter()
        .map(|&x| {
            if x == 0.0 {
                0.0
            } else if m == 1.0 {
                x * (x.ln() - 1.0)
            } else {
                x * (x.powf(m - 1.0) - m) / (m - 1.0)
            }
        })
        .sum()
}
