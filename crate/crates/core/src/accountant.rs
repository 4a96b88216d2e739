//! Rényi-DP accounting for the sampled Gaussian mechanism.
//!
//! Noise multipliers are sensitivity-normalized: a step that adds
//! `N(0, (sigma * Delta)^2)` to a function of sensitivity `Delta` is charged
//! here with `sigma` alone.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders tracked by default: 1.25, 1.5, 1.75, every integer 2..=64, then
/// powers of two up to 8192. The large orders keep the conversion term
/// `log(1/delta) / (order - 1)` from flooring small target epsilons.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders.extend((7..=13).map(|k| f64::from(1u32 << k)));
    orders
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_args(q: f64, sigma: f64, order: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("sampling ratio {q} not in (0, 1]")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("noise multiplier {sigma} must be positive")));
    }
    if !(order > 1.0) || !order.is_finite() {
        return Err(Error::Config(format!("Renyi order {order} must exceed 1")));
    }
    Ok(())
}

/// RDP of one sampled Gaussian step at order `order`.
///
/// `q = 1` uses the Gaussian closed form `order / (2 sigma^2)`. Integer orders
/// use the binomial expansion of `E[(mu / mu0)^order]`, evaluated in log space.
/// Fractional orders integrate both divergence directions numerically and
/// return the larger.
pub fn rdp_sampled_gaussian(q: f64, sigma: f64, order: f64) -> Result<f64> {
    check_args(q, sigma, order)?;
    if q == 1.0 {
        return Ok(order / (2.0 * sigma * sigma));
    }
    let eps = if order.fract() == 0.0 {
        log_a_integer(q, sigma, order as u64) / (order - 1.0)
    } else {
        let forward = log_moment_quadrature(q, sigma, order);
        let reverse = log_moment_quadrature(q, sigma, 1.0 - order);
        forward.max(reverse) / (order - 1.0)
    };
    Ok(eps.max(0.0))
}

/// `ln sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1) / (2 sigma^2))`
fn log_a_integer(q: f64, sigma: f64, order: u64) -> f64 {
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=order {
        if k > 0 {
            ln_binom += ((order - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let term = ln_binom + (order - k) as f64 * ln_1mq + kf * ln_q + kf * (kf - 1.0) / (2.0 * sigma * sigma);
        acc = log_add_exp(acc, term);
    }
    acc
}

/// `ln E_{x ~ N(0, sigma^2)}[ (mu(x) / mu0(x))^c ]` with `mu = (1-q) N(0, sigma^2) + q N(1, sigma^2)`.
/// `c = order` gives the `mu || mu0` direction, `c = 1 - order` the reverse one.
fn log_moment_quadrature(q: f64, sigma: f64, c: f64) -> f64 {
    let s2 = sigma * sigma;
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    // log likelihood ratio of the mixture against the centred Gaussian
    let ratio = move |x: f64| log_add_exp(ln_1mq, ln_q + (2.0 * x - 1.0) / (2.0 * s2));
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    let log_f = move |x: f64| ln_norm - x * x / (2.0 * s2) + c * ratio(x);
    let reach = 14.0 * sigma + 2.0;
    let (lo, hi) = (-reach, c.max(0.0).ceil() + reach);

    let grid = 4096;
    let h = (hi - lo) / grid as f64;
    let mut peak = f64::NEG_INFINITY;
    let mut max_exponent: f64 = 0.0;
    for i in 0..=grid {
        let x = lo + h * i as f64;
        peak = peak.max(log_f(x));
        max_exponent = max_exponent.max((c * ratio(x)).abs());
    }
    if max_exponent < 0.5 {
        // moment close to one: integrate the excess to keep precision
        let excess = move |x: f64| (ln_norm - x * x / (2.0 * s2)).exp() * (c * ratio(x)).exp_m1();
        let mass = h * (0..=grid).map(|i| excess(lo + h * i as f64).abs()).sum::<f64>();
        return adaptive_simpson(&excess, lo, hi, 1e-12 * mass).ln_1p();
    }
    let shifted = move |x: f64| (log_f(x) - peak).exp();
    let mass = h * (0..=grid).map(|i| shifted(lo + h * i as f64)).sum::<f64>();
    peak + adaptive_simpson(&shifted, lo, hi, 1e-12 * mass).ln()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // split into panels first so narrow peaks are not missed
    let panels = 64;
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (x0, x1) = (a + w * i as f64, a + w * (i + 1) as f64);
            let xm = 0.5 * (x0 + x1);
            let (f0, fm, f1) = (f(x0), f(xm), f(x1));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            simpson_step(f, x0, x1, f0, fm, f1, whole, tol / panels as f64, 30)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || tol == 0.0 {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// RDP epsilons over a grid of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl RdpCurve {
    pub fn zeros(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::Config("empty order grid".into()));
        }
        if orders.windows(2).any(|w| !(w[0] < w[1])) || orders[0] <= 1.0 {
            return Err(Error::Config("orders must be strictly increasing and above 1".into()));
        }
        let epsilons = vec![0.0; orders.len()];
        Ok(Self { orders, epsilons })
    }

    /// Curve of a single sampled Gaussian step.
    pub fn sampled_gaussian(orders: &[f64], q: f64, sigma: f64) -> Result<Self> {
        let mut curve = Self::zeros(orders.to_vec())?;
        for (e, &a) in curve.epsilons.iter_mut().zip(orders) {
            *e = rdp_sampled_gaussian(q, sigma, a)?;
        }
        Ok(curve)
    }

    /// Best `(epsilon, order)` for the given delta.
    pub fn to_dp(&self, delta: f64) -> Result<(f64, f64)> {
        to_dp(self, delta)
    }
}

/// `min_alpha eps(alpha) + ln(1/delta) / (alpha - 1)` over the curve's orders,
/// returned with the minimizing order.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} not in (0, 1)")));
    }
    let log_inv = -delta.ln();
    curve
        .orders
        .iter()
        .zip(&curve.epsilons)
        .map(|(&a, &e)| (e + log_inv / (a - 1.0), a))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .ok_or_else(|| Error::Config("empty RDP curve".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    /// Noisy penalty gradient on a minibatch, `q = |B| / n`.
    Primal,
    /// Noisy constraint violations on the full dataset, `q = 1`.
    Dual,
}

/// Consecutive steps sharing kind, sampling ratio and multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogEntry {
    pub kind: MechanismKind,
    pub q: f64,
    pub sigma: f64,
    pub count: usize,
    /// Range of sensitivities the noise was scaled by, when recorded.
    pub sensitivity_min: Option<f64>,
    pub sensitivity_max: Option<f64>,
}

/// Accumulated RDP of a training run and the steps that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrivacyLedger {
    curve: RdpCurve,
    steps: Vec<StepLogEntry>,
    /// Step counts per distinct `(kind, q, sigma)`; the curve is rebuilt from these.
    #[serde(skip)]
    totals: Vec<(MechanismKind, u64, u64, usize)>,
    #[serde(skip)]
    cache: HashMap<(u64, u64), Vec<f64>>,
}

impl PartialEq for PrivacyLedger {
    fn eq(&self, other: &Self) -> bool {
        self.curve == other.curve && self.steps == other.steps
    }
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new(default_orders()).expect("default orders are valid")
    }
}

impl PrivacyLedger {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        Ok(Self {
            curve: RdpCurve::zeros(orders)?,
            steps: Vec::new(),
            totals: Vec::new(),
            cache: HashMap::new(),
        })
    }

    pub fn curve(&self) -> &RdpCurve {
        &self.curve
    }

    pub fn steps(&self) -> &[StepLogEntry] {
        &self.steps
    }

    pub fn step_count(&self, kind: MechanismKind) -> usize {
        self.steps.iter().filter(|s| s.kind == kind).map(|s| s.count).sum()
    }

    fn per_step(&mut self, q: f64, sigma: f64) -> Result<Vec<f64>> {
        let key = (q.to_bits(), sigma.to_bits());
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let v = RdpCurve::sampled_gaussian(&self.curve.orders, q, sigma)?.epsilons;
        self.cache.insert(key, v.clone());
        Ok(v)
    }

    fn rebuild_curve(&mut self) {
        let mut eps = vec![0.0; self.curve.orders.len()];
        for &(_, q, sigma, count) in &self.totals {
            let per = &self.cache[&(q, sigma)];
            for (e, p) in eps.iter_mut().zip(per) {
                *e += count as f64 * p;
            }
        }
        self.curve.epsilons = eps;
    }

    /// Adds `steps` sampled Gaussian steps: `eps(alpha) += steps * eps_step(alpha)`.
    pub fn compose(&mut self, kind: MechanismKind, q: f64, sigma: f64, steps: usize) -> Result<()> {
        self.compose_with_sensitivity(kind, q, sigma, steps, None)
    }

    pub fn compose_with_sensitivity(
        &mut self,
        kind: MechanismKind,
        q: f64,
        sigma: f64,
        steps: usize,
        sensitivity: Option<f64>,
    ) -> Result<()> {
        if steps == 0 {
            return Err(Error::Config("compose needs at least one step".into()));
        }
        self.per_step(q, sigma)?;
        let key = (kind, q.to_bits(), sigma.to_bits());
        match self.totals.iter_mut().find(|t| (t.0, t.1, t.2) == key) {
            Some(t) => t.3 += steps,
            None => self.totals.push((key.0, key.1, key.2, steps)),
        }
        self.rebuild_curve();
        let merge = |a: Option<f64>, b: Option<f64>, pick: fn(f64, f64) -> f64| match (a, b) {
            (Some(x), Some(y)) => Some(pick(x, y)),
            (x, y) => x.or(y),
        };
        match self.steps.last_mut() {
            Some(last) if last.kind == kind && last.q == q && last.sigma == sigma => {
                last.count += steps;
                last.sensitivity_min = merge(last.sensitivity_min, sensitivity, f64::min);
                last.sensitivity_max = merge(last.sensitivity_max, sensitivity, f64::max);
            }
            _ => self.steps.push(StepLogEntry {
                kind,
                q,
                sigma,
                count: steps,
                sensitivity_min: sensitivity,
                sensitivity_max: sensitivity,
            }),
        }
        Ok(())
    }

    pub fn to_dp(&self, delta: f64) -> Result<(f64, f64)> {
        to_dp(&self.curve, delta)
    }

    /// Serializable summary: per-order table, converted guarantee, step log.
    pub fn report(&self, delta: f64) -> Result<LedgerReport> {
        let (epsilon, order) = self.to_dp(delta)?;
        Ok(LedgerReport {
            orders: self.curve.orders.clone(),
            rdp: self.curve.epsilons.clone(),
            epsilon,
            delta,
            best_order: order,
            steps: self.steps.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub orders: Vec<f64>,
    pub rdp: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub best_order: f64,
    pub steps: Vec<StepLogEntry>,
}

/// How the primal and dual noise multipliers relate during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// One multiplier for both kinds of step.
    Shared,
    /// `sigma_d = ratio * sigma_p`.
    DualRatio(f64),
}

pub const SIGMA_FLOOR: f64 = 0.3;
pub const SIGMA_CEILING: f64 = 1e4;

/// Epsilon spent by a run with the given step counts and multipliers.
pub fn spent_epsilon(
    orders: &[f64],
    delta: f64,
    q_primal: f64,
    primal_steps: usize,
    dual_steps: usize,
    sigma_p: f64,
    sigma_d: f64,
) -> Result<f64> {
    let mut ledger = PrivacyLedger::new(orders.to_vec())?;
    if primal_steps > 0 {
        ledger.compose(MechanismKind::Primal, q_primal, sigma_p, primal_steps)?;
    }
    if dual_steps > 0 {
        ledger.compose(MechanismKind::Dual, 1.0, sigma_d, dual_steps)?;
    }
    Ok(ledger.to_dp(delta)?.0)
}

/// Finds `(sigma_p, sigma_d)` whose composed guarantee lands in
/// `[0.99 * target, target]`, searching the primal multiplier in
/// `[SIGMA_FLOOR, SIGMA_CEILING]`. When even the floor meets the target the
/// floor is returned.
pub fn calibrate_sigma(
    target_epsilon: f64,
    delta: f64,
    q_primal: f64,
    primal_steps: usize,
    dual_steps: usize,
    split: SplitPolicy,
) -> Result<(f64, f64)> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(Error::Config(format!("target epsilon {target_epsilon} must be finite and positive")));
    }
    let ratio = match split {
        SplitPolicy::Shared => 1.0,
        SplitPolicy::DualRatio(r) if r > 0.0 && r.is_finite() => r,
        SplitPolicy::DualRatio(r) => return Err(Error::Config(format!("dual ratio {r} must be positive"))),
    };
    let orders = default_orders();
    let eps = |s: f64| spent_epsilon(&orders, delta, q_primal, primal_steps, dual_steps, s, ratio * s);
    if eps(SIGMA_CEILING)? > target_epsilon {
        return Err(Error::Unattainable(format!(
            "epsilon {target_epsilon} needs a multiplier above {SIGMA_CEILING}"
        )));
    }
    if eps(SIGMA_FLOOR)? <= target_epsilon {
        return Ok((SIGMA_FLOOR, ratio * SIGMA_FLOOR));
    }
    // invariant: eps(lo) > target >= eps(hi)
    let (mut lo, mut hi) = (SIGMA_FLOOR.ln(), SIGMA_CEILING.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid.exp())?;
        if e > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
            if e >= 0.99 * target_epsilon {
                break;
            }
        }
    }
    let sigma = hi.exp();
    Ok((sigma, ratio * sigma))
}
