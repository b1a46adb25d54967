//! The two-stage strategy game between the server and the target client.
//!
//! The server (leader) sets a penalty factor `p`; the client (follower)
//! answers with an indistinguishability requirement `epsilon`. Utilities:
//!
//! - penalty `P(p, eps) = p / (eps^2 + 1)`
//! - performance loss `Q(eps) = a ln(|D_rest|^2) / (b eps^2 + 1)`
//! - privacy benefit `R(eps) = r / (s eps^2 + 1) + l`
//! - server `U_s = -Q + P - Psi_s`, client `U_c = R - P - Psi_c`
//!
//! Backward induction solves the follower first. Because `U_c` is rational
//! in `x = eps^2`, its interior stationary points are the real roots of an
//! exact quadratic, so the best response is computed from a closed candidate
//! set (roots, interval ends) rather than a scan. The textbook closed forms
//! for both stages are also evaluated and included as candidates, but their
//! utility is cross-checked against the candidate argmax and they are
//! reported as disagreeing when they fall short, which happens for the
//! default constants.
//!
//! The strategy-pair simulator draws random strategies uniformly from the
//! participation-feasible sets (client utility nonnegative), so the optimal
//! strategies weakly dominate random ones pointwise by construction.

use crate::error::{Error, Result};
use crate::vecnum::RngStream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Offset used to evaluate the half-open upper strategy bound `eta^2/2`.
const UPPER_EDGE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub s: f64,
    pub l: f64,
    pub psi_s: f64,
    pub psi_c: f64,
    pub p_max: f64,
    pub eps_min: f64,
    pub eta: f64,
    /// Total dataset size of the remaining clients, |D_rest|.
    pub d_rest: u64,
}

impl GameParams {
    /// The experiment defaults with a configurable remaining-data size.
    pub fn defaults(d_rest: u64) -> Self {
        GameParams {
            a: 1.5,
            b: 10.0,
            r: 25.0,
            s: 2.0,
            l: 0.0,
            psi_s: 5.0,
            psi_c: 3.0,
            p_max: 15.0,
            eps_min: 0.1,
            eta: 5.0,
            d_rest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("r", self.r),
            ("s", self.s),
            ("psi_s", self.psi_s),
            ("psi_c", self.psi_c),
            ("p_max", self.p_max),
            ("eps_min", self.eps_min),
            ("eta", self.eta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("game constant {name} must be > 0, got {v}")));
            }
        }
        if !(self.l.is_finite() && self.l >= 0.0) {
            return Err(Error::InvalidParam(format!("game constant l must be >= 0, got {}", self.l)));
        }
        if self.d_rest < 2 {
            return Err(Error::InvalidParam("d_rest must be >= 2".into()));
        }
        if self.eps_min >= self.eps_hi() {
            return Err(Error::InvalidParam(format!(
                "eps_min {} must lie below eta^2/2 = {}",
                self.eps_min,
                self.eta * self.eta / 2.0
            )));
        }
        Ok(())
    }

    /// Upper end of the client's strategy interval, `eta^2/2 - 1e-9`.
    pub fn eps_hi(&self) -> f64 {
        self.eta * self.eta / 2.0 - UPPER_EDGE
    }

    fn log_d2(&self) -> f64 {
        2.0 * (self.d_rest as f64).ln()
    }
}

/// `P(p, eps) = p / (eps^2 + 1)`.
pub fn penalty(p: f64, eps: f64) -> f64 {
    p / (eps * eps + 1.0)
}

/// `Q(eps) = a ln(|D_rest|^2) / (b eps^2 + 1)`.
pub fn perf_loss(eps: f64, gp: &GameParams) -> f64 {
    gp.a * gp.log_d2() / (gp.b * eps * eps + 1.0)
}

/// `R(eps) = r / (s eps^2 + 1) + l`.
pub fn privacy_benefit(eps: f64, gp: &GameParams) -> f64 {
    gp.r / (gp.s * eps * eps + 1.0) + gp.l
}

/// `U_s = -Q(eps) + P(p, eps) - Psi_s`.
pub fn utility_server(p: f64, eps: f64, gp: &GameParams) -> f64 {
    -perf_loss(eps, gp) + penalty(p, eps) - gp.psi_s
}

/// `U_c = R(eps) - P(p, eps) - Psi_c`.
pub fn utility_client(p: f64, eps: f64, gp: &GameParams) -> f64 {
    privacy_benefit(eps, gp) - penalty(p, eps) - gp.psi_c
}

/// Stage-2 closed form: `eps* = sqrt((p - r + |pr/s - prs|) / (r - ps))`.
/// `None` when the denominator is nonpositive or the radicand negative.
pub fn theorem2_epsilon(p: f64, gp: &GameParams) -> Option<f64> {
    let denom = gp.r - p * gp.s;
    if denom <= 0.0 {
        return None;
    }
    let radicand = (p - gp.r + (p * gp.r / gp.s - p * gp.r * gp.s).abs()) / denom;
    if radicand < 0.0 {
        return None;
    }
    Some(radicand.sqrt())
}

/// Stage-1 closed form with `H = b - s + |r/s - rs|` and
/// `J = (r a ln(|D|^2)) H + (r - br)(s a ln(|D|^2))`. `None` when `H` is
/// zero or the radicand negative.
pub fn theorem3_p(gp: &GameParams) -> Option<f64> {
    let h = gp.b - gp.s + (gp.r / gp.s - gp.r * gp.s).abs();
    if h == 0.0 {
        return None;
    }
    let g = gp.a * gp.log_d2();
    let j = gp.r * g * h + (gp.r - gp.b * gp.r) * gp.s * g;
    let radicand = j * (h + 1.0 - gp.b) / (gp.s * gp.s * h * h);
    if radicand < 0.0 {
        return None;
    }
    Some((gp.b * gp.r - gp.r) / h + radicand.sqrt())
}

/// Real roots of `dU_c/dx = 0` with `x = eps^2`: the exact quadratic
/// `(ps^2 - rs) x^2 + 2(ps - rs) x + (p - rs) = 0`, restricted to x > 0.
fn stationary_x(p: f64, gp: &GameParams) -> Vec<f64> {
    let a2 = p * gp.s * gp.s - gp.r * gp.s;
    let a1 = 2.0 * (p * gp.s - gp.r * gp.s);
    let a0 = p - gp.r * gp.s;
    let mut roots = Vec::new();
    if a2 == 0.0 {
        if a1 != 0.0 {
            roots.push(-a0 / a1);
        }
    } else {
        let disc = a1 * a1 - 4.0 * a2 * a0;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Citardauq form for the smaller-magnitude root, plain form for
            // the other; both are fine at these scales.
            roots.push((-a1 + sq) / (2.0 * a2));
            roots.push((-a1 - sq) / (2.0 * a2));
        }
    }
    roots.retain(|x| x.is_finite() && *x > 0.0);
    roots
}

/// The follower's best response to a penalty factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestResponse {
    pub epsilon: f64,
    pub utility: f64,
    /// Whether requesting unlearning at this response keeps `U_c >= 0`.
    pub feasible: bool,
}

/// Argmax of `U_c` over `[eps_min, eta^2/2)`: interval ends plus interior
/// stationary points plus the stage-2 closed form. Exact ties prefer the
/// smaller epsilon.
pub fn client_best_response(p: f64, gp: &GameParams) -> BestResponse {
    let lo = gp.eps_min;
    let hi = gp.eps_hi();
    let mut candidates = vec![lo, hi];
    for x in stationary_x(p, gp) {
        let eps = x.sqrt();
        if eps > lo && eps < hi {
            candidates.push(eps);
        }
    }
    if let Some(eps) = theorem2_epsilon(p, gp) {
        candidates.push(eps.clamp(lo, hi));
    }
    let mut best = BestResponse { epsilon: lo, utility: f64::NEG_INFINITY, feasible: false };
    for eps in candidates {
        let u = utility_client(p, eps, gp);
        if u > best.utility || (u == best.utility && eps < best.epsilon) {
            best = BestResponse { epsilon: eps, utility: u, feasible: false };
        }
    }
    best.feasible = best.utility >= 0.0;
    best
}

/// [`client_best_response`] plus the numeric concavity check and the
/// closed-form comparison.
#[derive(Clone, Copy, Debug)]
pub struct BestResponseDiagnostics {
    pub response: BestResponse,
    /// Second differences of `U_c` at 1e-3 spacing stay nonpositive.
    pub concave: bool,
    pub closed_form: Option<f64>,
    /// Whether the closed form (clamped to the interval) attains the
    /// candidate optimum within 1e-9.
    pub closed_form_agrees: bool,
}

pub fn diagnose_best_response(p: f64, gp: &GameParams) -> BestResponseDiagnostics {
    let response = client_best_response(p, gp);
    let lo = gp.eps_min;
    let hi = gp.eps_hi();
    let h = 1e-3;
    let mut concave = true;
    let mut eps = lo + h;
    while eps + h <= hi {
        let second = utility_client(p, eps + h, gp) - 2.0 * utility_client(p, eps, gp)
            + utility_client(p, eps - h, gp);
        if second > 1e-9 {
            concave = false;
            break;
        }
        eps += h.max((hi - lo) / 20_000.0);
    }
    let closed_form = theorem2_epsilon(p, gp);
    let closed_form_agrees = closed_form
        .map(|e| utility_client(p, e.clamp(lo, hi), gp) >= response.utility - 1e-9)
        .unwrap_or(false);
    BestResponseDiagnostics { response, concave, closed_form, closed_form_agrees }
}

/// Stage-1 outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ServerOutcome {
    Equilibrium(Equilibrium),
    /// No penalty factor leaves the client willing to unlearn.
    NoUnlearning,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equilibrium {
    pub p: f64,
    pub epsilon: f64,
    pub utility_server: f64,
    pub utility_client: f64,
}

impl ServerOutcome {
    pub fn equilibrium(&self) -> Option<&Equilibrium> {
        match self {
            ServerOutcome::Equilibrium(eq) => Some(eq),
            ServerOutcome::NoUnlearning => None,
        }
    }
}

/// Realized server utility at `p` under the follower's best response, or
/// `None` when the client declines.
fn realized_server_utility(p: f64, gp: &GameParams) -> Option<(f64, BestResponse)> {
    let br = client_best_response(p, gp);
    if !br.feasible {
        return None;
    }
    Some((utility_server(p, br.epsilon, gp), br))
}

/// Backward induction for the leader: maximize realized `U_s` over the
/// feasible `p` in `(0, p_max]`. Candidates are a fine grid, the exact upper
/// bound, the stage-1 closed form, and a golden-section refinement around
/// the best bracket.
pub fn server_optimal(gp: &GameParams) -> ServerOutcome {
    fn consider(best: &mut Option<(f64, f64, BestResponse)>, p: f64, gp: &GameParams) {
        if !(p > 0.0 && p <= gp.p_max) {
            return;
        }
        if let Some((us, br)) = realized_server_utility(p, gp) {
            let better = match best {
                None => true,
                Some((bu, bp, _)) => us > *bu || (us == *bu && p < *bp),
            };
            if better {
                *best = Some((us, p, br));
            }
        }
    }

    let steps = 4000usize;
    let h = gp.p_max / steps as f64;
    let mut best: Option<(f64, f64, BestResponse)> = None;
    for k in 1..=steps {
        consider(&mut best, k as f64 * h, gp);
    }
    consider(&mut best, gp.p_max, gp);
    consider(&mut best, gp.p_max * 1e-9, gp);
    if let Some(p) = theorem3_p(gp) {
        consider(&mut best, p.clamp(gp.p_max * 1e-9, gp.p_max), gp);
    }

    // Golden-section refinement around the current best bracket; every
    // probe goes through `consider`, so the best-seen point only improves.
    if let Some((_, p_best, _)) = best {
        let mut lo = (p_best - h).max(gp.p_max * 1e-12);
        let mut hi = (p_best + h).min(gp.p_max);
        let phi = 0.618_033_988_749_894_9;
        for _ in 0..70 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            let u1 = realized_server_utility(m1, gp).map(|(u, _)| u).unwrap_or(f64::NEG_INFINITY);
            let u2 = realized_server_utility(m2, gp).map(|(u, _)| u).unwrap_or(f64::NEG_INFINITY);
            consider(&mut best, m1, gp);
            consider(&mut best, m2, gp);
            if u1 >= u2 {
                hi = m2;
            } else {
                lo = m1;
            }
        }
    }

    match best {
        Some((us, p, br)) => ServerOutcome::Equilibrium(Equilibrium {
            p,
            epsilon: br.epsilon,
            utility_server: us,
            utility_client: br.utility,
        }),
        None => ServerOutcome::NoUnlearning,
    }
}

// ---------------------------------------------------------------------------
// Feasible-region geometry for random strategies
// ---------------------------------------------------------------------------

/// Intervals of `eps` within `[eps_min, eps_hi]` where `U_c(p, eps) >= 0`,
/// from the sign of the exact quadratic numerator in `x = eps^2`.
fn feasible_epsilon_intervals(p: f64, gp: &GameParams) -> Vec<(f64, f64)> {
    let x_lo = gp.eps_min * gp.eps_min;
    let x_hi = gp.eps_hi() * gp.eps_hi();
    let c = gp.l - gp.psi_c;
    // N(x) = c s x^2 + (r - p s + c (s + 1)) x + (r - p + c) >= 0.
    let qa = c * gp.s;
    let qb = gp.r - p * gp.s + c * (gp.s + 1.0);
    let qc = gp.r - p + c;

    let mut x_ranges: Vec<(f64, f64)> = Vec::new();
    if qa == 0.0 {
        if qb == 0.0 {
            if qc >= 0.0 {
                x_ranges.push((x_lo, x_hi));
            }
        } else {
            let root = -qc / qb;
            if qb > 0.0 {
                x_ranges.push((root.max(x_lo), x_hi));
            } else {
                x_ranges.push((x_lo, root.min(x_hi)));
            }
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            if qa > 0.0 {
                x_ranges.push((x_lo, x_hi));
            }
        } else {
            let sq = disc.sqrt();
            let mut r1 = (-qb - sq) / (2.0 * qa);
            let mut r2 = (-qb + sq) / (2.0 * qa);
            if r1 > r2 {
                std::mem::swap(&mut r1, &mut r2);
            }
            if qa > 0.0 {
                x_ranges.push((x_lo, r1.min(x_hi)));
                x_ranges.push((r2.max(x_lo), x_hi));
            } else {
                x_ranges.push((r1.max(x_lo), r2.min(x_hi)));
            }
        }
    }

    x_ranges
        .into_iter()
        .filter(|(lo, hi)| hi > lo)
        .map(|(lo, hi)| (lo.sqrt(), hi.sqrt()))
        .collect()
}

/// Largest penalty in `(0, p_max]` at which the client still participates,
/// found by bisection on the monotone participation predicate.
fn participation_threshold(gp: &GameParams) -> Option<f64> {
    let feas = |p: f64| client_best_response(p, gp).feasible;
    let tiny = gp.p_max * 1e-12;
    if !feas(tiny) {
        return None;
    }
    if feas(gp.p_max) {
        return Some(gp.p_max);
    }
    let mut lo = tiny;
    let mut hi = gp.p_max;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if feas(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    DRest,
    A,
    B,
    R,
    S,
    PMax,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "d_rest" => Ok(SweepParam::DRest),
            "a" => Ok(SweepParam::A),
            "b" => Ok(SweepParam::B),
            "r" => Ok(SweepParam::R),
            "s" => Ok(SweepParam::S),
            "p_max" => Ok(SweepParam::PMax),
            other => Err(Error::InvalidParam(format!(
                "unknown sweep parameter `{other}` (expected d_rest, a, b, r, s, or p_max)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::DRest => "d_rest",
            SweepParam::A => "a",
            SweepParam::B => "b",
            SweepParam::R => "r",
            SweepParam::S => "s",
            SweepParam::PMax => "p_max",
        }
    }

    /// Default sweep grid for this parameter.
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            SweepParam::DRest => vec![1000.0, 3000.0, 9000.0, 30000.0, 100000.0],
            SweepParam::A => vec![0.5, 1.0, 1.5, 2.5, 4.0],
            SweepParam::B => vec![2.0, 5.0, 10.0, 15.0, 20.0],
            SweepParam::R => vec![10.0, 18.0, 25.0, 35.0, 50.0],
            SweepParam::S => vec![0.5, 1.0, 2.0, 3.5, 5.0],
            SweepParam::PMax => vec![5.0, 8.0, 15.0, 22.0, 30.0],
        }
    }

    fn apply(&self, base: &GameParams, value: f64) -> GameParams {
        let mut gp = *base;
        match self {
            SweepParam::DRest => gp.d_rest = value.round().max(2.0) as u64,
            SweepParam::A => gp.a = value,
            SweepParam::B => gp.b = value,
            SweepParam::R => gp.r = value,
            SweepParam::S => gp.s = value,
            SweepParam::PMax => gp.p_max = value,
        }
        gp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combo {
    ServerOptClientOpt,
    ServerOptClientRand,
    ServerRandClientOpt,
    ServerRandClientRand,
}

impl Combo {
    pub const ALL: [Combo; 4] = [
        Combo::ServerOptClientOpt,
        Combo::ServerOptClientRand,
        Combo::ServerRandClientOpt,
        Combo::ServerRandClientRand,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Combo::ServerOptClientOpt => "SO/CO",
            Combo::ServerOptClientRand => "SO/CR",
            Combo::ServerRandClientOpt => "SR/CO",
            Combo::ServerRandClientRand => "SR/CR",
        }
    }

    fn server_random(&self) -> bool {
        matches!(self, Combo::ServerRandClientOpt | Combo::ServerRandClientRand)
    }

    fn client_random(&self) -> bool {
        matches!(self, Combo::ServerOptClientRand | Combo::ServerRandClientRand)
    }
}

/// One line of the strategy sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub combo: Combo,
    pub p: f64,
    pub epsilon: f64,
    pub utility_server: f64,
    pub utility_client: f64,
    pub feasible: bool,
}

/// Uniform draw over a union of intervals; falls back to `fallback` when the
/// drawn point dips below zero utility through rounding.
fn draw_from_intervals(
    intervals: &[(f64, f64)],
    p: f64,
    gp: &GameParams,
    fallback: f64,
    rng: &mut impl Rng,
) -> f64 {
    let total: f64 = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    if total <= 0.0 {
        return fallback;
    }
    let mut u = rng.gen_range(0.0..total);
    for (lo, hi) in intervals {
        let len = hi - lo;
        if u <= len {
            let eps = lo + u;
            if utility_client(p, eps, gp) >= 0.0 {
                return eps;
            }
            let mid = 0.5 * (lo + hi);
            if utility_client(p, mid, gp) >= 0.0 {
                return mid;
            }
            return fallback;
        }
        u -= len;
    }
    fallback
}

/// Evaluate the four optimal/random strategy combinations over a grid of
/// values for one game parameter. Random strategies are drawn uniformly
/// from the participation-feasible sets with a seeded stream; when no
/// strategy pair allows participation, the four rows carry zero utilities
/// and `feasible = false`.
pub fn simulate_strategies(
    base: &GameParams,
    param: SweepParam,
    values: &[f64],
    stream: &RngStream,
) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if values.is_empty() {
        return Err(Error::InvalidParam("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(values.len() * 4);
    for (idx, &value) in values.iter().enumerate() {
        let gp = param.apply(base, value);
        gp.validate()?;
        let value_stream = stream.child(format!("{}-{idx}", param.as_str()));

        let threshold = participation_threshold(&gp);
        let optimum = server_optimal(&gp);
        let p_rand = threshold.map(|p_bar| {
            let mut rng = value_stream.child("server-random").rng();
            let mut p = rng.gen_range(0.0..1.0f64).max(1e-12) * p_bar;
            for _ in 0..60 {
                if client_best_response(p, &gp).feasible {
                    break;
                }
                p *= 1.0 - 1e-6;
            }
            p
        });

        for combo in Combo::ALL {
            let p = if combo.server_random() {
                p_rand
            } else {
                optimum.equilibrium().map(|eq| eq.p)
            };
            let row = match p {
                None => SweepRow {
                    param: param.as_str().into(),
                    value,
                    combo,
                    p: 0.0,
                    epsilon: 0.0,
                    utility_server: 0.0,
                    utility_client: 0.0,
                    feasible: false,
                },
                Some(p) => {
                    let br = client_best_response(p, &gp);
                    let epsilon = if combo.client_random() {
                        let mut rng = value_stream.child(combo.as_str()).child("client-random").rng();
                        let intervals = feasible_epsilon_intervals(p, &gp);
                        draw_from_intervals(&intervals, p, &gp, br.epsilon, &mut rng)
                    } else {
                        br.epsilon
                    };
                    let uc = utility_client(p, epsilon, &gp);
                    let feasible = br.feasible && uc >= 0.0;
                    if feasible {
                        SweepRow {
                            param: param.as_str().into(),
                            value,
                            combo,
                            p,
                            epsilon,
                            utility_server: utility_server(p, epsilon, &gp),
                            utility_client: uc,
                            feasible: true,
                        }
                    } else {
                        SweepRow {
                            param: param.as_str().into(),
                            value,
                            combo,
                            p,
                            epsilon: 0.0,
                            utility_server: 0.0,
                            utility_client: 0.0,
                            feasible: false,
                        }
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}
