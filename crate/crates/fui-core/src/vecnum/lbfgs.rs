//! Ball-constrained quasi-Newton ascent.
//!
//! Maximizes an objective over an l2 ball by iterating
//! `w_{k+1} = w_k + alpha * H_k * grad(w_k)` from the ball center with
//! `H_0 = lambda * I`. `H` approximates the inverse Hessian of the negated
//! objective, kept positive definite by the standard two-sided rank update
//! on `s_k = w_{k+1} - w_k` and the negated gradient difference; the update
//! is skipped when the curvature product falls below 1e-12. Iteration stops
//! when a step shrinks below `tol`, when the next iterate would leave the
//! ball (the result is projected onto the boundary), or at `max_iter`.
//!
//! Two interchangeable representations of `H` are provided: an explicit
//! dense matrix (fine at desk scale) and a limited-memory two-loop recursion
//! over the most recent update pairs.

use super::{BallConstraint, ParamVector};
use crate::error::{Error, Result};

pub const CURVATURE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianMode {
    /// Explicit dense dim x dim inverse-Hessian approximation.
    Dense,
    /// Two-loop recursion over at most this many update pairs.
    Limited(usize),
}

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    /// Fixed step size alpha.
    pub step: f64,
    /// Convergence threshold tau on the step norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial scaling lambda of H_0 = lambda * I.
    pub init_scale: f64,
    pub mode: HessianMode,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            step: 0.1,
            tol: 1e-6,
            max_iter: 500,
            init_scale: 1.0,
            mode: HessianMode::Limited(10),
        }
    }
}

impl LbfgsOptions {
    fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidParam(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParam(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParam("max_iter must be >= 1".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidParam("init_scale must be > 0".into()));
        }
        if let HessianMode::Limited(0) = self.mode {
            return Err(Error::InvalidParam("limited memory must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Step norm fell below `tol`.
    Converged,
    /// The next iterate left the ball; the result was projected onto the
    /// boundary.
    BallExit,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct MaximizeOutcome {
    pub point: ParamVector,
    pub value: f64,
    pub termination: Termination,
    pub iterations: usize,
    /// Objective value at each accepted iterate, starting at the center.
    pub trace: Vec<f64>,
}

enum Hessian {
    Dense { h: Vec<f64>, dim: usize },
    Limited { pairs: Vec<(ParamVector, ParamVector, f64)>, cap: usize, lambda: f64 },
}

impl Hessian {
    fn new(mode: HessianMode, dim: usize, lambda: f64) -> Self {
        match mode {
            HessianMode::Dense => {
                let mut h = vec![0.0; dim * dim];
                for i in 0..dim {
                    h[i * dim + i] = lambda;
                }
                Hessian::Dense { h, dim }
            }
            HessianMode::Limited(cap) => Hessian::Limited { pairs: Vec::new(), cap, lambda },
        }
    }

    /// H * g.
    fn apply(&self, g: &ParamVector) -> ParamVector {
        match self {
            Hessian::Dense { h, dim } => {
                let gs = g.as_slice();
                let mut out = vec![0.0; *dim];
                for i in 0..*dim {
                    let row = &h[i * dim..(i + 1) * dim];
                    out[i] = row.iter().zip(gs).map(|(a, b)| a * b).sum();
                }
                ParamVector::from_vec(out).expect("finite matvec")
            }
            Hessian::Limited { pairs, lambda, .. } => {
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, u, rho) in pairs.iter().rev() {
                    let a = rho * s.dot(&q);
                    q.add_scaled(-a, u);
                    alphas.push(a);
                }
                let mut r = q.scale(*lambda);
                for ((s, u, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
                    let beta = rho * u.dot(&r);
                    r.add_scaled(a - beta, s);
                }
                r
            }
        }
    }

    /// Rank-two update with step `s` and negated gradient difference `u`;
    /// `curvature = u . s` must be positive.
    fn update(&mut self, s: &ParamVector, u: &ParamVector, curvature: f64) {
        let rho = 1.0 / curvature;
        match self {
            Hessian::Dense { h, dim } => {
                let d = *dim;
                let hu = {
                    let us = u.as_slice();
                    let mut out = vec![0.0; d];
                    for i in 0..d {
                        out[i] = h[i * d..(i + 1) * d].iter().zip(us).map(|(a, b)| a * b).sum();
                    }
                    out
                };
                let uhu: f64 = u.as_slice().iter().zip(&hu).map(|(a, b)| a * b).sum();
                let ss = s.as_slice();
                let coeff = rho * rho * uhu + rho;
                for i in 0..d {
                    for j in 0..d {
                        h[i * d + j] += coeff * ss[i] * ss[j] - rho * (ss[i] * hu[j] + hu[i] * ss[j]);
                    }
                }
            }
            Hessian::Limited { pairs, cap, .. } => {
                if pairs.len() == *cap {
                    pairs.remove(0);
                }
                pairs.push((s.clone(), u.clone(), rho));
            }
        }
    }
}

/// Maximize `objective` over `ball` starting from its center.
///
/// A zero gradient at the center (an exact stationary start, e.g. a
/// symmetric saddle) is escaped by probing coordinate directions for a
/// strict objective increase before giving up; a constant objective
/// therefore returns the center unchanged.
pub fn lbfgs_maximize<F, G>(
    objective: F,
    gradient: G,
    ball: &BallConstraint,
    opts: &LbfgsOptions,
) -> Result<MaximizeOutcome>
where
    F: Fn(&ParamVector) -> f64,
    G: Fn(&ParamVector) -> ParamVector,
{
    opts.validate()?;
    let dim = ball.center.dim();

    let eval_value = |w: &ParamVector, iter: usize| -> Result<f64> {
        let v = objective(w);
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "objective value", iteration: iter });
        }
        Ok(v)
    };
    let eval_grad = |w: &ParamVector, iter: usize| -> Result<ParamVector> {
        let g = gradient(w);
        if g.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: g.dim() });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { what: "gradient", iteration: iter });
        }
        Ok(g)
    };

    let mut w = ball.center.clone();
    let mut value = eval_value(&w, 0)?;
    let mut trace = vec![value];

    if ball.radius == 0.0 {
        return Ok(MaximizeOutcome {
            point: w,
            value,
            termination: Termination::Converged,
            iterations: 0,
            trace,
        });
    }

    let mut grad = eval_grad(&w, 0)?;
    if grad.norm() == 0.0 {
        // Stationary start: probe +/- each coordinate at a small offset and
        // move to the first strict improvement.
        let h = (ball.radius * 0.5).min(1e-3);
        let mut escaped = false;
        'probe: for j in 0..dim {
            for sign in [1.0, -1.0] {
                let mut cand = w.clone();
                let mut e = vec![0.0; dim];
                e[j] = sign * h;
                cand.add_scaled(1.0, &ParamVector::from_vec(e).expect("finite probe"));
                let cv = eval_value(&cand, 0)?;
                if cv > value {
                    w = cand;
                    value = cv;
                    grad = eval_grad(&w, 0)?;
                    trace.push(value);
                    escaped = true;
                    break 'probe;
                }
            }
        }
        if !escaped {
            return Ok(MaximizeOutcome {
                point: w,
                value,
                termination: Termination::Converged,
                iterations: 0,
                trace,
            });
        }
    }

    let mut hess = Hessian::new(opts.mode, dim, opts.init_scale);

    for k in 0..opts.max_iter {
        let direction = hess.apply(&grad);
        let mut next = w.clone();
        next.add_scaled(opts.step, &direction);
        if !next.is_finite() {
            return Err(Error::NonFinite { what: "iterate", iteration: k });
        }

        if next.dist(&ball.center) > ball.radius {
            let point = ball.project(&next);
            assert!(point.dist(&ball.center) <= ball.radius + 1e-9);
            let value = eval_value(&point, k)?;
            trace.push(value);
            return Ok(MaximizeOutcome {
                point,
                value,
                termination: Termination::BallExit,
                iterations: k + 1,
                trace,
            });
        }

        let next_value = eval_value(&next, k)?;
        let next_grad = eval_grad(&next, k)?;
        let step_vec = next.sub(&w);
        let step_norm = step_vec.norm();

        assert!(next.dist(&ball.center) <= ball.radius + 1e-9);
        w = next;
        value = next_value;
        trace.push(value);

        if step_norm <= opts.tol {
            return Ok(MaximizeOutcome {
                point: w,
                value,
                termination: Termination::Converged,
                iterations: k + 1,
                trace,
            });
        }

        // u = -(grad_{k+1} - grad_k); update only on positive curvature.
        let mut u = grad.clone();
        u.add_scaled(-1.0, &next_grad);
        let curvature = u.dot(&step_vec);
        if curvature >= CURVATURE_EPS {
            hess.update(&step_vec, &u, curvature);
        }
        grad = next_grad;
    }

    Ok(MaximizeOutcome {
        point: w,
        value,
        termination: Termination::MaxIter,
        iterations: opts.max_iter,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::from_vec(values.to_vec()).unwrap()
    }

    fn opts(mode: HessianMode) -> LbfgsOptions {
        LbfgsOptions { mode, ..LbfgsOptions::default() }
    }

    #[test]
    fn constant_objective_returns_center() {
        let ball = BallConstraint::new(pv(&[0.3, -0.7]), 2.0).unwrap();
        let out = lbfgs_maximize(|_| 4.2, |_| ParamVector::zeros(2), &ball, &LbfgsOptions::default())
            .unwrap();
        assert_eq!(out.point, ball.center);
        assert_eq!(out.termination, Termination::Converged);
    }

    #[test]
    fn convex_quadratic_max_on_boundary() {
        // F(w) = w^2 on [-1, 1]: the gradient vanishes at the center, the
        // probe escapes, and the maximizer sits on the ball boundary.
        for mode in [HessianMode::Dense, HessianMode::Limited(10)] {
            let ball = BallConstraint::new(pv(&[0.0]), 1.0).unwrap();
            let out = lbfgs_maximize(
                |w| w[0] * w[0],
                |w| pv(&[2.0 * w[0]]),
                &ball,
                &opts(mode),
            )
            .unwrap();
            assert!((out.point[0].abs() - 1.0).abs() < 1e-12, "{:?}", out.point);
            assert!((out.value - 1.0).abs() < 1e-12);
            assert_eq!(out.termination, Termination::BallExit);
        }
    }

    #[test]
    fn concave_quadratic_max_at_interval_end() {
        // F(w) = -(w-2)^2 on [-1, 1] has its maximum at w = 1 with F = -1.
        for mode in [HessianMode::Dense, HessianMode::Limited(10)] {
            let ball = BallConstraint::new(pv(&[0.0]), 1.0).unwrap();
            let out = lbfgs_maximize(
                |w| -(w[0] - 2.0) * (w[0] - 2.0),
                |w| pv(&[-2.0 * (w[0] - 2.0)]),
                &ball,
                &opts(mode),
            )
            .unwrap();
            assert!((out.point[0] - 1.0).abs() < 1e-12, "{:?}", out.point);
            assert!((out.value + 1.0).abs() < 1e-12);
            assert_eq!(out.termination, Termination::BallExit);
        }
    }

    #[test]
    fn interior_concave_max_converges() {
        // Maximum of -(w - c)' diag(1, 3) (w - c) at c inside a wide ball.
        for mode in [HessianMode::Dense, HessianMode::Limited(10)] {
            let ball = BallConstraint::new(pv(&[0.0, 0.0]), 10.0).unwrap();
            let out = lbfgs_maximize(
                |w| -((w[0] - 1.0).powi(2) + 3.0 * (w[1] + 0.5).powi(2)),
                |w| pv(&[-2.0 * (w[0] - 1.0), -6.0 * (w[1] + 0.5)]),
                &ball,
                &opts(mode),
            )
            .unwrap();
            assert_eq!(out.termination, Termination::Converged);
            assert!((out.point[0] - 1.0).abs() < 1e-4);
            assert!((out.point[1] + 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn monotone_ascent_on_smooth_concave_objectives() {
        // With alpha below the inverse smoothness constant, every accepted
        // step must not decrease the objective (1e-9 slack).
        use rand::Rng;
        let mut rng = crate::vecnum::RngStream::new(55).child("ascent").rng();
        for case in 0..20 {
            let dim = rng.gen_range(1..6);
            let lambdas: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let smoothness = 2.0 * lambdas.iter().cloned().fold(0.0, f64::max);
            let l2 = lambdas.clone();
            let t2 = target.clone();
            let objective = move |w: &ParamVector| -> f64 {
                -w.as_slice()
                    .iter()
                    .zip(&l2)
                    .zip(&t2)
                    .map(|((wi, li), ti)| li * (wi - ti).powi(2))
                    .sum::<f64>()
            };
            let l3 = lambdas.clone();
            let t3 = target.clone();
            let gradient = move |w: &ParamVector| -> ParamVector {
                ParamVector::from_vec(
                    w.as_slice()
                        .iter()
                        .zip(&l3)
                        .zip(&t3)
                        .map(|((wi, li), ti)| -2.0 * li * (wi - ti))
                        .collect(),
                )
                .unwrap()
            };
            let ball = BallConstraint::new(pv(&center), 5.0).unwrap();
            let o = LbfgsOptions {
                step: 0.5 / smoothness,
                mode: if case % 2 == 0 { HessianMode::Dense } else { HessianMode::Limited(10) },
                ..LbfgsOptions::default()
            };
            let out = lbfgs_maximize(objective, gradient, &ball, &o).unwrap();
            for pair in out.trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "descent step in trace: {pair:?}");
            }
        }
    }

    type Objective = Box<dyn Fn(&ParamVector) -> f64>;
    type Gradient = Box<dyn Fn(&ParamVector) -> ParamVector>;

    #[test]
    fn dense_and_limited_agree_on_termination_status() {
        // The limited-memory recursion must reach the same status as the
        // dense update across a small suite of objectives.
        let cases: Vec<(Objective, Gradient, ParamVector, f64)> = vec![
            (Box::new(|_| 1.0), Box::new(|_| ParamVector::zeros(3)), ParamVector::zeros(3), 1.0),
            (
                Box::new(|w: &ParamVector| w[0] * w[0]),
                Box::new(|w: &ParamVector| ParamVector::from_vec(vec![2.0 * w[0]]).unwrap()),
                ParamVector::zeros(1),
                1.0,
            ),
            (
                Box::new(|w: &ParamVector| -(w[0] - 2.0) * (w[0] - 2.0)),
                Box::new(|w: &ParamVector| ParamVector::from_vec(vec![-2.0 * (w[0] - 2.0)]).unwrap()),
                ParamVector::zeros(1),
                1.0,
            ),
            (
                Box::new(|w: &ParamVector| -((w[0] - 1.0).powi(2) + 3.0 * (w[1] + 0.5).powi(2))),
                Box::new(|w: &ParamVector| {
                    ParamVector::from_vec(vec![-2.0 * (w[0] - 1.0), -6.0 * (w[1] + 0.5)]).unwrap()
                }),
                ParamVector::zeros(2),
                10.0,
            ),
        ];
        for (f, g, center, radius) in cases {
            let ball = BallConstraint::new(center, radius).unwrap();
            let dense = lbfgs_maximize(&f, &g, &ball, &opts(HessianMode::Dense)).unwrap();
            let limited = lbfgs_maximize(&f, &g, &ball, &opts(HessianMode::Limited(10))).unwrap();
            assert_eq!(dense.termination, limited.termination);
        }
    }

    #[test]
    fn non_finite_objective_reports_iteration() {
        let ball = BallConstraint::new(pv(&[0.5]), 1.0).unwrap();
        let err = lbfgs_maximize(
            |w| if w[0] > 0.6 { f64::NAN } else { w[0] },
            |_| pv(&[1.0]),
            &ball,
            &LbfgsOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFinite { what, .. } => assert_eq!(what, "objective value"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn never_leaves_the_ball() {
        // Steep linear objective forces a ball exit; the result is projected.
        let ball = BallConstraint::new(pv(&[1.0, -2.0]), 0.25).unwrap();
        let out = lbfgs_maximize(
            |w| 100.0 * (w[0] + w[1]),
            |_| pv(&[100.0, 100.0]),
            &ball,
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(out.termination, Termination::BallExit);
        assert!(out.point.dist(&ball.center) <= 0.25 + 1e-9);
        assert!((out.point.dist(&ball.center) - 0.25).abs() < 1e-9);
    }
}
