//! Online approximate gradient: Euler-discretized descent
//! `u <- u - step * eps * Pi_hat^T grad_y phi(Pi u + w)` run against the true
//! plant, plus the tracking-cost variant that realizes a PI controller.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, identity, DEF_TOL};

/// Output cost. The static kinds are strictly convex quadratics.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// `(y - y_ref)^T Q (y - y_ref) / 2` with `Q` symmetric positive definite.
    Quadratic { q: DMatrix<f64>, y_ref: DVector<f64> },
    /// `sum_i y_i^2`.
    SumOfSquares,
    /// Time-varying `c1/2 |r_t - y|^2 + c2/2 |dr_t - dy|^2`, with derivatives
    /// taken as backward differences over `step`. The reference is held at its
    /// last value past the end of the record.
    Tracking {
        c1: f64,
        c2: f64,
        reference: Vec<DVector<f64>>,
        step: f64,
    },
}

impl CostFunction {
    pub fn quadratic(q: DMatrix<f64>, y_ref: DVector<f64>) -> Result<Self> {
        if !q.is_square() || q.nrows() != y_ref.len() {
            return Err(Error::DimensionMismatch(format!(
                "Q is {:?} but y_ref has length {}",
                q.shape(),
                y_ref.len()
            )));
        }
        let q = linalg::symmetrize(&q);
        let (lo, _) = linalg::sym_eig_range(&q);
        if lo <= DEF_TOL * linalg::spectral_norm(&q) {
            return Err(Error::NotPositiveDefinite("cost weight Q must be positive definite".into()));
        }
        Ok(CostFunction::Quadratic { q, y_ref })
    }

    pub fn tracking(c1: f64, c2: f64, reference: Vec<DVector<f64>>, step: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 >= 0.0 && step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tracking cost needs c1 > 0, c2 >= 0, step > 0 (got {c1}, {c2}, {step})"
            )));
        }
        if reference.is_empty() {
            return Err(Error::InvalidParameter("tracking reference is empty".into()));
        }
        Ok(CostFunction::Tracking { c1, c2, reference, step })
    }

    pub fn is_static(&self) -> bool {
        !matches!(self, CostFunction::Tracking { .. })
    }

    /// Constant Hessian of a static cost.
    pub fn hessian(&self, n: usize) -> Option<DMatrix<f64>> {
        match self {
            CostFunction::Quadratic { q, .. } => Some(q.clone()),
            CostFunction::SumOfSquares => Some(identity(n) * 2.0),
            CostFunction::Tracking { .. } => None,
        }
    }

    /// Unconstrained minimizer over `y` of a static cost.
    pub fn minimizer(&self, n: usize) -> Option<DVector<f64>> {
        match self {
            CostFunction::Quadratic { y_ref, .. } => Some(y_ref.clone()),
            CostFunction::SumOfSquares => Some(DVector::zeros(n)),
            CostFunction::Tracking { .. } => None,
        }
    }

    /// Value of a static cost. Panics for the tracking kind.
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match self {
            CostFunction::Quadratic { q, y_ref } => {
                let e = y - y_ref;
                0.5 * e.dot(&(q * &e))
            }
            CostFunction::SumOfSquares => y.norm_squared(),
            CostFunction::Tracking { .. } => panic!("tracking cost needs a time index; use value_at"),
        }
    }

    /// Gradient of a static cost. Panics for the tracking kind.
    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            CostFunction::Quadratic { q, y_ref } => q * (y - y_ref),
            CostFunction::SumOfSquares => y * 2.0,
            CostFunction::Tracking { .. } => panic!("tracking cost needs a time index; use gradient_at"),
        }
    }

    fn reference_at(reference: &[DVector<f64>], t: usize) -> &DVector<f64> {
        &reference[t.min(reference.len() - 1)]
    }

    /// Reference and its backward-difference rate at time `t`.
    pub fn reference_state(&self, t: usize) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            CostFunction::Tracking { reference, step, .. } => {
                let r = Self::reference_at(reference, t).clone();
                let r_prev = Self::reference_at(reference, t.saturating_sub(1));
                let r_dot = (&r - r_prev) / *step;
                Some((r, r_dot))
            }
            _ => None,
        }
    }

    /// Tracking cost as a function of the output and its rate at time `t`.
    pub fn value_at(&self, t: usize, y: &DVector<f64>, y_dot: &DVector<f64>) -> f64 {
        match self {
            CostFunction::Tracking { c1, c2, .. } => {
                let (r, r_dot) = self.reference_state(t).expect("tracking");
                0.5 * c1 * (r - y).norm_squared() + 0.5 * c2 * (r_dot - y_dot).norm_squared()
            }
            _ => self.value(y),
        }
    }

    /// Partial gradients `(d phi / d y, d phi / d y_dot)` at time `t`.
    pub fn partials_at(&self, t: usize, y: &DVector<f64>, y_dot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self {
            CostFunction::Tracking { c1, c2, .. } => {
                let (r, r_dot) = self.reference_state(t).expect("tracking");
                ((r - y) * -*c1, (r_dot - y_dot) * -*c2)
            }
            _ => (self.gradient(y), DVector::zeros(y.len())),
        }
    }

    /// Output gradient used by the optimizer: `-c1 (r - y) - c2 (dr - dy)`.
    pub fn gradient_at(&self, t: usize, y: &DVector<f64>, y_dot: &DVector<f64>) -> DVector<f64> {
        let (gy, gdy) = self.partials_at(t, y, y_dot);
        gy + gdy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OagConfig {
    /// Gain `eps` of the continuous flow.
    pub eps: f64,
    /// Euler step.
    pub step: f64,
    pub u0: DVector<f64>,
    /// Constant disturbance during optimization.
    pub w: DVector<f64>,
    pub max_iters: usize,
    /// Iterates with `|u|_inf` above this are declared divergent.
    pub div_bound: f64,
    /// Record every `record_stride`-th iterate (first and last always kept).
    pub record_stride: usize,
}

impl OagConfig {
    pub fn new(u0: DVector<f64>, w: DVector<f64>) -> Self {
        Self {
            eps: 1.0,
            step: 1e-3,
            u0,
            w,
            max_iters: 1_000_000,
            div_bound: 1e6,
            record_stride: 1,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.u0.len() != n || self.w.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "u0 and w must have length {n} (got {} and {})",
                self.u0.len(),
                self.w.len()
            )));
        }
        if !(self.eps > 0.0 && self.step > 0.0 && self.div_bound > 0.0) {
            return Err(Error::InvalidParameter("eps, step and div_bound must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Relative gradient tolerance factor; see [`run_oag`].
pub const GRAD_TOL: f64 = 1e-8;
/// Absolute per-step movement tolerance.
pub const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum OagStatus {
    Converged { u_star: DVector<f64>, iterations: usize },
    Diverged { t_exit: usize, non_finite: bool },
    MaxIters,
}

impl OagStatus {
    pub fn label(&self) -> &'static str {
        match self {
            OagStatus::Converged { .. } => "Converged",
            OagStatus::Diverged { .. } => "Diverged",
            OagStatus::MaxIters => "MaxIters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OagTrajectory {
    /// Iteration index of each recorded sample.
    pub iters: Vec<usize>,
    pub inputs: Vec<DVector<f64>>,
    /// `phi(Pi u + w)` at each recorded sample.
    pub costs: Vec<f64>,
    pub status: OagStatus,
    /// `Pi u* + w` when converged.
    pub y_star: Option<DVector<f64>>,
}

#[derive(Serialize)]
struct StatusJson {
    status: &'static str,
    iterations: Option<usize>,
    t_exit: Option<usize>,
    non_finite: Option<bool>,
    u_star: Option<Vec<f64>>,
    y_star: Option<Vec<f64>>,
    final_phi: f64,
}

impl OagTrajectory {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().expect("trajectory has at least one sample")
    }

    pub fn final_input(&self) -> &DVector<f64> {
        self.inputs.last().expect("trajectory has at least one sample")
    }

    pub fn converged(&self) -> bool {
        matches!(self.status, OagStatus::Converged { .. })
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, OagStatus::Diverged { .. })
    }

    /// `iter,u1..un,phi`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comment: Option<&str>) -> io::Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let n = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["iter".to_string()];
        header.extend((1..=n).map(|i| format!("u{i}")));
        header.push("phi".into());
        writeln!(out, "{}", header.join(","))?;
        for ((it, u), phi) in self.iters.iter().zip(&self.inputs).zip(&self.costs) {
            let mut fields = vec![it.to_string()];
            fields.extend(u.iter().map(|x| format!("{x:?}")));
            fields.push(format!("{phi:?}"));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn status_json(&self) -> serde_json::Value {
        let mut js = StatusJson {
            status: self.status.label(),
            iterations: None,
            t_exit: None,
            non_finite: None,
            u_star: None,
            y_star: self.y_star.as_ref().map(|y| y.iter().copied().collect()),
            final_phi: self.final_cost(),
        };
        match &self.status {
            OagStatus::Converged { u_star, iterations } => {
                js.u_star = Some(u_star.iter().copied().collect());
                js.iterations = Some(*iterations);
            }
            OagStatus::Diverged { t_exit, non_finite } => {
                js.t_exit = Some(*t_exit);
                js.non_finite = Some(*non_finite);
            }
            OagStatus::MaxIters => {}
        }
        serde_json::to_value(js).expect("status serializes")
    }
}

/// Runs OAG on the static plant `y = pi_true u + w`.
///
/// Stops as `Converged` once both `|Pi^T grad phi| < GRAD_TOL (1 + |grad phi(y_0)|)`
/// and `|u_{t+1} - u_t| < STEP_TOL`; as `Diverged` once `|u|_inf` exceeds the
/// bound or an iterate is not finite.
pub fn run_oag(
    pi_true: &DMatrix<f64>,
    pi_hat: &DMatrix<f64>,
    cost: &CostFunction,
    cfg: &OagConfig,
) -> Result<OagTrajectory> {
    let n = pi_true.nrows();
    if !pi_true.is_square() || pi_hat.shape() != pi_true.shape() {
        return Err(Error::DimensionMismatch("Pi and Pi_hat must be square and equal in size".into()));
    }
    if !cost.is_static() {
        return Err(Error::UnsupportedCost("run_oag needs a static cost; use simulate_tracking".into()));
    }
    if let CostFunction::Quadratic { q, .. } = cost {
        if q.nrows() != n {
            return Err(Error::DimensionMismatch("cost dimension differs from plant".into()));
        }
    }
    cfg.validate(n)?;

    let gain = cfg.step * cfg.eps;
    let pi_hat_t = pi_hat.transpose();
    let pi_t = pi_true.transpose();
    let output = |u: &DVector<f64>| pi_true * u + &cfg.w;

    let mut u = cfg.u0.clone();
    let mut y = output(&u);
    let grad_tol = GRAD_TOL * (1.0 + cost.gradient(&y).norm());

    let mut traj = OagTrajectory {
        iters: vec![0],
        inputs: vec![u.clone()],
        costs: vec![cost.value(&y)],
        status: OagStatus::MaxIters,
        y_star: None,
    };
    let mut last_recorded = 0;

    for t in 0..cfg.max_iters {
        let grad_y = cost.gradient(&y);
        let true_grad_norm = (&pi_t * &grad_y).norm();
        let delta = &pi_hat_t * &grad_y * gain;
        let next = &u - &delta;
        let iter = t + 1;
        let non_finite = next.iter().any(|x| !x.is_finite());
        if non_finite || next.amax() > cfg.div_bound {
            let y_next = output(&next);
            traj.iters.push(iter);
            traj.costs.push(cost.value(&y_next));
            traj.inputs.push(next);
            traj.status = OagStatus::Diverged { t_exit: iter, non_finite };
            return Ok(traj);
        }
        let moved = delta.norm();
        u = next;
        y = output(&u);
        if true_grad_norm < grad_tol && moved < STEP_TOL {
            traj.iters.push(iter);
            traj.inputs.push(u.clone());
            traj.costs.push(cost.value(&y));
            traj.y_star = Some(y);
            traj.status = OagStatus::Converged {
                u_star: u,
                iterations: iter,
            };
            return Ok(traj);
        }
        if iter % cfg.record_stride == 0 {
            traj.iters.push(iter);
            traj.inputs.push(u.clone());
            traj.costs.push(cost.value(&y));
            last_recorded = iter;
        }
    }
    if last_recorded != cfg.max_iters && cfg.max_iters > 0 {
        traj.iters.push(cfg.max_iters);
        traj.inputs.push(u.clone());
        traj.costs.push(cost.value(&y));
    }
    Ok(traj)
}

/// Input that puts the output at the cost's minimizer: `u* = Pi^-1 (y* - w)`.
pub fn equilibrium_oracle(pi_true: &DMatrix<f64>, cost: &CostFunction, w: &DVector<f64>) -> Result<DVector<f64>> {
    let n = pi_true.nrows();
    let y_star = cost
        .minimizer(n)
        .ok_or_else(|| Error::UnsupportedCost("equilibrium needs a static quadratic cost".into()))?;
    if w.len() != n || y_star.len() != n {
        return Err(Error::DimensionMismatch("disturbance or cost has the wrong length".into()));
    }
    let rhs = DMatrix::from_column_slice(n, 1, (y_star - w).as_slice());
    let u = linalg::solve(pi_true, &rhs, "Pi")?;
    Ok(u.column(0).into_owned())
}

/// Largest `step * eps` for which a quadratic cost provably decreases at
/// every Euler step and the iteration matrix stays well inside its
/// stability region.
///
/// With `M = Pi Pi_hat^T` and `z = grad phi`, one step changes the cost by
/// `-h z^T sym(M) z + h^2/2 z^T M^T Q M z`, so any
/// `h <= min_z z^T sym(M) z / z^T M^T Q M z` guarantees monotone decrease.
/// That bound is combined with `0.5 / sigma_max(Pi_hat^T Q Pi)`. When the
/// model is not aligned only the second bound applies.
pub fn safe_gain(pi_true: &DMatrix<f64>, pi_hat: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let iteration = pi_hat.transpose() * q * pi_true;
    let sigma_max = linalg::spectral_norm(&iteration);
    if !(sigma_max > 0.0) {
        return Err(Error::SingularMatrix("Pi_hat^T Q Pi".into()));
    }
    let contraction = 0.5 / sigma_max;
    let m = pi_true * pi_hat.transpose();
    let sym = linalg::symmetrize(&m);
    let (sym_lo, _) = linalg::sym_eig_range(&sym);
    if sym_lo <= DEF_TOL * linalg::spectral_norm(&sym) {
        return Ok(contraction);
    }
    let curvature = linalg::symmetrize(&(m.transpose() * q * &m));
    let chol = curvature
        .cholesky()
        .ok_or_else(|| Error::SingularMatrix("M^T Q M".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("M^T Q M".into()))?;
    let pencil = &l_inv * sym * l_inv.transpose();
    let (descent, _) = linalg::sym_eig_range(&pencil);
    Ok(contraction.min(descent))
}

/// PI gains realized by OAG on the tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub kp: DMatrix<f64>,
    pub ki: DMatrix<f64>,
}

/// `K_P = eps c2 Pi_hat^T`, `K_I = eps c1 Pi_hat^T`.
pub fn pi_from_fo(pi_hat: &DMatrix<f64>, eps: f64, c1: f64, c2: f64) -> Result<PiController> {
    if !(eps > 0.0 && c1 > 0.0 && c2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PI gains need eps > 0, c1 > 0, c2 >= 0 (got {eps}, {c1}, {c2})"
        )));
    }
    let t = pi_hat.transpose();
    Ok(PiController {
        kp: &t * (eps * c2),
        ki: &t * (eps * c1),
    })
}

/// One instance of the static plant `y = plant u + w` driven for `steps`
/// samples from `u0` with the output derivative initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSetup {
    pub plant: DMatrix<f64>,
    pub pi_hat: DMatrix<f64>,
    pub eps: f64,
    pub w: DVector<f64>,
    pub u0: DVector<f64>,
    pub steps: usize,
}

/// OAG on a tracking cost, with the static plant closing an algebraic loop
/// at each sample: `u_t` solves
/// `u_t = u_{t-1} - step eps Pi_hat^T grad phi_t(Pi u_t + w)`.
///
/// The gradient is affine in `u_t`, so one Newton step with the Jacobian
/// `I + step eps Pi_hat^T (c1 + c2/step) Pi` solves it exactly.
pub fn simulate_tracking(setup: &TrackingSetup, cost: &CostFunction) -> Result<Vec<DVector<f64>>> {
    let (c1, c2, step) = match cost {
        CostFunction::Tracking { c1, c2, step, .. } => (*c1, *c2, *step),
        _ => return Err(Error::UnsupportedCost("simulate_tracking needs a tracking cost".into())),
    };
    let n = setup.plant.nrows();
    let pi_hat_t = setup.pi_hat.transpose();
    let gain = step * setup.eps;
    let jacobian = identity(n) + &pi_hat_t * &setup.plant * (gain * (c1 + c2 / step));
    let lu = jacobian.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularMatrix("tracking update Jacobian".into()));
    }
    let output = |u: &DVector<f64>| &setup.plant * u + &setup.w;

    let mut u_prev = setup.u0.clone();
    let mut y_prev = output(&u_prev);
    let mut out = Vec::with_capacity(setup.steps + 1);
    out.push(u_prev.clone());
    for t in 1..=setup.steps {
        // Residual of the implicit update at the guess u = u_prev.
        let residual_at = |u: &DVector<f64>| {
            let y = output(u);
            let y_dot = (&y - &y_prev) / step;
            u - &u_prev + &pi_hat_t * cost.gradient_at(t, &y, &y_dot) * gain
        };
        let r0 = residual_at(&u_prev);
        let u = &u_prev - lu.solve(&r0).expect("invertible");
        y_prev = output(&u);
        u_prev = u.clone();
        out.push(u);
    }
    Ok(out)
}

/// Velocity-form PI law on the same loop:
/// `u_t = u_{t-1} + K_I step e_t + K_P (e_t - e_{t-1})`, `e_t = r_t - (Pi u_t + w)`,
/// solved for `u_t` at each sample.
pub fn simulate_pi(
    setup: &TrackingSetup,
    pi: &PiController,
    reference: &[DVector<f64>],
    step: f64,
) -> Result<Vec<DVector<f64>>> {
    let n = setup.plant.nrows();
    let r_at = |t: usize| &reference[t.min(reference.len() - 1)];
    // u_t (I + (K_I step + K_P) Pi) = u_{t-1} + (K_I step + K_P)(r_t - w) - K_P e_{t-1}
    let combined = &pi.ki * step + &pi.kp;
    let lhs = identity(n) + &combined * &setup.plant;
    let lu = lhs.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularMatrix("PI loop".into()));
    }
    let error_at = |t: usize, u: &DVector<f64>| r_at(t) - (&setup.plant * u + &setup.w);

    let mut u_prev = setup.u0.clone();
    let mut e_prev = error_at(0, &u_prev);
    let mut out = Vec::with_capacity(setup.steps + 1);
    out.push(u_prev.clone());
    for t in 1..=setup.steps {
        let rhs = &u_prev + &combined * (r_at(t) - &setup.w) - &pi.kp * &e_prev;
        let u = lu.solve(&rhs).expect("invertible");
        e_prev = error_at(t, &u);
        u_prev = u.clone();
        out.push(u);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiEquivalence {
    pub controller: PiController,
    pub oag_inputs: Vec<DVector<f64>>,
    pub pi_inputs: Vec<DVector<f64>>,
    /// `max_t |u_oag(t) - u_pi(t)|_inf`.
    pub max_gap: f64,
}

/// Runs OAG on the tracking cost and the PI law built by [`pi_from_fo`] on
/// the same plant and reports the largest input gap.
pub fn verify_pi_equivalence(
    setup: &TrackingSetup,
    c1: f64,
    c2: f64,
    reference: Vec<DVector<f64>>,
    step: f64,
) -> Result<PiEquivalence> {
    let n = setup.plant.nrows();
    if setup.pi_hat.shape() != (n, n) || setup.w.len() != n || setup.u0.len() != n {
        return Err(Error::DimensionMismatch("tracking setup dimensions disagree".into()));
    }
    if reference.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("reference samples have the wrong length".into()));
    }
    let controller = pi_from_fo(&setup.pi_hat, setup.eps, c1, c2)?;
    let cost = CostFunction::tracking(c1, c2, reference.clone(), step)?;
    let oag_inputs = simulate_tracking(setup, &cost)?;
    let pi_inputs = simulate_pi(setup, &controller, &reference, step)?;
    let max_gap = oag_inputs
        .iter()
        .zip(&pi_inputs)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    Ok(PiEquivalence {
        controller,
        oag_inputs,
        pi_inputs,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn half_norm() -> CostFunction {
        CostFunction::quadratic(identity(1), v(&[0.0])).unwrap()
    }

    #[test]
    fn exact_gradient_descent_converges() {
        let cost = CostFunction::quadratic(identity(2), v(&[0.0, 0.0])).unwrap();
        let mut cfg = OagConfig::new(v(&[3.0, -2.0]), v(&[0.0, 0.0]));
        cfg.step = 0.1;
        let traj = run_oag(&identity(2), &identity(2), &cost, &cfg).unwrap();
        assert!(traj.converged());
        assert!(traj.final_input().norm() < 1e-8);
        assert!(traj.costs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sign_flipped_scalar_model_diverges() {
        let mut cfg = OagConfig::new(v(&[1.0]), v(&[0.0]));
        cfg.step = 0.01;
        let traj = run_oag(&identity(1), &(-identity(1)), &half_norm(), &cfg).unwrap();
        assert!(traj.diverged());
        assert!(traj.costs.windows(2).all(|w| w[1] > w[0]));
        // u_t = (1 + step)^t u_0
        for (it, u) in traj.iters.iter().zip(&traj.inputs).take(50) {
            let expected = 1.01f64.powi(*it as i32);
            assert!((u[0] - expected).abs() < 1e-9 * expected);
        }
        match traj.status {
            OagStatus::Diverged { t_exit, non_finite } => {
                assert!(!non_finite);
                // (1.01)^t > 1e6  <=>  t > ln(1e6) / ln(1.01)
                assert_eq!(t_exit, (1e6f64.ln() / 1.01f64.ln()).ceil() as usize);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn non_finite_iterates_are_flagged() {
        let mut cfg = OagConfig::new(v(&[1.0]), v(&[0.0]));
        cfg.step = 1e300;
        cfg.div_bound = f64::INFINITY;
        let traj = run_oag(&identity(1), &(identity(1) * 1e10), &half_norm(), &cfg).unwrap();
        assert_eq!(traj.status, OagStatus::Diverged { t_exit: 1, non_finite: true });
    }

    #[test]
    fn tracking_cost_rejected_by_static_runner() {
        let cost = CostFunction::tracking(1.0, 1.0, vec![v(&[1.0])], 0.1).unwrap();
        let cfg = OagConfig::new(v(&[0.0]), v(&[0.0]));
        assert!(matches!(
            run_oag(&identity(1), &identity(1), &cost, &cfg),
            Err(Error::UnsupportedCost(_))
        ));
    }

    #[test]
    fn max_iters_records_final_state() {
        let mut cfg = OagConfig::new(v(&[1.0]), v(&[0.0]));
        cfg.step = 1e-6;
        cfg.max_iters = 10;
        cfg.record_stride = 4;
        let traj = run_oag(&identity(1), &identity(1), &half_norm(), &cfg).unwrap();
        assert_eq!(traj.status, OagStatus::MaxIters);
        assert_eq!(traj.iters, vec![0, 4, 8, 10]);
    }

    #[test]
    fn equilibrium_cases() {
        let cost = CostFunction::quadratic(identity(2), v(&[0.0, 0.0])).unwrap();
        assert_eq!(equilibrium_oracle(&identity(2), &cost, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));

        let pi = example::plant();
        let w = v(&[1.0, -1.0]);
        let u = equilibrium_oracle(&pi, &cost, &w).unwrap();
        assert!(cost.gradient(&(&pi * &u + &w)).norm() < 1e-14);
        // Pi^-1 = [[4, -2], [3, 1]] / 10, so u = Pi^-1 (-w) = (-0.6, -0.2).
        assert!((u - v(&[-0.6, -0.2])).norm() < 1e-14);

        let u2 = equilibrium_oracle(&pi, &CostFunction::SumOfSquares, &w).unwrap();
        assert!((u2 - v(&[-0.6, -0.2])).norm() < 1e-14);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(equilibrium_oracle(&singular, &cost, &w), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn quadratic_cost_validation() {
        assert!(CostFunction::quadratic(-identity(2), v(&[0.0, 0.0])).is_err());
        assert!(CostFunction::quadratic(identity(2), v(&[0.0])).is_err());
        assert!(CostFunction::tracking(0.0, 1.0, vec![v(&[1.0])], 0.1).is_err());
    }

    #[test]
    fn safe_gain_gives_monotone_descent() {
        let cl = example::example_loop(10.0).unwrap();
        let pi_hat = crate::estimator::asymptotic_model(&cl).unwrap().pi_hat;
        let q = identity(2) * 2.0;
        let h = safe_gain(&example::plant(), &pi_hat, &q).unwrap();
        let mut cfg = OagConfig::new(example::initial_input(), v(&[0.0, 0.0]));
        cfg.step = h;
        let traj = run_oag(&example::plant(), &pi_hat, &CostFunction::SumOfSquares, &cfg).unwrap();
        assert!(traj.converged());
        assert!(traj.costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn pure_integral_controller() {
        let pi = pi_from_fo(&example::plant(), 0.5, 2.0, 0.0).unwrap();
        assert_eq!(pi.kp, DMatrix::zeros(2, 2));
        assert_eq!(pi.ki, example::plant().transpose());
        assert!(pi_from_fo(&example::plant(), 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn scalar_step_reference_equivalence() {
        let setup = TrackingSetup {
            plant: identity(1) * 2.0,
            pi_hat: identity(1),
            eps: 1.0,
            w: v(&[0.0]),
            u0: v(&[0.0]),
            steps: 1000,
        };
        let eq = verify_pi_equivalence(&setup, 1.0, 1.0, vec![v(&[1.0])], 0.01).unwrap();
        assert!(eq.max_gap < 1e-8, "gap {}", eq.max_gap);
        // Integral action: the error decays like exp(-2t/3), t = 10.
        let u_end = eq.oag_inputs.last().unwrap()[0];
        assert!((2.0 * u_end - 1.0).abs() < 2e-3);
    }

    #[test]
    fn zero_derivative_gain_equivalence() {
        let setup = TrackingSetup {
            plant: example::plant(),
            pi_hat: example::plant(),
            eps: 1.0,
            w: v(&[0.3, -0.1]),
            u0: v(&[0.0, 0.0]),
            steps: 1000,
        };
        let eq = verify_pi_equivalence(&setup, 1.0, 0.0, vec![v(&[1.0, -1.0])], 1e-3).unwrap();
        assert!(eq.max_gap < 1e-8);
    }

    #[test]
    fn csv_and_status() {
        let mut cfg = OagConfig::new(v(&[1.0]), v(&[0.0]));
        cfg.step = 0.5;
        let traj = run_oag(&identity(1), &identity(1), &half_norm(), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some("hash")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# hash"));
        assert_eq!(lines.next(), Some("iter,u1,phi"));
        assert_eq!(lines.next(), Some("0,1.0,0.5"));
        let js = traj.status_json();
        assert_eq!(js["status"], "Converged");
        assert!(js["u_star"].is_array());
    }
}
