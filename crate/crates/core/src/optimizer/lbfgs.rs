//! Bound-constrained local minimization: projected limited-memory BFGS
//! with Armijo backtracking and finite-difference gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-coordinate box constraints (lo < hi on every axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T: Scalar> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "bounds need matching, non-empty lo/hi vectors".to_string(),
            ));
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::config(format!(
                    "bounds axis {i} needs finite lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Bounds { lo, hi })
    }

    /// Default collision-strength box: gamma_in in [0, pi], gamma_sh in
    /// [0.01, pi] (a zero shuttle strength would never move excitations
    /// off the shuttles).
    pub fn gamma_defaults() -> Self {
        Bounds {
            lo: vec![T::zero(), T::of(0.01)],
            hi: vec![T::PI(), T::PI()],
        }
    }

    /// Symmetric box [-half_width, half_width]^dim (used for local phase
    /// angles).
    pub fn symmetric(dim: usize, half_width: T) -> Result<Self> {
        Bounds::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self, i: usize) -> T {
        self.lo[i]
    }

    pub fn hi(&self, i: usize) -> T {
        self.hi[i]
    }

    pub fn clamp_vec(&self, x: &mut [T]) {
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            if *v < l {
                *v = l;
            } else if *v > h {
                *v = h;
            }
        }
    }

    pub fn clamped(&self, x: &[T]) -> Vec<T> {
        let mut out = x.to_vec();
        self.clamp_vec(&mut out);
        out
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }
}

/// Knobs of the local solver.
#[derive(Debug, Clone)]
pub struct LocalConfig<T: Scalar> {
    pub maxiter: usize,
    /// Stop when the decrease between accepted iterates falls below this.
    pub ftol: T,
    /// Finite-difference step for the gradient.
    pub fd_step: T,
    /// Number of curvature pairs kept.
    pub memory_pairs: usize,
    /// Stop when the projected-gradient max-norm falls below this.
    pub grad_tol: T,
}

impl<T: Scalar> Default for LocalConfig<T> {
    fn default() -> Self {
        LocalConfig {
            maxiter: 100,
            ftol: T::of(1e-6),
            fd_step: T::of(1e-4),
            memory_pairs: 10,
            grad_tol: T::of(1e-10),
        }
    }
}

/// Why the local solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIter,
    FtolConverged,
    GradConverged,
    LineSearchStalled,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::MaxIter => "maxiter",
            Termination::FtolConverged => "ftol",
            Termination::GradConverged => "gradtol",
            Termination::LineSearchStalled => "linesearch",
        }
    }
}

/// Outcome of one local minimization.
#[derive(Debug, Clone)]
pub struct LocalResult<T: Scalar> {
    /// Best point visited (never worse than the start).
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Objective wrapper that rejects non-finite values and remembers the
/// best point ever evaluated.
struct Tracker<'a, T: Scalar, F: FnMut(&[T]) -> Result<T>> {
    f: &'a mut F,
    best_x: Vec<T>,
    best_f: T,
    evaluations: usize,
}

impl<'a, T: Scalar, F: FnMut(&[T]) -> Result<T>> Tracker<'a, T, F> {
    fn new(f: &'a mut F, dim: usize) -> Self {
        Tracker { f, best_x: vec![T::zero(); dim], best_f: T::infinity(), evaluations: 0 }
    }

    fn call(&mut self, x: &[T]) -> Result<T> {
        let v = (self.f)(x)?;
        if !v.is_finite() {
            return Err(Error::non_finite(format!(
                "objective returned {v} at {x:?}"
            )));
        }
        self.evaluations += 1;
        if v < self.best_f {
            self.best_f = v;
            self.best_x.clear();
            self.best_x.extend_from_slice(x);
        }
        Ok(v)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Central finite differences, falling back to one-sided at a box face.
pub fn finite_diff_gradient<T: Scalar>(
    f: &mut impl FnMut(&[T]) -> Result<T>,
    x: &[T],
    fd_step: T,
    bounds: &Bounds<T>,
) -> Result<Vec<T>> {
    let mut tracker = Tracker::new(f, x.len());
    gradient_with(&mut tracker, x, fd_step, bounds)
}

fn gradient_with<T: Scalar, F: FnMut(&[T]) -> Result<T>>(
    tracker: &mut Tracker<'_, T, F>,
    x: &[T],
    h: T,
    bounds: &Bounds<T>,
) -> Result<Vec<T>> {
    let mut g = vec![T::zero(); x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let up_room = bounds.hi(i) - x[i];
        let down_room = x[i] - bounds.lo(i);
        let (num, den) = if up_room >= h && down_room >= h {
            probe[i] = x[i] + h;
            let fp = tracker.call(&probe)?;
            probe[i] = x[i] - h;
            let fm = tracker.call(&probe)?;
            (fp - fm, T::of(2.0) * h)
        } else if up_room >= h {
            probe[i] = x[i] + h;
            let fp = tracker.call(&probe)?;
            let f0 = tracker.call(x)?;
            (fp - f0, h)
        } else {
            probe[i] = x[i] - h;
            let fm = tracker.call(&probe)?;
            let f0 = tracker.call(x)?;
            (f0 - fm, h)
        };
        probe[i] = x[i];
        g[i] = num / den;
    }
    Ok(g)
}

/// Max-norm of the gradient with components pointing out of the box at an
/// active bound zeroed.
fn projected_grad_norm<T: Scalar>(x: &[T], g: &[T], bounds: &Bounds<T>) -> T {
    let mut worst = T::zero();
    for i in 0..x.len() {
        let at_lo = x[i] <= bounds.lo(i);
        let at_hi = x[i] >= bounds.hi(i);
        let blocked = (at_lo && g[i] > T::zero()) || (at_hi && g[i] < T::zero());
        if !blocked && g[i].abs() > worst {
            worst = g[i].abs();
        }
    }
    worst
}

/// Two-loop recursion for the L-BFGS direction -H g.
fn lbfgs_direction<T: Scalar>(history: &VecDeque<(Vec<T>, Vec<T>, T)>, g: &[T]) -> Vec<T> {
    let mut q = g.to_vec();
    if history.is_empty() {
        for v in &mut q {
            *v = -*v;
        }
        return q;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * *yi;
        }
        alphas.push(a);
    }
    let (s_last, y_last, _) = history.back().expect("non-empty history");
    let scale = dot(s_last, y_last) / dot(y_last, y_last);
    for v in &mut q {
        *v *= scale;
    }
    for ((s, y, rho), &a) in history.iter().zip(alphas.iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * *si;
        }
    }
    for v in &mut q {
        *v = -*v;
    }
    q
}

/// Minimize `f` over the box from `x0`, returning the best visited point.
///
/// Terminates on iteration budget, objective decrease below `ftol`
/// between accepted iterates, or projected-gradient norm below
/// `grad_tol`. A non-finite objective anywhere is a hard error.
pub fn lbfgsb_minimize<T: Scalar>(
    mut f: impl FnMut(&[T]) -> Result<T>,
    x0: &[T],
    bounds: &Bounds<T>,
    cfg: &LocalConfig<T>,
) -> Result<LocalResult<T>> {
    if x0.len() != bounds.dim() {
        return Err(Error::config(format!(
            "start point dimension {} does not match bounds dimension {}",
            x0.len(),
            bounds.dim()
        )));
    }
    let armijo = T::of(1e-4);
    let mut tracker = Tracker::new(&mut f, x0.len());
    let mut x = bounds.clamped(x0);
    let mut fx = tracker.call(&x)?;
    let mut g = gradient_with(&mut tracker, &x, cfg.fd_step, bounds)?;
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new();
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    if projected_grad_norm(&x, &g, bounds) < cfg.grad_tol {
        termination = Termination::GradConverged;
    } else {
        for _ in 1..=cfg.maxiter {
            iterations += 1;
            let mut d = lbfgs_direction(&history, &g);
            if dot(&d, &g) >= T::zero() {
                // Not a descent direction (stale curvature); restart from
                // steepest descent.
                history.clear();
                d = g.iter().map(|&v| -v).collect();
            }

            // Backtracking line search on the projected step.
            let mut alpha = T::one();
            let mut accepted: Option<(Vec<T>, T, Vec<T>)> = None;
            for _ in 0..40 {
                let mut xt: Vec<T> =
                    x.iter().zip(&d).map(|(&xi, &di)| xi + alpha * di).collect();
                bounds.clamp_vec(&mut xt);
                let step: Vec<T> = xt.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                if step.iter().all(|&s| s == T::zero()) {
                    break;
                }
                let ft = tracker.call(&xt)?;
                let slope = dot(&g, &step).min(T::zero());
                if ft <= fx + armijo * slope && ft < fx {
                    accepted = Some((xt, ft, step));
                    break;
                }
                alpha *= T::of(0.5);
            }

            // If the unit step was accepted outright, the direction may be
            // too short (backtracking alone never lengthens it, which
            // stalls badly in narrow valleys); grow the step while it
            // keeps satisfying the sufficient-decrease test and improving.
            if accepted.is_some() && alpha == T::one() {
                while alpha < T::of(16.0) {
                    let doubled = alpha * T::of(2.0);
                    let mut xt: Vec<T> =
                        x.iter().zip(&d).map(|(&xi, &di)| xi + doubled * di).collect();
                    bounds.clamp_vec(&mut xt);
                    let step: Vec<T> = xt.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                    let ft = tracker.call(&xt)?;
                    let slope = dot(&g, &step).min(T::zero());
                    let best_so_far = accepted.as_ref().expect("accepted above").1;
                    if ft <= fx + armijo * slope && ft < best_so_far {
                        alpha = doubled;
                        accepted = Some((xt, ft, step));
                    } else {
                        break;
                    }
                }
            }

            let Some((xt, ft, step)) = accepted else {
                termination = Termination::LineSearchStalled;
                break;
            };

            let gt = gradient_with(&mut tracker, &xt, cfg.fd_step, bounds)?;
            let y: Vec<T> = gt.iter().zip(&g).map(|(&a, &b)| a - b).collect();
            let sy = dot(&step, &y);
            if sy > T::of(1e-12) {
                if history.len() == cfg.memory_pairs {
                    history.pop_front();
                }
                let rho = T::one() / sy;
                history.push_back((step, y, rho));
            }

            let decrease = fx - ft;
            x = xt;
            fx = ft;
            g = gt;

            if projected_grad_norm(&x, &g, bounds) < cfg.grad_tol {
                termination = Termination::GradConverged;
                break;
            }
            if decrease < cfg.ftol {
                termination = Termination::FtolConverged;
                break;
            }
        }
    }

    Ok(LocalResult {
        x: tracker.best_x.clone(),
        value: tracker.best_f,
        iterations,
        evaluations: tracker.evaluations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(dim: usize) -> Bounds<f64> {
        Bounds::new(vec![-10.0; dim], vec![10.0; dim]).unwrap()
    }

    #[test]
    fn bounds_are_validated() {
        assert!(Bounds::<f64>::new(vec![0.0], vec![0.0]).is_err());
        assert!(Bounds::<f64>::new(vec![1.0], vec![0.0]).is_err());
        assert!(Bounds::<f64>::new(vec![0.0, 1.0], vec![2.0]).is_err());
        assert!(Bounds::<f64>::new(vec![], vec![]).is_err());
        assert!(Bounds::<f64>::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn gamma_default_box_shape() {
        let b = Bounds::<f64>::gamma_defaults();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.lo(0), 0.0);
        assert_abs_diff_eq!(b.lo(1), 0.01);
        assert_abs_diff_eq!(b.hi(0), std::f64::consts::PI);
    }

    #[test]
    fn gradient_of_separable_quadratic() {
        let mut f = |x: &[f64]| Ok(x[0] * x[0] + x[1] * x[1]);
        let g =
            finite_diff_gradient(&mut f, &[1.0, 2.0], 1e-5, &unit_box(2)).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let mut f = |_: &[f64]| Ok(3.5);
        let g = finite_diff_gradient(&mut f, &[0.3, -0.7], 1e-5, &unit_box(2)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_switches_to_one_sided_at_the_face() {
        // f = x^2 on [0, 1]; at x = 0 a central step would leave the box.
        let bounds = Bounds::<f64>::new(vec![0.0], vec![1.0]).unwrap();
        let mut f = |x: &[f64]| Ok(x[0] * x[0]);
        let g = finite_diff_gradient(&mut f, &[0.0], 1e-5, &bounds).unwrap();
        // Forward difference of x^2 at 0 is h, not the exact 0; the point
        // is that it evaluates inside the box only.
        assert!(g[0].abs() < 2e-5);
        let g = finite_diff_gradient(&mut f, &[1.0], 1e-5, &bounds).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn projected_quadratic_lands_on_the_corner() {
        // Minimum of (x-2)^2 + (y-2)^2 over [0,1]^2 is the corner (1,1).
        let bounds = Bounds::<f64>::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| Ok((x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2));
        let res = lbfgsb_minimize(f, &[0.2, 0.4], &bounds, &LocalConfig::default()).unwrap();
        assert_eq!(res.x, vec![1.0, 1.0]);
        assert_abs_diff_eq!(res.value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rosenbrock_reaches_the_valley_floor() {
        let bounds = Bounds::<f64>::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64]| {
            Ok((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        };
        let cfg = LocalConfig { ftol: 1e-12, ..LocalConfig::default() };
        let res = lbfgsb_minimize(f, &[-1.2, 1.0], &bounds, &cfg).unwrap();
        assert!(
            res.value < 1e-6,
            "f = {} after {} iterations ({})",
            res.value,
            res.iterations,
            res.termination.name()
        );
        assert!(res.iterations <= 100);
    }

    #[test]
    fn zero_gradient_start_stops_immediately() {
        let f = |x: &[f64]| Ok(x[0] * x[0] + x[1] * x[1]);
        let res =
            lbfgsb_minimize(f, &[0.0, 0.0], &unit_box(2), &LocalConfig::default()).unwrap();
        assert!(res.iterations <= 2);
        assert_eq!(res.termination, Termination::GradConverged);
        assert_eq!(res.value, 0.0);
    }

    #[test]
    fn never_worse_than_the_start() {
        let bounds = Bounds::<f64>::new(vec![-4.0, -4.0], vec![4.0, 4.0]).unwrap();
        // A wavy objective with many local basins.
        let f = |x: &[f64]| {
            Ok((x[0] * 3.0).sin() + (x[1] * 2.5).cos() + 0.05 * (x[0] * x[0] + x[1] * x[1]))
        };
        for start in [[-3.0, -1.0], [0.1, 0.2], [2.9, 3.9], [-4.0, 4.0]] {
            let f0 = f(&start).unwrap();
            let res = lbfgsb_minimize(f, &start, &bounds, &LocalConfig::default()).unwrap();
            assert!(res.value <= f0 + 1e-15, "from {start:?}: {} > {f0}", res.value);
            assert!(bounds.contains(&res.x));
        }
    }

    #[test]
    fn non_finite_objective_is_a_hard_error() {
        let f = |_: &[f64]| Ok(f64::NAN);
        let err =
            lbfgsb_minimize(f, &[0.5, 0.5], &unit_box(2), &LocalConfig::default()).unwrap_err();
        assert!(matches!(err, crate::error::Error::NonFinite { .. }));
    }

    #[test]
    fn iterates_stay_inside_the_box() {
        let bounds = Bounds::<f64>::new(vec![0.0, 0.01], vec![1.0, 1.0]).unwrap();
        let f = |x: &[f64]| {
            assert!(
                x[0] >= -1e-15 && x[0] <= 1.0 + 1e-15 && x[1] >= 0.01 - 1e-15,
                "evaluated outside the box at {x:?}"
            );
            Ok((x[0] - 0.7).powi(2) * (x[1] - 0.3).powi(2) + x[1])
        };
        let res = lbfgsb_minimize(f, &[0.9, 0.9], &bounds, &LocalConfig::default()).unwrap();
        assert!(bounds.contains(&res.x));
    }
}
