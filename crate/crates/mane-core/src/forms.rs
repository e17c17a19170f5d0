//! Differential 1- and 2-forms on phase space as evaluators, with a
//! finite-difference exterior derivative.
//!
//! Tangent vectors use the flat layout `[q-components..., p-components...]`
//! of `PhasePoint::flatten`. The convention is `omega = sum dq_i ^ dp_i`
//! with `i_{X_H} omega = dH`, matching Hamilton's equations
//! `qdot = dH/dp`, `pdot = -dH/dq`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::geometry::PhasePoint;
use crate::hamiltonian::VectorField;

/// evaluator of a 1-form: `(point, tangent) -> value`
pub type OneFormEval = Arc<dyn Fn(&PhasePoint, &[f64]) -> f64 + Send + Sync>;
/// evaluator of a 2-form: `(point, v, w) -> value`
pub type TwoFormEval = Arc<dyn Fn(&PhasePoint, &[f64], &[f64]) -> f64 + Send + Sync>;

/// A 1-form given by its action on tangent vectors.
#[derive(Clone)]
pub struct OneFormField {
    /// phase-space dimension 2n of the tangent argument
    pub dim: usize,
    eval: OneFormEval,
}

impl OneFormField {
    pub fn new(dim: usize, eval: OneFormEval) -> Self {
        OneFormField { dim, eval }
    }

    pub fn at(&self, pt: &PhasePoint, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        (self.eval)(pt, v)
    }

    /// Contraction with a vector field, as a scalar function of the point.
    pub fn on_field(&self, x: &VectorField) -> impl Fn(&PhasePoint) -> f64 + '_ {
        let xf = x.clone();
        move |pt: &PhasePoint| self.at(pt, &xf.at(pt))
    }
}

/// A 2-form given by its action on pairs of tangent vectors.
#[derive(Clone)]
pub struct TwoFormField {
    pub dim: usize,
    eval: TwoFormEval,
}

impl TwoFormField {
    pub fn new(dim: usize, eval: TwoFormEval) -> Self {
        TwoFormField { dim, eval }
    }

    pub fn at(&self, pt: &PhasePoint, v: &[f64], w: &[f64]) -> f64 {
        (self.eval)(pt, v, w)
    }
}

/// The tautological Liouville form `xi = p . dq` on `T^* M`, `dim M = n`.
pub fn liouville_form(n: usize) -> OneFormField {
    assert!(n >= 1);
    OneFormField::new(
        2 * n,
        Arc::new(move |pt: &PhasePoint, v: &[f64]| crate::linalg::dot(&pt.p, &v[..pt.dim()])),
    )
}

/// The canonical symplectic form `omega = sum dq_i ^ dp_i`.
pub fn canonical_symplectic(n: usize) -> TwoFormField {
    TwoFormField::new(
        2 * n,
        Arc::new(move |_pt: &PhasePoint, v: &[f64], w: &[f64]| {
            let mut s = 0.0;
            for i in 0..n {
                s += v[i] * w[n + i] - w[i] * v[n + i];
            }
            s
        }),
    )
}

/// Finite-difference exterior derivative:
/// `d alpha (v, w) = D_v[alpha(., w)] - D_w[alpha(., v)]` by central
/// differences with step `h * max(1, |coords|_inf)`. Antisymmetric exactly.
pub fn exterior_derivative(alpha: &OneFormField, h: f64) -> TwoFormField {
    assert!(h > 0.0);
    let a = alpha.clone();
    TwoFormField::new(
        alpha.dim,
        Arc::new(move |pt: &PhasePoint, v: &[f64], w: &[f64]| {
            let scale = h * (1.0f64
                .max(crate::linalg::norm_inf(&pt.q))
                .max(crate::linalg::norm_inf(&pt.p)));
            let shift = |dir: &[f64], s: f64| -> PhasePoint {
                let n = pt.dim();
                let q: Vec<f64> = pt.q.iter().zip(&dir[..n]).map(|(a, d)| a + s * d).collect();
                let p: Vec<f64> = pt.p.iter().zip(&dir[n..]).map(|(a, d)| a + s * d).collect();
                PhasePoint::new(q, p)
            };
            let dv = (a.at(&shift(v, scale), w) - a.at(&shift(v, -scale), w)) / (2.0 * scale);
            let dw = (a.at(&shift(w, scale), v) - a.at(&shift(w, -scale), v)) / (2.0 * scale);
            dv - dw
        }),
    )
}

/// Default step for the finite-difference exterior derivative.
pub const FD_STEP: f64 = 1e-5;

/// Interior product `(i_X beta)(v) = beta(X, v)`.
pub fn interior_product(beta: &TwoFormField, x: &VectorField) -> OneFormField {
    let b = beta.clone();
    let xf = x.clone();
    OneFormField::new(
        beta.dim,
        Arc::new(move |pt: &PhasePoint, v: &[f64]| b.at(pt, &xf.at(pt), v)),
    )
}

/// Pullback along the projection `T^*(M x S^1) -> T^* M` that forgets the
/// circle factor: `(pi^* alpha)` ignores the `(t, p_t)` components.
/// `base_dim` is `n = dim M`; the suspension layout is `[q..., t, p..., p_t]`.
pub fn pullback_projection(alpha: &OneFormField, base_dim: usize) -> OneFormField {
    assert_eq!(alpha.dim, 2 * base_dim);
    let a = alpha.clone();
    let n = base_dim;
    OneFormField::new(
        2 * n + 2,
        Arc::new(move |pt: &PhasePoint, v: &[f64]| {
            let base_pt = PhasePoint::new(pt.q[..n].to_vec(), pt.p[..n].to_vec());
            let mut base_v = Vec::with_capacity(2 * n);
            base_v.extend_from_slice(&v[..n]);
            base_v.extend_from_slice(&v[n + 1..2 * n + 1]);
            a.at(&base_pt, &base_v)
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusChart;
    use crate::hamiltonian::{hamiltonian_vector_field, suspend, KineticFlat, TonelliHamiltonian};
    use crate::rng::CounterRng;
    use alloc::vec;

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn liouville_acts_on_base_components() {
        let xi = liouville_form(2);
        let pt = PhasePoint::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        assert_eq!(xi.at(&pt, &[3.0, 4.0, 0.0, 0.0]), 11.0);
        // vertical vectors are annihilated
        assert_eq!(xi.at(&pt, &[0.0, 0.0, 5.0, -7.0]), 0.0);
    }

    #[test]
    fn liouville_on_kinetic_field_gives_twice_the_energy() {
        let h: alloc::sync::Arc<dyn TonelliHamiltonian> =
            alloc::sync::Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let x = hamiltonian_vector_field(&h);
        let xi = liouville_form(2);
        let mut rng = CounterRng::new(2);
        for _ in 0..100 {
            let pt = PhasePoint::new(
                vec![rng.uniform(), rng.uniform()],
                vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)],
            );
            let val = xi.at(&pt, &x.at(&pt));
            assert!((val - 2.0 * h.eval(&pt)).abs() < 1e-14);
        }
    }

    #[test]
    fn d_of_liouville_is_minus_dq_wedge_dp_on_mixed_pairs() {
        // d xi (d/dq_i, d/dp_j) = -delta_ij with xi = p.dq
        let xi = liouville_form(2);
        let dxi = exterior_derivative(&xi, FD_STEP);
        let pt = PhasePoint::new(vec![0.2, 0.4], vec![0.7, -0.1]);
        for i in 0..2 {
            for j in 0..2 {
                let v = basis(4, i);
                let w = basis(4, 2 + j);
                let expect = if i == j { -1.0 } else { 0.0 };
                assert!((dxi.at(&pt, &v, &w) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn d_of_exact_form_vanishes() {
        // alpha = df for f = q_1 p_1
        let alpha = OneFormField::new(
            4,
            Arc::new(|pt: &PhasePoint, v: &[f64]| pt.p[0] * v[0] + pt.q[0] * v[2]),
        );
        let da = exterior_derivative(&alpha, FD_STEP);
        let pt = PhasePoint::new(vec![0.3, 0.8], vec![-0.4, 0.9]);
        let mut rng = CounterRng::new(4);
        for _ in 0..50 {
            let v = rng.unit_vector(4);
            let w = rng.unit_vector(4);
            assert!(da.at(&pt, &v, &w).abs() < 1e-7);
        }
    }

    #[test]
    fn exterior_derivative_is_antisymmetric() {
        let xi = liouville_form(3);
        let dxi = exterior_derivative(&xi, FD_STEP);
        let mut rng = CounterRng::new(6);
        let pt = PhasePoint::new(vec![0.1, 0.5, 0.9], vec![1.0, -0.5, 0.25]);
        for _ in 0..50 {
            let v = rng.unit_vector(6);
            let w = rng.unit_vector(6);
            let s = dxi.at(&pt, &v, &w) + dxi.at(&pt, &w, &v);
            assert!(s.abs() < 1e-9);
        }
    }

    #[test]
    fn hamilton_identity_through_interior_product() {
        // i_{X_H} d xi = -dH for the kinetic Hamiltonian
        let h: alloc::sync::Arc<dyn TonelliHamiltonian> =
            alloc::sync::Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let x = hamiltonian_vector_field(&h);
        let dxi = exterior_derivative(&liouville_form(2), FD_STEP);
        let ix = interior_product(&dxi, &x);
        let pt = PhasePoint::new(vec![0.25, 0.5], vec![0.6, -1.1]);
        let gq = h.grad_q(&pt);
        let gp = h.grad_p(&pt);
        for i in 0..4 {
            let v = basis(4, i);
            let dh = if i < 2 { gq[i] } else { gp[i - 2] };
            assert!((ix.at(&pt, &v) + dh).abs() < 1e-7, "component {i}");
        }
        // contraction with X itself vanishes by antisymmetry
        assert!(ix.at(&pt, &x.at(&pt)).abs() < 1e-9);
    }

    #[test]
    fn interior_product_with_zero_field_is_zero() {
        let dxi = exterior_derivative(&liouville_form(2), FD_STEP);
        let zero = VectorField::new(4, Arc::new(|_pt: &PhasePoint| vec![0.0; 4]));
        let iz = interior_product(&dxi, &zero);
        let pt = PhasePoint::new(vec![0.1, 0.1], vec![0.5, 0.5]);
        assert_eq!(iz.at(&pt, &[1.0, 0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn canonical_form_realizes_hamilton_equations() {
        // omega(X_H, v) = dH(v) fixes the sign convention once
        let h: alloc::sync::Arc<dyn TonelliHamiltonian> =
            alloc::sync::Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let x = hamiltonian_vector_field(&h);
        let omega = canonical_symplectic(2);
        let pt = PhasePoint::new(vec![0.7, 0.2], vec![0.3, 0.8]);
        let gq = h.grad_q(&pt);
        let gp = h.grad_p(&pt);
        for i in 0..4 {
            let v = basis(4, i);
            let dh = if i < 2 { gq[i] } else { gp[i - 2] };
            assert!((omega.at(&pt, &x.at(&pt), &v) - dh).abs() < 1e-13);
        }
    }

    #[test]
    fn pullback_ignores_circle_components() {
        let xi = liouville_form(2);
        let pxi = pullback_projection(&xi, 2);
        let pt = PhasePoint::new(vec![0.1, 0.2, 0.9], vec![1.5, 2.5, 3.5]);
        // purely (t, p_t) tangent vector
        let mut v = vec![0.0; 6];
        v[2] = 1.0;
        v[5] = 1.0;
        assert_eq!(pxi.at(&pt, &v), 0.0);
        // base tangent vector passes through
        let w = [2.0, 3.0, 0.0, 0.0, 0.0, 0.0];
        assert!((pxi.at(&pt, &w) - (1.5 * 2.0 + 2.5 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn pullback_sees_base_field_through_suspension() {
        // pi^* xi_M (X_Hbar) = xi_M(X_H) along the suspension field
        let base: alloc::sync::Arc<dyn TonelliHamiltonian> =
            alloc::sync::Arc::new(KineticFlat::new(TorusChart::unit(2)));
        let sus: alloc::sync::Arc<dyn TonelliHamiltonian> =
            alloc::sync::Arc::new(suspend(base.clone()));
        let xbar = hamiltonian_vector_field(&sus);
        let xbase = hamiltonian_vector_field(&base);
        let pxi = pullback_projection(&liouville_form(2), 2);
        let xi = liouville_form(2);
        let pt = PhasePoint::new(vec![0.3, 0.6, 0.15], vec![0.8, -0.2, 0.55]);
        let bpt = PhasePoint::new(vec![0.3, 0.6], vec![0.8, -0.2]);
        let lhs = pxi.at(&pt, &xbar.at(&pt));
        let rhs = xi.at(&bpt, &xbase.at(&bpt));
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn one_forms_are_linear_in_the_tangent_argument() {
        let xi = liouville_form(3);
        let mut rng = CounterRng::new(8);
        let pt = PhasePoint::new(vec![0.2, 0.4, 0.6], vec![1.0, 2.0, 3.0]);
        for _ in 0..100 {
            let v = rng.unit_vector(6);
            let w = rng.unit_vector(6);
            let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            let lin = xi.at(&pt, &sum) - xi.at(&pt, &v) - xi.at(&pt, &w);
            assert!(lin.abs() <= 1e-9 * 2.0);
        }
    }
}
