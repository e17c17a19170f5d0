//! The rotating-theta magnetic instance: the optimizer's upper bound and the
//! invariant-circle measure lower bound both pin `c0 = 1/2`, and the estimate
//! behaves under grid refinement.

use std::sync::Arc;

use mane_core::critical::{
    estimate_c0, lower_bound_from_measure, suspension_critical_check, FormGrid, SmoothingSchedule,
};
use mane_core::fft::spectral_refine_axis;
use mane_core::flow::integrate;
use mane_core::geometry::{PhasePoint, TorusChart};
use mane_core::hamiltonian::{BaseOneForm, MagneticFlat, TonelliHamiltonian};

fn rotating() -> Arc<dyn TonelliHamiltonian> {
    Arc::new(MagneticFlat::new(TorusChart::unit(2), BaseOneForm::rotating(), None).unwrap())
}

/// The two invariant circles `y = 0, v = (1, 0)` and `y = 1/2, v = (-1, 0)`
/// lift to flow orbits on the zero section; weighted evenly they form a
/// zero-homology invariant measure.
fn circle_measure(h: &Arc<dyn TonelliHamiltonian>) -> Vec<(mane_core::flow::Trajectory, f64)> {
    let o1 = integrate(h, &PhasePoint::new(vec![0.0, 0.0], vec![0.0, 0.0]), 1.0, 1e-3, &[]).unwrap();
    let o2 = integrate(h, &PhasePoint::new(vec![0.0, 0.5], vec![0.0, 0.0]), 1.0, 1e-3, &[]).unwrap();
    vec![(o1, 0.5), (o2, 0.5)]
}

#[test]
fn measure_bound_is_exactly_one_half() {
    let h = rotating();
    let bound = lower_bound_from_measure(&h, &circle_measure(&h)).unwrap();
    assert!((bound - 0.5).abs() <= 1e-9, "bound {bound}");
}

#[test]
fn unbalanced_measure_is_rejected() {
    let h = rotating();
    let o1 = integrate(&h, &PhasePoint::new(vec![0.0, 0.0], vec![0.0, 0.0]), 1.0, 1e-3, &[]).unwrap();
    let err = lower_bound_from_measure(&h, &[(o1, 1.0)]).unwrap_err();
    match err {
        mane_core::critical::CriticalError::NonZeroHomology { axis, integral } => {
            assert_eq!(axis, 0);
            assert!((integral - 1.0).abs() < 1e-9);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn upper_and_lower_bounds_bracket_one_half() {
    let h = rotating();
    let grid = FormGrid::for_chart(h.chart(), &[32, 32]).unwrap();
    let est = estimate_c0(h.as_ref(), grid, &SmoothingSchedule::default()).unwrap();
    let lower = lower_bound_from_measure(&h, &circle_measure(&h)).unwrap();
    assert!(est.value >= 0.48 && est.value <= 0.52, "upper {}", est.value);
    assert!((lower - 0.5).abs() <= 0.02);
    assert!(lower <= est.value + 1e-9, "bracket broke: {lower} vs {}", est.value);
    assert!((est.value - lower).abs() <= 0.02);
}

#[test]
fn estimate_does_not_grow_under_refinement() {
    let h = rotating();
    let coarse = estimate_c0(
        h.as_ref(),
        FormGrid::for_chart(h.chart(), &[16, 16]).unwrap(),
        &SmoothingSchedule::default(),
    )
    .unwrap();
    let fine = estimate_c0(
        h.as_ref(),
        FormGrid::for_chart(h.chart(), &[32, 32]).unwrap(),
        &SmoothingSchedule::default(),
    )
    .unwrap();
    assert!(
        fine.value <= coarse.value + 1e-3,
        "refinement must not raise the estimate: {} -> {}",
        coarse.value,
        fine.value
    );

    // the coarse-grid max is honest: interpolating the coarse form onto the
    // doubled grid raises the max only by discretization error
    let FormGrid::Torus { shape, .. } = &coarse.minimizing_form.grid else {
        unreachable!()
    };
    let (shape1, u1) = spectral_refine_axis(shape, &coarse.minimizing_form.potential, 0);
    let (_, u2) = spectral_refine_axis(&shape1, &u1, 1);
    let fine_grid = FormGrid::for_chart(h.chart(), &[32, 32]).unwrap();
    let mut refined = mane_core::critical::ClosedOneFormParam::zero(fine_grid.clone());
    refined.harmonic = coarse.minimizing_form.harmonic.clone();
    refined.potential = u2;
    let mut fine_max = f64::NEG_INFINITY;
    for (q, th) in fine_grid.points().into_iter().zip(refined.covectors()) {
        fine_max = fine_max.max(h.eval(&PhasePoint::new(q, th)));
    }
    assert!(fine_max >= coarse.value - 1e-9, "finer grid must see at least the coarse max");
    assert!(
        fine_max - coarse.value <= 5e-3,
        "inter-grid excursion too large: {} vs {}",
        fine_max,
        coarse.value
    );
}

#[test]
fn sol_critical_value_on_the_twisted_grid() {
    // theta = 0 is stationary for the smoothed objective, so the estimate
    // reports the exact sup 1/2; the M = 0 translation orbit furnishes the
    // matching lower bound
    let h: Arc<dyn TonelliHamiltonian> = Arc::new(
        mane_core::hamiltonian::SolHamiltonian::new(mane_core::geometry::SolLattice::standard()),
    );
    let grid = FormGrid::for_chart(h.chart(), &[32, 32, 32]).unwrap();
    let est = estimate_c0(h.as_ref(), grid, &SmoothingSchedule::default()).unwrap();
    assert!(est.value >= 0.48 && est.value <= 0.55, "Sol c0 = {}", est.value);

    let orbit = integrate(
        &h,
        &PhasePoint::new(vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]),
        2.0,
        1e-3,
        &[],
    )
    .unwrap();
    // dz-homology vanishes pointwise on the M = 0 orbit
    let dz = |_q: &[f64]| vec![0.0, 0.0, 1.0];
    assert_eq!(mane_core::flow::homology_integral(&orbit, &dz), 0.0);
    let bound = lower_bound_from_measure(&h, &[(orbit, 1.0)]).unwrap();
    assert!((bound - 0.5).abs() <= 1e-9, "Sol measure bound {bound}");
}

#[test]
fn kinetic_rest_measure_gives_the_trivial_bound() {
    let h: Arc<dyn TonelliHamiltonian> =
        Arc::new(mane_core::hamiltonian::KineticFlat::new(TorusChart::unit(2)));
    let orbit = integrate(
        &h,
        &PhasePoint::new(vec![0.3, 0.3], vec![0.0, 0.0]),
        1.0,
        1e-2,
        &[],
    )
    .unwrap();
    let bound = lower_bound_from_measure(&h, &[(orbit, 1.0)]).unwrap();
    assert!(bound.abs() <= 1e-12, "kinetic bound {bound}");
}

#[test]
fn suspension_gap_closes_on_a_small_grid() {
    let h = rotating();
    let chk = suspension_critical_check(h, &[16, 16], 16, &SmoothingSchedule::default()).unwrap();
    assert!(chk.gap <= 0.02, "gap {}", chk.gap);
    assert!(chk.dt_harmonic.abs() <= 1e-4, "dt coefficient {}", chk.dt_harmonic);
    assert!(chk.base.value >= 0.48 && chk.base.value <= 0.52);
}
