//! Property tests for the chart reductions and the phase-point layout.

use mane_core::geometry::{reduce_sol, wrap_torus, ChartPoint, PhasePoint, SolLattice, TorusChart};
use mane_core::hamiltonian::{SolHamiltonian, TonelliHamiltonian};
use proptest::prelude::*;

proptest! {
    #[test]
    fn wrap_lands_in_the_fundamental_domain(
        q in prop::collection::vec(-1e3f64..1e3, 1..5),
        scale in 0.1f64..10.0,
    ) {
        let periods: Vec<f64> = (0..q.len()).map(|i| scale * (1.0 + i as f64)).collect();
        let chart = TorusChart::with_periods(periods.clone());
        let w = wrap_torus(&ChartPoint::new(q), &chart).unwrap();
        for (x, per) in w.coords.iter().zip(&periods) {
            prop_assert!(*x >= 0.0 && *x < *per);
        }
        let w2 = wrap_torus(&w, &chart).unwrap();
        prop_assert_eq!(w.coords, w2.coords);
    }

    #[test]
    fn flatten_roundtrips(
        q in prop::collection::vec(-10.0f64..10.0, 1..4),
    ) {
        let p: Vec<f64> = q.iter().map(|x| x * 0.5 - 1.0).collect();
        let pt = PhasePoint::new(q, p);
        let rt = PhasePoint::from_flat(&pt.flatten());
        prop_assert_eq!(pt, rt);
    }

    #[test]
    fn sol_reduction_is_isoenergetic(
        x in -20.0f64..20.0,
        y in -20.0f64..20.0,
        z in -8.0f64..8.0,
        px in -3.0f64..3.0,
        py in -3.0f64..3.0,
        pz in -3.0f64..3.0,
    ) {
        let lat = SolLattice::standard();
        let h = SolHamiltonian::new(lat.clone());
        let pt = PhasePoint::new(vec![x, y, z], vec![px, py, pz]);
        let red = reduce_sol(&pt, &lat);
        prop_assert!(red.q[2] >= -1e-12 && red.q[2] < lat.log_lambda + 1e-12);
        let (ha, hb) = (h.eval(&pt), h.eval(&red));
        prop_assert!((ha - hb).abs() <= 1e-10 * (1.0 + ha.abs()));
    }
}
