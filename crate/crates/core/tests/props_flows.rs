mod common;

use common::*;
use hermflow::fields::{GridField, TensorField};
use hermflow::flows::{self, rhs, step_with_dt, FlowConfig, FlowKind, FlowState};
use hermflow::hermitian::{anti_invariant_part, HermitianPair};
use proptest::prelude::*;

fn anticommutator(j: &TensorField, k: &TensorField) -> f64 {
    let d = j.grid().dim();
    let mut worst = 0.0f64;
    for p in 0..j.grid().npoints() {
        let (a, b) = (j.at(p), k.at(p));
        for r in 0..d {
            for c in 0..d {
                let s: f64 = (0..d).map(|m| a[r * d + m] * b[m * d + c] + b[r * d + m] * a[m * d + c]).sum();
                worst = worst.max(s.abs());
            }
        }
    }
    worst
}

fn evolve(pair: &HermitianPair, kind: FlowKind, dt: f64, steps: usize) -> FlowState {
    let mut cfg = FlowConfig::new(kind, dt * steps as f64);
    cfg.monitor_every = usize::MAX;
    let mut state = FlowState::initial(pair.clone(), &cfg).unwrap();
    for _ in 0..steps {
        state = step_with_dt(&state, &cfg, dt).unwrap();
    }
    state
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// The J-velocity of the compatible d*d flow is tangent to the space of
    /// almost complex structures.
    #[test]
    fn compatible_velocity_anticommutes_with_j(seed in any::<u64>(), dim in prop::sample::select(vec![2usize, 4, 6])) {
        let grid = match dim {
            2 => torus(&[8, 8]),
            4 => torus(&[8, 8, 4, 4]),
            _ => torus(&[4; 6]),
        };
        let pair = random_compatible_pair(&grid, 0.05, &mut rng(seed));
        let r = rhs(&pair, FlowKind::CompatibleDstard).unwrap();
        let k = r.k.unwrap();
        prop_assert!(anticommutator(pair.j().tensor(), &k) <= 1e-10 * k.max_abs().max(1.0));
    }

    /// Compatible flows need compatible data. The tamed and DeTurck flows
    /// accept tamed data, and the tamed flow leaves J alone.
    #[test]
    fn flow_kinds_guard_their_domain(seed in any::<u64>()) {
        let grid = torus(&[8, 8, 4, 4]);
        let pair = random_tamed_pair(&grid, 0.05, &mut rng(seed));
        for kind in [FlowKind::CompatibleDstard, FlowKind::DstardRicci] {
            prop_assert!(rhs(&pair, kind).is_err(), "{}", kind.name());
        }
        prop_assert!(rhs(&pair, FlowKind::Deturck).is_ok());
        let r = rhs(&pair, FlowKind::TamedDstard).unwrap();
        prop_assert!(r.k.is_none());
        let after = evolve(&pair, FlowKind::TamedDstard, 1e-3, 3);
        prop_assert!(max_diff(after.pair.j().tensor(), pair.j().tensor()) == 0.0);
    }

    /// One compatible step leaves ω J-invariant up to the integrator error.
    #[test]
    fn compatible_step_stays_compatible(seed in any::<u64>()) {
        let grid = torus(&[8, 8, 4, 4]);
        let pair = random_compatible_pair(&grid, 0.05, &mut rng(seed));
        let cfg = FlowConfig::new(FlowKind::CompatibleDstard, 1.0);
        let dt = cfg.time_step(&grid);
        let after = evolve(&pair, FlowKind::CompatibleDstard, dt, 2);
        let defect = anti_invariant_part(after.pair.omega(), after.pair.j()).unwrap().max_abs();
        prop_assert!(defect <= 1e-8, "{defect}");
    }
}

/// Halving Δt cuts the error at a fixed time by about 2⁴ = 16.
#[test]
fn rk4_is_fourth_order_in_time() {
    let grid = torus(&[8, 8, 4, 4]);
    for (kind, pair) in [
        (FlowKind::TamedDstard, random_tamed_pair(&grid, 0.1, &mut rng(5))),
        (FlowKind::CompatibleDstard, random_compatible_pair(&grid, 0.05, &mut rng(6))),
    ] {
        let dt = FlowConfig::new(kind, 1.0).time_step(&grid) * 0.9;
        let t_end = 4.0 * dt;
        let reference = evolve(&pair, kind, t_end / 64.0, 64);
        let errs: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&n| {
                let s = evolve(&pair, kind, t_end / n as f64, n);
                max_diff(s.pair.omega(), reference.pair.omega()).max(max_diff(s.pair.j().tensor(), reference.pair.j().tensor()))
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.7, "{}: {errs:?}", kind.name());
        }
    }
}

/// The public K₁ and the K carried by the compatible right-hand side agree.
#[test]
fn rhs_k_is_k1_of_theta() {
    let grid = torus(&[8, 8, 4, 4]);
    let pair = random_compatible_pair(&grid, 0.05, &mut rng(9));
    let r = rhs(&pair, FlowKind::CompatibleDstard).unwrap();
    let k1 = flows::k1(&pair, &r.theta).unwrap();
    assert!(max_diff(&k1, r.k.as_ref().unwrap()) <= 1e-14);
}

/// On a surface every two-form is closed, so the d*d flows do not move.
#[test]
fn surface_flows_are_stationary() {
    let grid = torus(&[16, 16]);
    let pair = random_compatible_pair(&grid, 0.1, &mut rng(2));
    for kind in [FlowKind::TamedDstard, FlowKind::CompatibleDstard] {
        let mut cfg = FlowConfig::new(kind, 0.05);
        cfg.monitor_every = 1;
        let out = flows::run(pair.clone(), &cfg, None).unwrap();
        assert!(out.error.is_none(), "{:?}", out.error);
        assert_eq!(out.state.diagnostics.h0, 0.0);
        assert!(max_diff(out.state.pair.omega(), pair.omega()) == 0.0);
        assert!(max_diff(out.state.pair.j().tensor(), pair.j().tensor()) <= 1e-14);
    }
}
