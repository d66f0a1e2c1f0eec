//! Property tests over random inputs: operator identities, serialization
//! round trips and solver invariants.

use std::sync::Arc;

use proptest::prelude::*;

use visco2d::dynamics::{simulate, Scheme, StepperConfig};
use visco2d::field::{
    curl_curl, dealias, divergence, gradient, inverse_laplacian, laplacian, leray_project, vector_laplacian, Dealias,
    GridSpec, MatrixField, ScalarField, Spectral, VectorField,
};
use visco2d::flux::{DiagnosticsBuilder, DiagnosticsRecord, DiagnosticsRecorder, DIAGNOSTICS_COLUMNS};
use visco2d::io::{Checkpoint, NdjsonSink, RunConfig};
use visco2d::state::{constraint_residuals, epsilon0, preflow_init, InitialDataSpec, PreflowVelocity, SimState};

const N: usize = 16;

fn sp() -> Arc<Spectral<f64>> {
    Spectral::new(GridSpec::new(N, Dealias::TwoThirds).unwrap())
}

fn grid_values() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, N * N)
}

/// Random field restricted to the retained modes.
fn smooth(s: &Arc<Spectral<f64>>, v: Vec<f64>) -> ScalarField<f64> {
    dealias(&ScalarField::from_values(s, v))
}

fn vector(s: &Arc<Spectral<f64>>, a: Vec<f64>, b: Vec<f64>) -> VectorField<f64> {
    VectorField::new(smooth(s, a), smooth(s, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projection_is_idempotent_self_adjoint_and_solenoidal(
        a in grid_values(), b in grid_values(), c in grid_values(), d in grid_values()
    ) {
        let s = sp();
        let v = vector(&s, a, b);
        let w = vector(&s, c, d);
        let pv = leray_project(&v);
        let scale = v.l2_norm_sq().sqrt() * w.l2_norm_sq().sqrt();
        prop_assert!((pv.inner(&w) - v.inner(&leray_project(&w))).abs() <= 1e-10 * scale);
        prop_assert!(leray_project(&pv).sub(&pv).l2_norm_sq().sqrt() <= 1e-12 * v.l2_norm_sq().sqrt());
        prop_assert!(divergence(&pv).linf() <= 1e-11 * (1.0 + v.linf()));
    }

    #[test]
    fn laplacian_is_grad_div_minus_curl_curl(a in grid_values(), b in grid_values()) {
        let s = sp();
        let v = vector(&s, a, b);
        let lap = vector_laplacian(&v);
        let rebuilt = gradient(&divergence(&v)).sub(&curl_curl(&v));
        prop_assert!(rebuilt.sub(&lap).linf() <= 1e-12 * lap.linf().max(1e-300));
    }

    #[test]
    fn inverse_laplacian_undoes_laplacian_on_mean_free_fields(a in grid_values()) {
        let s = sp();
        let f = smooth(&s, a);
        let f0 = f.sub(&ScalarField::constant(&s, f.mean()));
        let back = laplacian(&inverse_laplacian(&f0)).scale(-1.0);
        prop_assert!(back.sub(&f0).l2_norm_sq().sqrt() <= 1e-12 * f0.l2_norm_sq().sqrt().max(1e-300));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(parts in proptest::collection::vec(grid_values(), 8), t in 0.0f64..10.0, delta in 0.0f64..1.0) {
        let g = GridSpec::new(N, Dealias::TwoThirds).unwrap();
        let mut it = parts.into_iter();
        let values: [Vec<f64>; 6] = std::array::from_fn(|_| it.next().unwrap());
        let correction = Some([it.next().unwrap(), it.next().unwrap()]);
        let c = Checkpoint { grid: g, t, delta, values, correction };
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &c);
        let state: SimState<f64> = back.to_state().unwrap();
        let again = Checkpoint::from_state(&state);
        prop_assert_eq!(again, c);
    }

    #[test]
    fn constant_states_have_exactly_zero_residuals(u1 in -2.0f64..2.0, u2 in -2.0f64..2.0, shear in -3.0f64..3.0) {
        let s = sp();
        let u = VectorField::from_fn(&s, |_, _| [u1, u2]);
        let f = MatrixField::from_fn(&s, |_, _| [[1.0, shear], [0.0, 1.0]]);
        let r = constraint_residuals(&SimState::new(u, f, 0.0, 0.1));
        prop_assert_eq!(r.max(), 0.0);
    }
}

fn config_strategy() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![Just(16usize), Just(32), Just(64), Just(128)],
        any::<bool>(),
        (1u32..1000).prop_map(|k| k as f64 * 1e-4),
        any::<bool>(),
        1e-3f64..10.0,
        0.0f64..1.0,
        (0.0f64..1.0, any::<u64>(), 1.0f64..4.0),
        0u32..50,
        proptest::option::of(1e-4f64..1e-1),
        (1u64..100, 0u64..100, any::<bool>(), any::<bool>()),
    )
        .prop_map(|(n, none, dt, rk2, mu, delta, (amp, seed, kmax), steps, eps0, (cad, every, ff, dn))| {
            let mut c = RunConfig::default();
            c.grid = GridSpec::new(n, if none { Dealias::None } else { Dealias::TwoThirds }).unwrap();
            c.stepper.dt = dt;
            c.stepper.scheme = if rk2 { Scheme::IfRk2 } else { Scheme::IfRk4 };
            c.stepper.mu = mu;
            c.stepper.freeze_f = ff;
            c.stepper.drop_nonlinear = dn;
            c.delta = delta;
            c.init.amplitude = amp;
            c.init.seed = seed;
            c.init.band = (1.0, kmax);
            c.init.preflow_velocity = if seed % 2 == 0 { PreflowVelocity::Cellular } else { PreflowVelocity::Random { seed } };
            c.t_end = steps as f64 * dt;
            c.target_eps0 = eps0;
            c.output.cadence = cad;
            c.output.checkpoint_every = every;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(c in config_strategy()) {
        let parsed = RunConfig::parse(&c.serialize()).unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(RunConfig::parse(&parsed.serialize()).unwrap(), parsed);
    }

    #[test]
    fn diagnostics_lines_are_flat_objects_with_fixed_columns(
        xs in proptest::collection::vec(prop_oneof![any::<f64>(), Just(f64::NAN), Just(f64::INFINITY)], 33),
        step in any::<u32>(),
    ) {
        let mut row: Vec<Option<f64>> = vec![Some(xs[0]), Some(step as f64)];
        row.extend(xs[1..].iter().map(|&x| Some(x)));
        row[24] = None;
        row.push(Some(1.0));
        let r = DiagnosticsRecord::from_row(&row).unwrap();
        let mut sink = NdjsonSink::new(Vec::new());
        visco2d::flux::RecordSink::write(&mut sink, &r).unwrap();
        let text = String::from_utf8(sink.out).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim_end()).unwrap();
        let obj = v.as_object().unwrap();
        let keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        let mut want: Vec<&str> = DIAGNOSTICS_COLUMNS.to_vec();
        want.sort();
        let mut got = keys.clone();
        got.sort();
        prop_assert_eq!(got, want);
        for (i, c) in DIAGNOSTICS_COLUMNS.iter().enumerate() {
            let cell = &obj[*c];
            prop_assert!(!cell.is_object() && !cell.is_array());
            match row[i] {
                None => prop_assert!(cell.is_null()),
                Some(x) if x.is_finite() => prop_assert_eq!(cell.as_f64().unwrap().to_bits(), x.to_bits()),
                Some(x) => prop_assert_eq!(cell.as_str().unwrap().parse::<f64>().unwrap().is_nan(), x.is_nan()),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn energy_decreases_and_runs_are_deterministic(seed in any::<u64>(), amp in 0.02f64..0.1) {
        let s = sp();
        let spec = InitialDataSpec { amplitude: amp, seed, preflow_velocity: PreflowVelocity::Random { seed }, ..Default::default() };
        let s0 = visco2d::state::preflow_init_on(&spec, &s).unwrap().with_delta(0.05);
        let cfg = StepperConfig { dt: 0.01, ..Default::default() };
        let run = || {
            let mut rec = DiagnosticsRecorder::new(DiagnosticsBuilder::new(1.0, None));
            simulate(&s0, 0.2, &cfg, 1, &mut [&mut rec]).unwrap();
            rec.records
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            let bits = |r: &DiagnosticsRecord| r.row().iter().map(|v| v.map(f64::to_bits)).collect::<Vec<_>>();
            prop_assert_eq!(bits(x), bits(y));
        }
        for w in a.windows(2) {
            prop_assert!(w[1].energy <= w[0].energy * (1.0 + 1e-12), "{} -> {}", w[0].energy, w[1].energy);
        }
    }

    #[test]
    fn epsilon0_is_grid_independent(seed in any::<u64>(), amp in 0.05f64..0.3) {
        let spec = InitialDataSpec { amplitude: amp, seed, ..Default::default() };
        let coarse: SimState<f64> = preflow_init(&spec, GridSpec::new(32, Dealias::TwoThirds).unwrap()).unwrap();
        let fine: SimState<f64> = preflow_init(&spec, GridSpec::new(64, Dealias::TwoThirds).unwrap()).unwrap();
        let (a, b) = (epsilon0(&coarse), epsilon0(&fine));
        prop_assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
    }
}
