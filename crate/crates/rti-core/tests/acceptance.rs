//! End-to-end acceptance battery. Eight numbered criteria gate a release:
//! exact algebra identities, deployment-planning numbers, the synthetic
//! policy-comparison study, oracle equivalence of the constrained solvers,
//! the motion suite, detection-curve ordering, vehicle recognition, and
//! byte-level determinism of the whole battery.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see one
//! [PASS] line per criterion.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rti_core::estimators::{solve_generic, solve_map_gaussian};
use rti_core::geometry::{
    enumerate_links, segment_length_in_grid, segment_length_in_voxel, GridSpec, Link,
    SensorLayout,
};
use rti_core::motion::shift_operator;
use rti_core::planning::{
    max_velocities, node_capacity, road_length_from_spacing, scan_time, PacketBudget, ScanParams,
};
use rti_core::priors::{covariance_prior, QConstruction, RegularizerQ};
use rti_core::repro::{self, BatterySuite};
use rti_core::weights::{build_weight_matrix, MagnitudeModel, SelectionModel};

static SUITE: OnceLock<BatterySuite> = OnceLock::new();

fn suite() -> &'static BatterySuite {
    SUITE.get_or_init(|| {
        repro::run_full_suite(repro::DEFAULT_SUITE_SEED).expect("battery suite runs")
    })
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

#[test]
fn criterion_1_exact_algebra() {
    // Gaussian-prior posterior mean vs the equivalent penalized solve.
    let grid = GridSpec::new((4, 3, 1), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
    let layout = SensorLayout::full_mesh(&[
        [0.0, 0.0, 0.5],
        [4.0, 0.0, 0.5],
        [4.0, 3.0, 0.5],
        [0.0, 3.0, 0.5],
        [2.0, -0.5, 0.5],
        [2.0, 3.5, 0.5],
    ]);
    let links = enumerate_links(&layout).unwrap();
    let w = build_weight_matrix(&grid, &links, SelectionModel::Line, MagnitudeModel::Line, false)
        .unwrap()
        .values;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = DVector::from_fn(w.nrows(), |_, _| rng.random_range(-1.0..3.0));
    let sigma_n_sq = 1.5;
    let prior = covariance_prior(&grid, 2.0, 3.0).unwrap();

    let x_map = solve_map_gaussian(&w, &y, &prior, sigma_n_sq).unwrap().x;
    let c_inv = prior.c_x.clone().cholesky().unwrap().inverse();
    let q_eq = &c_inv * sigma_n_sq;
    let factor = q_eq.clone().cholesky().unwrap().l().transpose();
    let rq = RegularizerQ::from_operators(
        vec![(1.0, factor)],
        QConstruction::SumOfSquaredDiffs,
        grid.voxel_count(),
    );
    let x_tik = solve_generic(&w, &y, 1.0, &rq, 0.0).unwrap().x;
    let diff = max_abs_diff(&x_map, &x_tik);
    assert!(
        diff <= 1e-9,
        "[FAIL] 1. posterior-mean and penalized solves differ by {diff:e}"
    );

    // Stationarity of the generic solve.
    let q = RegularizerQ::build(&grid, QConstruction::AveragedFwdBck).unwrap();
    let (alpha, beta) = (0.7, -0.3);
    let x = solve_generic(&w, &y, alpha, &q, beta).unwrap().x;
    let a = w.transpose() * &w + &q.q * alpha;
    let b = w.transpose() * &y + DVector::from_element(grid.voxel_count(), beta);
    let rel = (a * &x - &b).norm() / b.norm();
    assert!(
        rel < 1e-8,
        "[FAIL] 1. normal-equation residual {rel:e} exceeds 1e-8"
    );

    // Three-voxel averaged difference matrix, exact in floats.
    let g3 = GridSpec::new((3, 1, 1), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
    let q3 = RegularizerQ::build(&g3, QConstruction::AveragedFwdBck).unwrap();
    let expected =
        DMatrix::from_row_slice(3, 3, &[1.5, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.5]);
    assert_eq!(q3.q, expected, "[FAIL] 1. averaged 3-voxel matrix not exact");

    // Shift-operator identities, exact in floats.
    let gs = GridSpec::new((5, 2, 2), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
    for p in -5i64..=5 {
        assert_eq!(
            shift_operator(&gs, p).transpose(),
            shift_operator(&gs, -p),
            "[FAIL] 1. transpose identity broke at shift {p}"
        );
    }
    let j1 = shift_operator(&gs, 1);
    let mut pow = DMatrix::identity(gs.voxel_count(), gs.voxel_count());
    for _ in 0..gs.nx {
        pow = &pow * &j1;
    }
    assert_eq!(
        pow,
        DMatrix::zeros(gs.voxel_count(), gs.voxel_count()),
        "[FAIL] 1. shift is not nilpotent at the grid length"
    );
    assert_eq!(
        shift_operator(&gs, 2) * shift_operator(&gs, 1),
        shift_operator(&gs, 3),
        "[FAIL] 1. shift composition broke"
    );

    // Chords through all voxels sum to the chord through the whole box.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let grid = GridSpec::new((4, 3, 2), (0.8, 1.1, 0.6), [-1.0, 0.5, 0.0]).unwrap();
    let (lo, hi) = grid.bounding_box();
    for trial in 0..10_000 {
        let rand_point = |rng: &mut ChaCha8Rng| {
            Point3::new(
                rng.random_range(lo.x - 2.0..hi.x + 2.0),
                rng.random_range(lo.y - 2.0..hi.y + 2.0),
                rng.random_range(lo.z - 2.0..hi.z + 2.0),
            )
        };
        let a = rand_point(&mut rng);
        let b = rand_point(&mut rng);
        let link = Link {
            link_id: 0,
            tx_id: 0,
            rx_id: 1,
            endpoints: [a, b],
            d: (b - a).norm(),
        };
        let total = segment_length_in_grid(&grid, &link);
        let sum: f64 = (0..grid.voxel_count())
            .map(|n| segment_length_in_voxel(&grid, n, &link).unwrap())
            .sum();
        assert!(
            (sum - total).abs() <= 1e-9 * total.max(1e-12),
            "[FAIL] 1. chord conservation broke on trial {trial}: {sum} vs {total}"
        );
    }

    println!("[PASS] 1. exact algebra identities hold");
}

#[test]
fn criterion_2_planning_numbers() {
    let scan = ScanParams {
        l_rti_bits: 104.0 * 8.0,
        r_z_bps: 38_400.0,
        t_guard_s: 0.0,
        t_proc_s: 0.0,
        k: 81,
    };
    let t = scan_time(&scan).unwrap();
    assert!(
        (t - 1.755).abs() <= 0.005 * 1.755,
        "[FAIL] 2. scan time {t} s is outside 1.755 s +/- 0.5%"
    );

    let normal = node_capacity(&PacketBudget::normal()).unwrap();
    let frag = node_capacity(&PacketBudget::fragmentation()).unwrap();
    assert_eq!(normal, 81, "[FAIL] 2. normal packet capacity");
    assert_eq!(frag, 252, "[FAIL] 2. fragmentation packet capacity");

    let road = road_length_from_spacing(9, 3.0).unwrap();
    let (_, v_det) = max_velocities(0.5, road, 1.0).unwrap();
    assert_eq!(road, 24.0, "[FAIL] 2. road length from 9 poles at 3 m");
    assert_eq!(v_det, 24.0, "[FAIL] 2. detectable velocity bound");

    println!("[PASS] 2. planning numbers match the reference deployment");
}

#[test]
fn criterion_3_policy_battery() {
    let battery = &suite().negative_policy;
    let ty_best = battery.truncate_y.best_mean();
    let it_best = battery.iterative.best_mean();
    assert!(
        battery.iterative_beats_truncate_y(),
        "[FAIL] 3a. best iterative RMSE {it_best:.4} is not 25% below best truncate-y RMSE \
         {ty_best:.4} with 95% confidence (margin {:.4} +/- {:.4})",
        battery.margin_vs_truncate_y.mean,
        battery.margin_vs_truncate_y.std_err
    );
    assert!(
        battery.beta_improves_truncate_y(),
        "[FAIL] 3b. optimizing the bias weight does not improve truncate-y over beta = 0 \
         (gain {:.5} +/- {:.5})",
        battery.beta_gain_truncate_y.mean,
        battery.beta_gain_truncate_y.std_err
    );
    assert!(
        battery.iterative_monotone_in_alpha(),
        "[FAIL] 3c. iterative RMSE increases as alpha shrinks: steps {:?}",
        battery
            .alpha_steps_iterative
            .iter()
            .map(|s| s.mean)
            .collect::<Vec<_>>()
    );
    println!(
        "[PASS] 3. policy battery: best iterative RMSE {it_best:.3} vs best truncate-y \
         {ty_best:.3}, bias gain and alpha monotonicity confirmed"
    );
}

#[test]
fn criterion_4_oracle_equivalence() {
    let battery = &suite().oracle;
    assert!(
        battery.oracle_dominates(),
        "[FAIL] 4. some policy undercut the enumerated constrained optimum"
    );
    let frac = battery.pgm_match_fraction();
    assert!(
        frac >= 0.95,
        "[FAIL] 4. projected gradient matched the oracle on only {:.1}% of instances",
        100.0 * frac
    );
    assert!(
        battery.iterative_never_worse_than_truncate_x(),
        "[FAIL] 4. column-removal cost exceeded plain truncation somewhere"
    );
    println!(
        "[PASS] 4. oracle equivalence: constrained optimum dominates, projected gradient \
         within tolerance on {:.1}% of {} instances",
        100.0 * frac,
        battery.instances.len()
    );
}

#[test]
fn criterion_5_motion_suite() {
    let battery = &suite().motion;
    let clean = battery.noiseless_recovery_rate();
    let noisy = battery.noisy_recovery_rate();
    let stack = battery.stacking_improvement_rate();
    assert!(
        clean == 1.0,
        "[FAIL] 5. noiseless velocity recovery rate {clean} < 1"
    );
    assert!(
        noisy >= 0.8,
        "[FAIL] 5. noisy velocity recovery rate {noisy} < 0.8"
    );
    assert!(
        stack >= 0.9,
        "[FAIL] 5. stacking beat single-frame on only {stack} of trials"
    );
    println!(
        "[PASS] 5. motion suite: velocity recovery {:.0}%/{:.0}% (clean/noisy), stacking \
         improved {:.0}% of noisy trials",
        100.0 * clean,
        100.0 * noisy,
        100.0 * stack
    );
}

#[test]
fn criterion_6_detection_curves() {
    let battery = &suite().roc;
    for (name, curve) in [
        ("iterative", &battery.iterative),
        ("truncate-x", &battery.truncate_x),
    ] {
        assert!(
            curve.is_monotone(),
            "[FAIL] 6. {name} detection curve is not monotone"
        );
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert!(
            first.pf == 0.0 && first.pd == 0.0 && last.pf == 1.0 && last.pd == 1.0,
            "[FAIL] 6. {name} curve endpoints are not (0,0) and (1,1)"
        );
    }
    let margin = battery.dominance_margin();
    assert!(
        margin >= -0.02,
        "[FAIL] 6. iterative curve drops {:.3} below truncate-x somewhere on the grid",
        -margin
    );
    println!(
        "[PASS] 6. detection curves monotone with correct endpoints; iterative dominates \
         truncate-x (worst lead {margin:+.3})"
    );
}

#[test]
fn criterion_7_vehicle_recognition() {
    let battery = &suite().atr;
    let correct = battery.n_correct();
    assert!(
        correct >= 8,
        "[FAIL] 7. only {correct}/9 recognition runs correct: {:?}",
        battery
            .runs
            .iter()
            .map(|r| format!("{} -> {}", r.vehicle, r.predicted))
            .collect::<Vec<_>>()
    );
    assert!(
        battery.confusions_only_smallest(),
        "[FAIL] 7. a confusion did not involve the smallest vehicle class: {:?}",
        battery
            .runs
            .iter()
            .filter(|r| !r.correct)
            .map(|r| format!("{} -> {}", r.vehicle, r.predicted))
            .collect::<Vec<_>>()
    );
    println!("[PASS] 7. vehicle recognition: {correct}/9 runs correct");
}

#[test]
fn criterion_8_determinism() {
    let first = suite().fingerprint().unwrap();
    let fresh = repro::run_full_suite(repro::DEFAULT_SUITE_SEED)
        .unwrap()
        .fingerprint()
        .unwrap();
    assert!(
        first == fresh,
        "[FAIL] 8. rerunning the battery with the same seed changed its serialized output"
    );
    println!(
        "[PASS] 8. battery rerun is byte-identical ({} bytes serialized)",
        first.len()
    );
}
