use super::*;
use crate::rng::rng_for;
use rand::Rng;

fn spec_321() -> SystemSpec {
    SystemSpec::sample(3, 2, 1, 17)
}

fn assert_vec_close(a: Vec3, b: Vec3, tol: f64) {
    assert!((a - b).norm() <= tol, "{a:?} vs {b:?} (tol {tol})");
}

#[test]
fn sample_minimal_system_is_one_particle() {
    let spec = SystemSpec::sample(1, 0, 0, 0);
    let (state, objects) = sample_system(&spec, 5).unwrap();
    assert_eq!(objects.len(), 1);
    assert_eq!(objects[0].kind, ObjectKind::Particle);
    assert_eq!(state.positions.len(), 1);
    assert!(matches!(state.gen[0], GenCoord::Particle));
}

#[test]
fn sampled_stick_respects_length_range() {
    let spec = SystemSpec::sample(0, 1, 0, 3);
    let (state, _) = sample_system(&spec, 42).unwrap();
    let len = (state.positions[0] - state.positions[1]).norm();
    let (lo, hi) = spec.stick_length_range;
    assert!(len >= lo - 1e-12 && len <= hi + 1e-12, "length {len}");
}

#[test]
fn sample_system_is_deterministic() {
    let spec = spec_321();
    let a = sample_system(&spec, 9).unwrap();
    let b = sample_system(&spec, 9).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn sampled_arm_velocities_are_consistent() {
    let spec = spec_321();
    let (state, objects) = sample_system(&spec, 1).unwrap();
    for (obj, gen) in objects.iter().zip(&state.gen) {
        match gen {
            GenCoord::Particle => {}
            GenCoord::Stick { q, q_dot, theta_dot, rest_half } => {
                for &i in &obj.members {
                    let arm = state.positions[i] - *q;
                    assert!((arm.norm() - rest_half).abs() / rest_half < 1e-9);
                    assert_vec_close(state.velocities[i] - *q_dot, cross(*theta_dot, arm), 1e-9);
                }
            }
            GenCoord::Hinge { q, q_dot, theta_dot, rest } => {
                for k in 0..2 {
                    let i = obj.members[k + 1];
                    let arm = state.positions[i] - *q;
                    assert!((arm.norm() - rest[k]).abs() / rest[k] < 1e-9);
                    assert_vec_close(state.velocities[i] - *q_dot, cross(theta_dot[k], arm), 1e-9);
                }
            }
        }
    }
}

#[test]
fn single_particle_feels_no_force() {
    let f = pairwise_forces(&[Vec3::new(1.0, 2.0, 3.0)], &[1.0], 1e-2);
    assert_eq!(f[0], Vec3::ZERO);
}

#[test]
fn like_charges_repel_along_axis() {
    let xs = [Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)];
    let f = pairwise_forces(&xs, &[1.0, 1.0], 1e-2);
    assert!(f[0].x < 0.0 && f[1].x > 0.0);
    assert_eq!(f[0].y, 0.0);
    assert_eq!(f[0], -f[1]);
}

#[test]
fn forces_sum_to_zero() {
    let mut rng = rng_for(0, 77, 0);
    for _ in 0..50 {
        let n = rng.gen_range(2..8);
        let xs: Vec<Vec3> = (0..n).map(|_| crate::rng::gaussian_vec3(&mut rng) * 2.0).collect();
        let cs: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let f = pairwise_forces(&xs, &cs, 1e-2);
        let total = f.iter().fold(Vec3::ZERO, |acc, &v| acc + v);
        assert!(total.norm() < 1e-13, "net force {total:?}");
    }
}

#[test]
fn force_free_particle_moves_straight() {
    let (x, v) = step_free_particle(Vec3::new(1.0, 1.0, 1.0), Vec3::new(0.5, 0.0, -0.5), Vec3::ZERO, 0.25);
    assert_eq!(v, Vec3::new(0.5, 0.0, -0.5));
    assert_eq!(x, Vec3::new(1.125, 1.0, 0.875));
}

#[test]
fn one_step_expansion_from_rest() {
    let (x, v) = step_free_particle(Vec3::ZERO, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 0.1);
    assert_vec_close(v, Vec3::new(0.1, 0.0, 0.0), 1e-15);
    assert_vec_close(x, Vec3::new(0.01, 0.0, 0.0), 1e-15);
}

/// Refinement study: integrating a two-charge system with step dt has global
/// error ~ O(dt) against a dt/10 reference, so halving dt should roughly
/// halve the error.
#[test]
fn integration_error_shrinks_linearly_in_dt() {
    let spec = SystemSpec {
        particles: 2,
        sticks: 0,
        hinges: 0,
        charges: vec![1.0, -1.0],
        stick_length_range: (0.5, 1.5),
        box_scale: 1.0,
        };
    let (state, objects) = sample_system(&spec, 2).unwrap();
    let run = |dt: f64, steps: usize| {
        simulate(&state, &objects, &spec.charges, steps, dt, 1e-2).unwrap().positions
    };
    let reference = run(0.001, 1000);
    let err = |positions: &[Vec3]| {
        positions
            .iter()
            .zip(&reference)
            .map(|(a, b)| (*a - *b).norm_squared())
            .sum::<f64>()
            .sqrt()
    };
    let coarse = err(&run(0.01, 100));
    let fine = err(&run(0.005, 200));
    let ratio = coarse / fine;
    assert!(ratio > 1.5 && ratio < 3.0, "ratio {ratio} (coarse {coarse:e}, fine {fine:e})");
}

#[test]
fn free_stick_translates_with_exact_length() {
    let mut q = Vec3::new(0.0, 0.0, 0.0);
    let mut q_dot = Vec3::new(0.3, -0.1, 0.2);
    let mut theta_dot = Vec3::ZERO;
    // axis-aligned arm of exactly representable length
    let mut arm = Vec3::new(0.5, 0.0, 0.0);
    for _ in 0..100 {
        let (new_arm, _, _) =
            step_stick(&mut q, &mut q_dot, &mut theta_dot, arm, 0.5, Vec3::ZERO, Vec3::ZERO, 0.01);
        arm = new_arm;
    }
    assert_eq!(arm, Vec3::new(0.5, 0.0, 0.0));
    assert_eq!(q_dot, Vec3::new(0.3, -0.1, 0.2));
    assert_vec_close(q, Vec3::new(0.3, -0.1, 0.2), 1e-12);
}

#[test]
fn torque_couple_spins_without_translating() {
    let mut q = Vec3::ZERO;
    let mut q_dot = Vec3::ZERO;
    let mut theta_dot = Vec3::ZERO;
    let arm = Vec3::new(1.0, 0.0, 0.0);
    let f1 = Vec3::new(0.0, 2.0, 0.0);
    let (_, _, _) = step_stick(&mut q, &mut q_dot, &mut theta_dot, arm, 1.0, f1, -f1, 0.1);
    assert_eq!(q_dot, Vec3::ZERO);
    // torque = arm x f1 + (-arm) x (-f1) = 2 (arm x f1); inertia = 2|arm|^2
    assert_vec_close(theta_dot, cross(arm, f1) * 0.1, 1e-15);
}

#[test]
fn stick_length_drift_stays_below_1e6_under_random_forces() {
    let mut rng = rng_for(1, 13, 0);
    let mut q = Vec3::ZERO;
    let mut q_dot = Vec3::new(0.1, 0.0, 0.0);
    let mut theta_dot = Vec3::new(0.0, 0.0, 1.0);
    let rest_half = 0.6180339887498949;
    let mut arm = Vec3::new(rest_half, 0.0, 0.0);
    for _ in 0..1000 {
        let f1 = crate::rng::gaussian_vec3(&mut rng);
        let f2 = crate::rng::gaussian_vec3(&mut rng);
        let (new_arm, _, _) =
            step_stick(&mut q, &mut q_dot, &mut theta_dot, arm, rest_half, f1, f2, 1e-3);
        arm = new_arm;
    }
    let drift = (arm.norm() - rest_half).abs() / rest_half;
    assert!(drift < 1e-6, "drift {drift:e}");
}

#[test]
fn hinge_at_rest_with_no_forces_stays_at_rest() {
    let (a0, thdd1, thdd2) = hinge_accels(
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        0,
    )
    .unwrap();
    assert_eq!(a0, Vec3::ZERO);
    assert_eq!(thdd1, Vec3::ZERO);
    assert_eq!(thdd2, Vec3::ZERO);
}

/// Orthogonal unit arms make the hinge matrix diag(2, 2, 1); with the
/// aggregate-per-mass vector (2, 0, 0) the pivot acceleration is (1, 0, 0).
#[test]
fn hinge_hand_case_orthogonal_unit_arms() {
    let (a0, _, _) = hinge_accels(
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::new(6.0, 0.0, 0.0), // aggregate f/3 = (2,0,0)
        Vec3::ZERO,
        Vec3::ZERO,
        0,
    )
    .unwrap();
    assert_vec_close(a0, Vec3::new(1.0, 0.0, 0.0), 1e-14);
}

#[test]
fn hinge_rejects_degenerate_arm() {
    let err = hinge_accels(
        Vec3::new(1e-12, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        Vec3::ZERO,
        3,
    )
    .unwrap_err();
    assert!(matches!(err, SimError::DegenerateArm { object: 3, .. }));
}

/// Reconstructing the member accelerations from the solved pivot
/// acceleration must reproduce the aggregate: a0 + a1 + a2 = f / m_total.
#[test]
fn hinge_newton_consistency_on_random_configurations() {
    let mut rng = rng_for(0, 21, 0);
    for _ in 0..1000 {
        let arm1 = crate::rng::unit_vec3(&mut rng) * rng.gen_range(0.3..2.0);
        let arm2 = crate::rng::unit_vec3(&mut rng) * rng.gen_range(0.3..2.0);
        let td1 = crate::rng::gaussian_vec3(&mut rng);
        let td2 = crate::rng::gaussian_vec3(&mut rng);
        let f0 = crate::rng::gaussian_vec3(&mut rng);
        let f1 = crate::rng::gaussian_vec3(&mut rng);
        let f2 = crate::rng::gaussian_vec3(&mut rng);
        let (a0, thdd1, thdd2) = hinge_accels(arm1, arm2, td1, td2, f0, f1, f2, 0).unwrap();
        let a1 = a0 + cross(thdd1, arm1) + cross(td1, cross(td1, arm1));
        let a2 = a0 + cross(thdd2, arm2) + cross(td2, cross(td2, arm2));
        let total = a0 + a1 + a2;
        let expected = (f0 + f1 + f2) / 3.0;
        assert_vec_close(total, expected, 1e-12 * (1.0 + expected.norm()));
    }
}

#[test]
fn single_free_particle_has_closed_form_trajectory() {
    let spec = SystemSpec::sample(1, 0, 0, 4);
    let (state, objects) = sample_system(&spec, 8).unwrap();
    let steps = 1000;
    let dt = 1e-3;
    let out = simulate(&state, &objects, &spec.charges, steps, dt, 1e-2).unwrap();
    let expected = state.positions[0] + state.velocities[0] * (steps as f64 * dt);
    assert_vec_close(out.positions[0], expected, 1e-12 * (1.0 + expected.norm()));
}

#[test]
fn momentum_is_conserved_without_hinges() {
    for (p, s) in [(2usize, 1usize), (0, 2), (3, 2)] {
        let mut spec = SystemSpec::sample(p, s, 0, 31);
        spec.box_scale = 1.2;
        let (state, objects) = sample_system(&spec, 6).unwrap();
        let total = |st: &SystemState| st.velocities.iter().fold(Vec3::ZERO, |a, &v| a + v);
        let before = total(&state);
        let out = simulate(&state, &objects, &spec.charges, 1000, 1e-3, 1e-2).unwrap();
        let after = total(&out);
        assert!((after - before).norm() < 1e-6, "momentum drift {:?}", after - before);
    }
}

#[test]
fn full_system_constraint_drift_below_1e6() {
    let spec = spec_321();
    let (state, objects) = sample_system(&spec, 0).unwrap();
    let out = simulate(&state, &objects, &spec.charges, 1000, 1e-3, 1e-2).unwrap();
    let drift = max_relative_drift(&out, &objects);
    assert!(drift < 1e-6, "drift {drift:e}");
}

#[test]
fn refinement_oracle_full_system() {
    let spec = spec_321();
    let (state, objects) = sample_system(&spec, 1).unwrap();
    let coarse = simulate(&state, &objects, &spec.charges, 1000, 1e-3, 1e-2).unwrap();
    let fine = simulate(&state, &objects, &spec.charges, 10_000, 1e-4, 1e-2).unwrap();
    let n = coarse.positions.len() as f64;
    let rmse = (coarse
        .positions
        .iter()
        .zip(&fine.positions)
        .map(|(a, b)| (*a - *b).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    assert!(rmse < 1e-3, "rmse {rmse:e}");
}

#[test]
fn object_partition_is_validated() {
    assert!(check_partition(&[RigidObject::particle(0), RigidObject::stick(1, 2)], 3).is_ok());
    assert!(check_partition(&[RigidObject::particle(0), RigidObject::particle(0)], 1).is_err());
    assert!(check_partition(&[RigidObject::particle(0)], 2).is_err());
    assert!(check_partition(&[RigidObject::stick(0, 5)], 2).is_err());
}

mod dataset {
    use super::*;
    use std::fs;

    fn tiny_dataset() -> TrajectoryDataset {
        let spec = SystemSpec::sample(1, 1, 1, 2);
        generate_dataset(&spec, 4, 50, 1e-3, 1e-2, 7).unwrap().0
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&back, dir2.path()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(FRAMES_FILE)).unwrap(),
            fs::read(dir2.path().join(FRAMES_FILE)).unwrap()
        );
        assert_eq!(
            fs::read(dir.path().join(META_FILE)).unwrap(),
            fs::read(dir2.path().join(META_FILE)).unwrap()
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SystemSpec::sample(1, 1, 0, 2);
        let a = generate_dataset(&spec, 3, 20, 1e-3, 1e-2, 5).unwrap().0;
        let b = generate_dataset(&spec, 3, 20, 1e-3, 1e-2, 5).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn finals_reproduce_from_stored_initial_state() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        for sample in &back.samples {
            let rerun = simulate(
                &sample.initial,
                &back.objects,
                &back.spec.charges,
                back.steps,
                back.dt,
                back.softening,
            )
            .unwrap();
            assert_eq!(rerun.positions, sample.final_positions);
        }
    }

    #[test]
    fn truncated_frames_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny_dataset(), dir.path()).unwrap();
        let frames = dir.path().join(FRAMES_FILE);
        let bytes = fs::read(&frames).unwrap();
        fs::write(&frames, &bytes[..bytes.len() - 9]).unwrap();
        match read_dataset(dir.path()) {
            Err(SimError::Malformed { offset, .. }) => assert!(offset > 0),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn meta_payload_length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny_dataset(), dir.path()).unwrap();
        let meta_path = dir.path().join(META_FILE);
        let text = fs::read_to_string(&meta_path).unwrap();
        // claim one more sample than the payload holds (and pad rest_lengths
        // to keep the JSON internally consistent)
        let mut meta: serde_json::Value = serde_json::from_str(&text).unwrap();
        meta["num_samples"] = serde_json::json!(5);
        let row = meta["rest_lengths"][0].clone();
        meta["rest_lengths"].as_array_mut().unwrap().push(row);
        fs::write(&meta_path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(SimError::Malformed { .. })));
    }

    #[test]
    fn corrupt_json_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&tiny_dataset(), dir.path()).unwrap();
        fs::write(dir.path().join(META_FILE), b"{not json").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(SimError::Malformed { .. })));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SystemSpec::sample(2, 0, 0, 1);
        let (ds, report) = generate_dataset(&spec, 0, 10, 1e-3, 1e-2, 0).unwrap();
        assert_eq!(report.samples, 0);
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.is_empty());
    }
}

/// The generation contract behind parallel dataset building: sample `i`
/// depends only on `(seed, i)`.
#[test]
fn samples_depend_only_on_seed_and_index() {
    let spec = SystemSpec::sample(1, 1, 0, 2);
    let (ds, _) = generate_dataset(&spec, 3, 25, 1e-3, 1e-2, 9).unwrap();
    let objects = spec.object_table();
    for i in [0usize, 2] {
        let (initial, _) =
            sample_system(&spec, crate::rng::subseed(9, super::tags::SAMPLE, i as u64)).unwrap();
        assert_eq!(initial, ds.samples[i].initial);
        let rerun = simulate(&initial, &objects, &spec.charges, 25, 1e-3, 1e-2).unwrap();
        assert_eq!(rerun.positions, ds.samples[i].final_positions);
    }
}

#[test]
fn particle_counts_follow_composition() {
    assert_eq!(SystemSpec::sample(3, 2, 1, 0).n_particles(), 10);
    assert_eq!(SystemSpec::sample(1, 2, 0, 0).n_particles(), 5);
    assert_eq!(SystemSpec::sample(0, 10, 0, 0).n_particles(), 20);
}

#[test]
fn vanishing_dt_approaches_the_identity() {
    let spec = spec_321();
    let (state, objects) = sample_system(&spec, 3).unwrap();
    let out = simulate(&state, &objects, &spec.charges, 5, 1e-9, 1e-2).unwrap();
    for (a, b) in out.positions.iter().zip(&state.positions) {
        assert!((*a - *b).norm() < 1e-7);
    }
}
