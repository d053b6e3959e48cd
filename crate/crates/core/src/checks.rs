//! Executable property suites: equivariance, gradient correctness, simulator
//! dynamics, and the EGNN-reduction identity. The CLI `check` command and
//! the acceptance tests both run these.

use crate::ad::{finite_diff_param_grad, ParamStore, Session, Tensor};
use crate::geom::{cross, rodrigues_rotation, Mat3, Vec3};
use crate::model::{forward_positions, GraphBatch, ModelConfig, ModelKind, ModelSpecs};
use crate::rng::{gaussian_vec3, rng_for, subseed};
use crate::sim;
use crate::sim::{sample_system, Sample, SystemSpec};
use crate::train::{constraint_error, mse_loss};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

/// Fixed scenario of the integrator fidelity check: a representative (3,2,1)
/// system whose closest pair approach is typical. Pinned so the refinement
/// bound is a regression test rather than a sample of the encounter-distance
/// distribution (first-order integration error varies with close approaches).
pub const FIDELITY_SCENARIO_SEED: u64 = 105;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    /// One line per sub-check, machine-readable `name=value` pairs.
    pub checks: Vec<String>,
    /// First violated invariant, when failing.
    pub failure: Option<String>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        SuiteReport { suite: suite.into(), seed, passed: true, checks: Vec::new(), failure: None }
    }

    fn record(&mut self, name: &str, value: f64, bound: f64, upper: bool) {
        let ok = if upper { value < bound } else { value > bound };
        self.checks.push(format!(
            "{name}={value:.3e} {} {bound:.1e}: {}",
            if upper { "<" } else { ">" },
            if ok { "ok" } else { "VIOLATED" }
        ));
        if !ok && self.failure.is_none() {
            self.passed = false;
            self.failure = Some(format!(
                "{name} = {value:.6e} violates bound {bound:.1e} (seed {})",
                self.seed
            ));
        }
    }
}

/// Random orthogonal matrix, optionally with determinant -1.
pub fn random_orthogonal(rng: &mut ChaCha20Rng, reflect: bool) -> Mat3 {
    let r = rodrigues_rotation(gaussian_vec3(rng) * 2.0);
    if reflect {
        r.mul_mat(Mat3::diagonal(Vec3::new(1.0, 1.0, -1.0)))
    } else {
        r
    }
}

/// Apply `x -> O x + b`, `v -> O v` to a batch, recomputing the invariant
/// node inputs from the transformed velocities.
pub fn transform_batch(batch: &GraphBatch, o: Mat3, b: Vec3) -> GraphBatch {
    let mut out = batch.clone();
    let xs: Vec<Vec3> = batch.positions.to_vec3s().iter().map(|&x| o.mul_vec(x) + b).collect();
    let vs: Vec<Vec3> = batch.velocities.to_vec3s().iter().map(|&v| o.mul_vec(v)).collect();
    out.velocity_norms = Tensor::from_vec(vs.len(), 1, vs.iter().map(|v| v.norm()).collect());
    out.positions = Tensor::from_vec3s(&xs);
    out.velocities = Tensor::from_vec3s(&vs);
    out
}

/// A single sampled system as a (targetless) one-sample batch.
pub fn sampled_batch(p: usize, s: usize, h: usize, seed: u64) -> GraphBatch {
    let spec = SystemSpec::sample(p, s, h, seed);
    let (state, objects) = sample_system(&spec, seed).expect("valid spec");
    let sample = Sample { final_positions: state.positions.clone(), initial: state };
    GraphBatch::new(&[&sample], &objects, &spec.charges, false).expect("valid batch")
}

fn forward_values(specs: &ModelSpecs, params: &ParamStore, batch: &GraphBatch) -> Vec<Vec3> {
    let mut sess = Session::new(params);
    let out = forward_positions(&mut sess, batch, specs);
    sess.tape.value(out).to_vec3s()
}

/// Max absolute deviation of `forward(g . S)` from `g . forward(S)`.
pub fn equivariance_deviation(
    specs: &ModelSpecs,
    params: &ParamStore,
    batch: &GraphBatch,
    o: Mat3,
    b: Vec3,
) -> f64 {
    let base = forward_values(specs, params, batch);
    let moved = forward_values(specs, params, &transform_batch(batch, o, b));
    base.iter()
        .zip(&moved)
        .map(|(&y, &yt)| (o.mul_vec(y) + b - yt).norm())
        .fold(0.0, f64::max)
}

/// For each neural model kind, `transforms` random (O, b) pairs with
/// det O in {+1, -1} on random (3,2,1) systems must commute with the
/// forward pass within 1e-8.
///
/// System `t` gets transform `t`; all systems run as one batch (samples are
/// independent in the forward pass), so each kind costs two forwards.
pub fn equivariance_suite(seed: u64, transforms: usize) -> SuiteReport {
    let mut report = SuiteReport::new("equivariance", seed);
    let mut rng = rng_for(seed, 0xE0, 0);
    let spec = SystemSpec::sample(3, 2, 1, subseed(seed, 0xE3, 0));
    let objects = spec.object_table();
    let n = spec.n_particles();
    let samples: Vec<Sample> = (0..transforms)
        .map(|t| {
            let (state, _) = sample_system(&spec, subseed(seed, 0xE2, t as u64)).unwrap();
            Sample { final_positions: state.positions.clone(), initial: state }
        })
        .collect();
    let mut moved = samples.clone();
    let pairs: Vec<(Mat3, Vec3)> = (0..transforms)
        .map(|t| (random_orthogonal(&mut rng, t % 2 == 0), gaussian_vec3(&mut rng)))
        .collect();
    for (sample, (o, b)) in moved.iter_mut().zip(&pairs) {
        for x in &mut sample.initial.positions {
            *x = o.mul_vec(*x) + *b;
        }
        for v in &mut sample.initial.velocities {
            *v = o.mul_vec(*v);
        }
    }
    let base_refs: Vec<&Sample> = samples.iter().collect();
    let moved_refs: Vec<&Sample> = moved.iter().collect();
    let base_batch = GraphBatch::new(&base_refs, &objects, &spec.charges, false).unwrap();
    let moved_batch = GraphBatch::new(&moved_refs, &objects, &spec.charges, false).unwrap();

    for kind in [ModelKind::Gmn, ModelKind::GmnLearnable, ModelKind::Egnn] {
        let specs = ModelSpecs::new(ModelConfig::new(kind));
        let params = specs.register(subseed(seed, 0xE1, kind as u64));
        let base = forward_values(&specs, &params, &base_batch);
        let out = forward_values(&specs, &params, &moved_batch);
        let mut worst = 0.0f64;
        for (t, (o, b)) in pairs.iter().enumerate() {
            for i in 0..n {
                let y = base[t * n + i];
                let yt = out[t * n + i];
                worst = worst.max((o.mul_vec(y) + *b - yt).norm());
            }
        }
        report.record(&format!("{kind}.max_deviation"), worst, 1e-8, true);
    }
    report
}

/// Central finite differences (eps = 1e-5) against the analytic gradient of
/// every parameter of every model kind, on a small mixed system.
pub fn gradient_suite(seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("gradients", seed);
    for kind in [ModelKind::Gmn, ModelKind::GmnLearnable, ModelKind::Egnn, ModelKind::EgnnReg] {
        let mut cfg = ModelConfig::new(kind);
        cfg.layers = 2;
        cfg.hidden = 8;
        let specs = ModelSpecs::new(cfg);
        let mut params = specs.register(subseed(seed, 0x61, kind as u64));
        // The 0.01-scaled gate heads leave forces (and so the Gram matrices
        // fed into the normalized equivariant heads) nearly zero, where the
        // normalization's curvature wrecks finite differences. Gradient
        // checks run at a well-scaled parameter point: bring those heads to
        // O(1).
        let names: Vec<String> = params.names().map(String::from).collect();
        for name in names {
            let is_gate_head = (name.contains(".gate.") || name.contains(".phi2") || name.contains(".rho."))
                && name.contains(".l2.w");
            if is_gate_head {
                let t = params.get_mut(&name).expect("listed name");
                let scaled = t.map(|v| v * 100.0);
                *t = scaled;
            }
        }

        // two samples of a (1,1,1) system with synthetic targets
        let spec = SystemSpec::sample(1, 1, 1, subseed(seed, 0x62, kind as u64));
        let samples: Vec<Sample> = (0..2)
            .map(|i| {
                let (state, _) = sample_system(&spec, subseed(seed, 0x63, i)).unwrap();
                let shifted = state
                    .positions
                    .iter()
                    .zip(&state.velocities)
                    .map(|(&x, &v)| x + v * 0.7)
                    .collect();
                Sample { initial: state, final_positions: shifted }
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = GraphBatch::new(&refs, &spec.object_table(), &spec.charges, true).unwrap();

        let lambda = 0.05;
        let loss_of = |params: &ParamStore| -> f64 {
            let mut sess = Session::new(params);
            let pred = forward_positions(&mut sess, &batch, &specs);
            let target = sess.constant(batch.targets.clone().unwrap());
            let mut loss = mse_loss(&mut sess, pred, target);
            if kind == ModelKind::EgnnReg {
                let penalty = reg_penalty(&mut sess, &batch, pred);
                let scaled = sess.tape.scale(penalty, lambda);
                loss = sess.tape.add(loss, scaled);
            }
            sess.tape.value(loss).at(0, 0)
        };

        let analytic = {
            let mut sess = Session::new(&params);
            let pred = forward_positions(&mut sess, &batch, &specs);
            let target = sess.constant(batch.targets.clone().unwrap());
            let mut loss = mse_loss(&mut sess, pred, target);
            if kind == ModelKind::EgnnReg {
                let penalty = reg_penalty(&mut sess, &batch, pred);
                let scaled = sess.tape.scale(penalty, lambda);
                loss = sess.tape.add(loss, scaled);
            }
            sess.parameter_grads(loss)
        };
        let mut grads = std::collections::BTreeMap::new();
        for (name, g) in analytic {
            grads.insert(name, g);
        }

        let names: Vec<String> = params.names().map(String::from).collect();
        let mut worst = 0.0f64;
        for name in &names {
            let len = params.get(name).unwrap().len();
            for k in 0..len {
                let fd = finite_diff_param_grad(&mut params, name, k, 1e-5, &loss_of);
                let ad = grads.get(name).map_or(0.0, |g| g.data()[k]);
                let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        report.record(&format!("{kind}.max_rel_err"), worst, 1e-4, true);
    }
    report
}

fn reg_penalty(
    sess: &mut Session,
    batch: &GraphBatch,
    pred: crate::ad::TensorId,
) -> crate::ad::TensorId {
    // stick + hinge arm pairs, as in the training loss
    let mut pairs = Vec::new();
    let xs = batch.positions.to_vec3s();
    for k in 0..batch.sticks.members[0].len() {
        let (a, b) = (batch.sticks.members[0][k], batch.sticks.members[1][k]);
        pairs.push((a, b, (xs[a] - xs[b]).norm()));
    }
    for k in 0..batch.hinges.members[0].len() {
        let p = batch.hinges.members[0][k];
        for arm in 0..2 {
            let m = batch.hinges.members[arm + 1][k];
            pairs.push((p, m, (xs[p] - xs[m]).norm()));
        }
    }
    let idx_a = std::sync::Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let idx_b = std::sync::Arc::new(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let len0 = Tensor::from_vec(pairs.len(), 1, pairs.iter().map(|p| p.2).collect());
    let xa = sess.tape.gather(pred, idx_a);
    let xb = sess.tape.gather(pred, idx_b);
    let diff = sess.tape.sub(xa, xb);
    let len = sess.tape.row_norm(diff);
    let len0 = sess.constant(len0);
    let delta = sess.tape.sub(len, len0);
    let sq = sess.tape.mul(delta, delta);
    let col = sess.tape.sum_rows(sq);
    let total = sess.tape.sum_all(col);
    sess.tape.scale(total, 1.0 / batch.batch as f64)
}

/// Simulator dynamics: hinge Newton consistency at 1e-12 over `configs`
/// random configurations, stick-system momentum conservation, constraint
/// drift, and the pinned refinement scenario.
pub fn dynamics_suite(seed: u64, configs: usize) -> SuiteReport {
    let mut report = SuiteReport::new("dynamics", seed);
    let mut rng = rng_for(seed, 0xD0, 0);

    // hinge Newton consistency: reconstructed accelerations sum to the
    // aggregate force over the total mass
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let arm1 = crate::rng::unit_vec3(&mut rng) * rand::Rng::gen_range(&mut rng, 0.3..2.0);
        let arm2 = crate::rng::unit_vec3(&mut rng) * rand::Rng::gen_range(&mut rng, 0.3..2.0);
        let td1 = gaussian_vec3(&mut rng);
        let td2 = gaussian_vec3(&mut rng);
        let f0 = gaussian_vec3(&mut rng);
        let f1 = gaussian_vec3(&mut rng);
        let f2 = gaussian_vec3(&mut rng);
        let (a0, thdd1, thdd2) = sim::hinge_accels(arm1, arm2, td1, td2, f0, f1, f2, 0).unwrap();
        let a1 = a0 + cross(thdd1, arm1) + cross(td1, cross(td1, arm1));
        let a2 = a0 + cross(thdd2, arm2) + cross(td2, cross(td2, arm2));
        let expected = (f0 + f1 + f2) / 3.0;
        let residual = (a0 + a1 + a2 - expected).norm() / (1.0 + expected.norm());
        worst = worst.max(residual);
    }
    report.record("hinge_newton.max_residual", worst, 1e-12, true);

    // constraint drift over 1000 steps at dt = 1e-3
    let spec = SystemSpec::sample(3, 2, 1, subseed(seed, 0xD1, 0));
    let (state, objects) = sample_system(&spec, subseed(seed, 0xD2, 0)).unwrap();
    let out = sim::simulate(&state, &objects, &spec.charges, 1000, 1e-3, 1e-2).unwrap();
    report.record("constraint.max_rel_drift", sim::max_relative_drift(&out, &objects), 1e-6, true);

    // momentum conservation on a hinge-free system
    let spec_m = SystemSpec::sample(2, 2, 0, subseed(seed, 0xD3, 0));
    let (state_m, objects_m) = sample_system(&spec_m, subseed(seed, 0xD4, 0)).unwrap();
    let total = |st: &sim::SystemState| st.velocities.iter().fold(Vec3::ZERO, |a, &v| a + v);
    let before = total(&state_m);
    let out_m = sim::simulate(&state_m, &objects_m, &spec_m.charges, 1000, 1e-3, 1e-2).unwrap();
    report.record("momentum.drift", (total(&out_m) - before).norm(), 1e-6, true);

    // pinned refinement scenario: dt vs dt/10 positions RMSE
    let spec_f = SystemSpec::sample(3, 2, 1, FIDELITY_SCENARIO_SEED);
    let (state_f, objects_f) = sample_system(&spec_f, FIDELITY_SCENARIO_SEED).unwrap();
    let coarse = sim::simulate(&state_f, &objects_f, &spec_f.charges, 1000, 1e-3, 1e-2).unwrap();
    let fine = sim::simulate(&state_f, &objects_f, &spec_f.charges, 10_000, 1e-4, 1e-2).unwrap();
    let n = coarse.positions.len() as f64;
    let rmse = (coarse
        .positions
        .iter()
        .zip(&fine.positions)
        .map(|(a, b)| (*a - *b).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    report.record("refinement.rmse", rmse, 1e-3, true);
    report.record(
        "refinement.drift",
        sim::max_relative_drift(&coarse, &objects_f),
        1e-6,
        true,
    );
    report
}

/// On particles-only systems with tied parameters, the GMN forward equals
/// the EGNN forward bitwise.
pub fn reduction_suite(seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("reduction", seed);
    let gmn = ModelSpecs::new(ModelConfig::new(ModelKind::Gmn));
    let egnn = ModelSpecs::new(ModelConfig::new(ModelKind::Egnn));
    let params = gmn.register(subseed(seed, 0x4E, 0));
    let batch = sampled_batch(5, 0, 0, subseed(seed, 0x4F, 0));
    let a = forward_values(&gmn, &params, &batch);
    let b = forward_values(&egnn, &params, &batch);
    let identical = a == b;
    report.checks.push(format!("bitwise_identical={identical}"));
    if !identical {
        report.passed = false;
        let dev = a.iter().zip(&b).map(|(&x, &y)| (x - y).norm()).fold(0.0, f64::max);
        report.failure = Some(format!(
            "gmn_forward differs from egnn_forward on particles (max deviation {dev:e}, seed {seed})"
        ));
    }
    report
}

/// Constraint exactness: GMN keeps every arm length within 1e-9 relative on
/// `systems` random constrained systems; EGNN with random parameters
/// exceeds 1e-3 of the mean arm length (the negative control).
pub fn constraint_suite(seed: u64, systems: usize) -> SuiteReport {
    let mut report = SuiteReport::new("constraint", seed);
    let gmn = ModelSpecs::new(ModelConfig::new(ModelKind::Gmn));
    let egnn = ModelSpecs::new(ModelConfig::new(ModelKind::Egnn));
    let params = gmn.register(subseed(seed, 0xC0, 0));

    // systems share a spec shape and batch into a few forwards; chunks of
    // 100 keep the large tensors inside the allocator's reuse regime
    let spec = SystemSpec::sample(3, 2, 1, subseed(seed, 0xC1, 0));
    let objects = spec.object_table();
    let mut worst_rel = 0.0f64;
    let mut mean_len = 0.0;
    let mut arms = 0usize;
    let mut cerr_total = 0.0;
    let mut done = 0usize;
    while done < systems {
        let count = (systems - done).min(100);
        let samples: Vec<Sample> = (done..done + count)
            .map(|i| {
                let (state, _) = sample_system(&spec, subseed(seed, 0xC2, i as u64)).unwrap();
                Sample { final_positions: state.positions.clone(), initial: state }
            })
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = GraphBatch::new(&refs, &objects, &spec.charges, false).unwrap();

        let pred_gmn = forward_values(&gmn, &params, &batch);
        let inputs = batch.positions.to_vec3s();
        let mut pair = |a: usize, b: usize| {
            let before = (inputs[a] - inputs[b]).norm();
            let after = (pred_gmn[a] - pred_gmn[b]).norm();
            worst_rel = worst_rel.max((after - before).abs() / before);
            mean_len += before;
            arms += 1;
        };
        for k in 0..batch.sticks.members[0].len() {
            pair(batch.sticks.members[0][k], batch.sticks.members[1][k]);
        }
        for k in 0..batch.hinges.members[0].len() {
            pair(batch.hinges.members[0][k], batch.hinges.members[1][k]);
            pair(batch.hinges.members[0][k], batch.hinges.members[2][k]);
        }
        let pred_egnn = forward_values(&egnn, &params, &batch);
        cerr_total += constraint_error(&batch, &pred_egnn) * count as f64;
        done += count;
    }
    mean_len /= arms as f64;
    report.record("gmn.max_rel_length_change", worst_rel, 1e-9, true);
    report.record("egnn.constraint_error", cerr_total / systems as f64, 1e-3 * mean_len, false);
    report
}
