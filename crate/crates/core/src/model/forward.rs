//! Layer operations and full forward passes of the three neural models.
//!
//! One message-passing layer computes per-edge interaction forces and node
//! features; objects then turn member forces into generalized accelerations
//! (inverse dynamics), integrate their generalized coordinates, and project
//! back to particle states through forward kinematics. The EGNN baseline is
//! the degenerate all-particles path; the learnable-FK variant swaps the
//! exact kinematics for an equivariant velocity update.

use super::batch::GraphBatch;
use super::config::{ModelConfig, ModelKind, StickPhi2};
use super::equivariant::EquivariantFn;
use crate::ad::{Head, MlpSpec, ParamStore, Session, Tensor, TensorId};
use crate::rng::rng_for;

const PARAMS_TAG: u64 = 0x9a7a;

/// Per-layer parameter bundle.
#[derive(Debug, Clone)]
pub struct LayerSpecs {
    pub edge: MlpSpec,
    pub gate: EquivariantFn,
    pub node: MlpSpec,
    pub psi: MlpSpec,
    pub psi_angular: Option<MlpSpec>,
    pub phi2_stick: Option<EquivariantFn>,
    pub phi2_hinge: Option<EquivariantFn>,
    pub phi2_shared: bool,
    pub rho: Option<EquivariantFn>,
    pub velocity_gate: Option<MlpSpec>,
}

/// All parameter specs of a model configuration; the single source of truth
/// for parameter names, shapes, and registration order.
#[derive(Debug, Clone)]
pub struct ModelSpecs {
    pub cfg: ModelConfig,
    pub layers: Vec<LayerSpecs>,
}

/// Initial gate value g solving `sum_{l=1..layers} g^l = 1`: stacking the
/// per-layer velocity updates then sums to one unit of the physical horizon,
/// so a freshly initialized model starts near the ballistic prediction
/// instead of overshooting it `layers`-fold.
fn initial_gate(layers: usize) -> f64 {
    let series = |g: f64| (1..=layers).map(|l| g.powi(l as i32)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if series(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn psi_spec(prefix: String, hidden: usize, layers: usize) -> MlpSpec {
    // zero weights + a bias placing the 2*sigmoid gate at its series value
    let g = initial_gate(layers);
    let bias = (g / (2.0 - g)).ln();
    MlpSpec::new(prefix, hidden, hidden, 1, Head::Sigmoid)
        .with_final_scale(0.0)
        .with_head_bias(bias)
}

impl ModelSpecs {
    pub fn new(cfg: ModelConfig) -> Self {
        cfg.validate().expect("invalid model config");
        assert!(cfg.kind.is_neural(), "the linear baseline has no neural specs");
        let c = cfg.hidden;
        let kind = cfg.kind;
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |name: &str| format!("l{l}.{name}");
                let needs_objects = matches!(kind, ModelKind::Gmn | ModelKind::GmnLearnable);
                let stick_m = match cfg.stick_phi2 {
                    StickPhi2::ForceOnly => 1,
                    StickPhi2::Full => 3,
                };
                let (phi2_stick, phi2_hinge) = if needs_objects {
                    if cfg.shared_phi2 {
                        let shared = EquivariantFn::new(p("phi2"), stick_m, 1, 0, c);
                        (Some(shared.clone()), Some(shared))
                    } else {
                        (
                            Some(EquivariantFn::new(p("phi2.stick"), stick_m, 1, 0, c)),
                            Some(EquivariantFn::new(p("phi2.hinge"), 3, 1, 0, c)),
                        )
                    }
                } else {
                    (None, None)
                };
                LayerSpecs {
                    edge: MlpSpec::new(p("edge"), 1 + 2 * c + 2, c, c, Head::Silu),
                    gate: EquivariantFn::new(p("gate"), 1, 1, c, c),
                    node: MlpSpec::new(p("node"), 2 * c, c, c, Head::Linear),
                    psi: psi_spec(p("psi"), c, cfg.layers),
                    psi_angular: (kind == ModelKind::Gmn).then(|| psi_spec(p("psiang"), c, cfg.layers)),
                    phi2_stick,
                    phi2_hinge,
                    phi2_shared: cfg.shared_phi2,
                    rho: (kind == ModelKind::GmnLearnable)
                        .then(|| EquivariantFn::new(p("rho"), 3, 1, 0, c)),
                    velocity_gate: (kind == ModelKind::GmnLearnable).then(|| psi_spec(p("vgate"), c, cfg.layers)),
                }
            })
            .collect();
        ModelSpecs { cfg, layers }
    }

    /// Register every parameter with Kaiming-uniform init, deterministically
    /// in `seed`.
    pub fn register(&self, seed: u64) -> ParamStore {
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, PARAMS_TAG, 0);
        let c = self.cfg.hidden;
        let bound = 1.0f64;
        let embed: Vec<f64> = (0..c).map(|_| rand::Rng::gen_range(&mut rng, -bound..bound)).collect();
        params.insert("embed.w", Tensor::from_vec(1, c, embed));
        params.insert("embed.b", Tensor::zeros(1, c));
        for layer in &self.layers {
            layer.edge.register(&mut params, &mut rng);
            layer.gate.register(&mut params, &mut rng);
            layer.node.register(&mut params, &mut rng);
            layer.psi.register(&mut params, &mut rng);
            if let Some(psiang) = &layer.psi_angular {
                psiang.register(&mut params, &mut rng);
            }
            if let Some(stick) = &layer.phi2_stick {
                stick.register(&mut params, &mut rng);
            }
            if !layer.phi2_shared {
                if let Some(hinge) = &layer.phi2_hinge {
                    hinge.register(&mut params, &mut rng);
                }
            }
            if let Some(rho) = &layer.rho {
                rho.register(&mut params, &mut rng);
            }
            if let Some(vgate) = &layer.velocity_gate {
                vgate.register(&mut params, &mut rng);
            }
        }
        params
    }
}

/// Tape-resident constants of a batch, created once per session.
pub struct BatchNodes {
    pub x0: TensorId,
    pub v0: TensorId,
    pub velocity_norms: TensorId,
    pub edge_features: TensorId,
}

impl BatchNodes {
    pub fn new(sess: &mut Session, batch: &GraphBatch) -> Self {
        BatchNodes {
            x0: sess.constant(batch.positions.clone()),
            v0: sess.constant(batch.velocities.clone()),
            velocity_norms: sess.constant(batch.velocity_norms.clone()),
            edge_features: sess.constant(batch.edge_features.clone()),
        }
    }
}

/// `h^0`: a learnable linear map of the input velocity norms.
pub fn embed_features(sess: &mut Session, nodes: &BatchNodes) -> TensorId {
    let w = sess.param("embed.w");
    let b = sess.param("embed.b");
    let h = sess.tape.matmul(nodes.velocity_norms, w);
    sess.tape.add_bias(h, b)
}

/// One round of equivariant message passing: per-edge messages gate the
/// relative positions into interaction forces, and their invariant aggregate
/// updates the node features.
pub fn interaction_step(
    sess: &mut Session,
    batch: &GraphBatch,
    nodes: &BatchNodes,
    layer: &LayerSpecs,
    x: TensorId,
    h: TensorId,
) -> (TensorId, TensorId) {
    let n = batch.nodes();
    let xi = sess.tape.gather(x, batch.edge_dst.clone());
    let xj = sess.tape.gather(x, batch.edge_src.clone());
    let x_ji = sess.tape.sub(xi, xj);
    let d2 = sess.tape.norm2_rows(x_ji);
    let hi = sess.tape.gather(h, batch.edge_dst.clone());
    let hj = sess.tape.gather(h, batch.edge_src.clone());
    let edge_in = sess.tape.concat_cols(&[d2, hi, hj, nodes.edge_features]);
    let message = layer.edge.forward(sess, edge_in);

    let contrib = layer.gate.apply(sess, &[x_ji], Some(message))[0];
    let force = sess.tape.segment_sum(contrib, batch.edge_dst.clone(), n);

    let aggregate = sess.tape.segment_sum(message, batch.edge_dst.clone(), n);
    let node_in = sess.tape.concat_cols(&[h, aggregate]);
    let h_next = layer.node.forward(sess, node_in);
    (force, h_next)
}

/// The scalar velocity gate `2 * sigmoid(mlp(h))`, reaching the identity
/// gate 1 at its zero-initialized start.
pub fn scalar_gate(sess: &mut Session, spec: &MlpSpec, h: TensorId) -> TensorId {
    let g = spec.forward(sess, h);
    sess.tape.scale(g, 2.0)
}

/// Generalized acceleration of sticks/hinges: the sum over members of the
/// equivariant acceleration head applied to that member's vector set.
pub fn infer_generalized_accel(
    sess: &mut Session,
    phi2: &EquivariantFn,
    member_sets: &[Vec<TensorId>],
) -> TensorId {
    let mut total: Option<TensorId> = None;
    for cols in member_sets {
        let contribution = phi2.apply(sess, cols, None)[0];
        total = Some(match total {
            Some(t) => sess.tape.add(t, contribution),
            None => contribution,
        });
    }
    total.expect("object has at least one member")
}

/// Stick angular acceleration: total torque over total moment of inertia.
pub fn stick_angular_accel(
    sess: &mut Session,
    arm1: TensorId,
    arm2: TensorId,
    f1: TensorId,
    f2: TensorId,
) -> TensorId {
    let t1 = sess.tape.cross3(arm1, f1);
    let t2 = sess.tape.cross3(arm2, f2);
    let torque = sess.tape.add(t1, t2);
    let n1 = sess.tape.norm2_rows(arm1);
    let n2 = sess.tape.norm2_rows(arm2);
    let inertia = sess.tape.add(n1, n2);
    let inv = sess.tape.recip_floor(inertia, 1e-18);
    sess.tape.row_scale(torque, inv)
}

/// Hinge arm angular acceleration: relative torque of `f - q_ddot` over the
/// arm's moment of inertia.
pub fn hinge_angular_accel(
    sess: &mut Session,
    arm: TensorId,
    force: TensorId,
    q_ddot: TensorId,
) -> TensorId {
    let rel = sess.tape.sub(force, q_ddot);
    let torque = sess.tape.cross3(arm, rel);
    let n = sess.tape.norm2_rows(arm);
    let inv = sess.tape.recip_floor(n, 1e-18);
    sess.tape.row_scale(torque, inv)
}

/// Gated semi-implicit update of a generalized coordinate pair:
/// `q_dot <- gate * q_dot + q_ddot`, `q <- q + q_dot`.
pub fn generalized_update(
    sess: &mut Session,
    q: TensorId,
    q_dot: TensorId,
    q_ddot: TensorId,
    gate: TensorId,
) -> (TensorId, TensorId) {
    let damped = sess.tape.row_scale(q_dot, gate);
    let q_dot_next = sess.tape.add(damped, q_ddot);
    let q_next = sess.tape.add(q, q_dot_next);
    (q_next, q_dot_next)
}

/// Forward kinematics of one arm: rotate it by the angular velocity, then
/// rebuild the member's Cartesian state.
pub fn forward_kinematics(
    sess: &mut Session,
    q: TensorId,
    q_dot: TensorId,
    theta_dot: TensorId,
    arm: TensorId,
) -> (TensorId, TensorId, TensorId) {
    let new_arm = sess.tape.axis_angle_rotate(theta_dot, arm);
    let x = sess.tape.add(q, new_arm);
    let spin = sess.tape.cross3(theta_dot, new_arm);
    let v = sess.tape.add(q_dot, spin);
    (new_arm, x, v)
}

/// Minimal-norm angular velocity consistent with `v_rel = theta_dot x arm`.
fn initial_theta_dot(sess: &mut Session, arm: TensorId, v_rel: TensorId) -> TensorId {
    let raw = sess.tape.cross3(arm, v_rel);
    let n = sess.tape.norm2_rows(arm);
    let inv = sess.tape.recip_floor(n, 1e-18);
    sess.tape.row_scale(raw, inv)
}

struct StickState {
    q: TensorId,
    q_dot: TensorId,
    theta_dot: TensorId,
    arms: [TensorId; 2],
}

struct HingeState {
    q: TensorId,
    q_dot: TensorId,
    theta_dot: [TensorId; 2],
    arms: [TensorId; 2],
}

struct GmnState {
    x: TensorId,
    v: TensorId,
    h: TensorId,
    sticks: Option<StickState>,
    hinges: Option<HingeState>,
}

fn gather2(sess: &mut Session, t: TensorId, idx: &std::sync::Arc<Vec<usize>>) -> TensorId {
    sess.tape.gather(t, idx.clone())
}

fn init_stick_state(sess: &mut Session, batch: &GraphBatch, x: TensorId, v: TensorId) -> StickState {
    let x1 = gather2(sess, x, &batch.sticks.members[0]);
    let x2 = gather2(sess, x, &batch.sticks.members[1]);
    let v1 = gather2(sess, v, &batch.sticks.members[0]);
    let v2 = gather2(sess, v, &batch.sticks.members[1]);
    let xsum = sess.tape.add(x1, x2);
    let q = sess.tape.scale(xsum, 0.5);
    let vsum = sess.tape.add(v1, v2);
    let q_dot = sess.tape.scale(vsum, 0.5);
    let arm1 = sess.tape.sub(x1, q);
    let arm2 = sess.tape.sub(x2, q);
    let v_rel = sess.tape.sub(v1, q_dot);
    let theta_dot = initial_theta_dot(sess, arm1, v_rel);
    StickState { q, q_dot, theta_dot, arms: [arm1, arm2] }
}

fn init_hinge_state(sess: &mut Session, batch: &GraphBatch, x: TensorId, v: TensorId) -> HingeState {
    let q = gather2(sess, x, &batch.hinges.members[0]);
    let q_dot = gather2(sess, v, &batch.hinges.members[0]);
    let mut arms = [q; 2];
    let mut theta_dot = [q; 2];
    for k in 0..2 {
        let xk = gather2(sess, x, &batch.hinges.members[k + 1]);
        let vk = gather2(sess, v, &batch.hinges.members[k + 1]);
        let arm = sess.tape.sub(xk, q);
        let v_rel = sess.tape.sub(vk, q_dot);
        arms[k] = arm;
        theta_dot[k] = initial_theta_dot(sess, arm, v_rel);
    }
    HingeState { q, q_dot, theta_dot, arms }
}

/// Member vector sets for the acceleration head, in the configured form.
fn stick_phi2_inputs(
    sess: &mut Session,
    batch: &GraphBatch,
    form: StickPhi2,
    st: &StickState,
    v: TensorId,
    forces: [TensorId; 2],
) -> Vec<Vec<TensorId>> {
    match form {
        StickPhi2::ForceOnly => vec![vec![forces[0]], vec![forces[1]]],
        StickPhi2::Full => (0..2)
            .map(|k| {
                let vk = gather2(sess, v, &batch.sticks.members[k]);
                let v_rel = sess.tape.sub(vk, st.q_dot);
                vec![forces[k], st.arms[k], v_rel]
            })
            .collect(),
    }
}

fn hinge_phi2_inputs(
    sess: &mut Session,
    batch: &GraphBatch,
    form: StickPhi2,
    shared: bool,
    hs: &HingeState,
    v: TensorId,
    forces: [TensorId; 3],
) -> Vec<Vec<TensorId>> {
    // a shared head forces the stick's input form onto hinges
    if shared && form == StickPhi2::ForceOnly {
        return forces.iter().map(|&f| vec![f]).collect();
    }
    (0..3)
        .map(|slot| {
            let vk = gather2(sess, v, &batch.hinges.members[slot]);
            let v_rel = sess.tape.sub(vk, hs.q_dot);
            // the pivot's relative position (and velocity) are exactly zero
            let arm = if slot == 0 { sess.tape.sub(hs.q, hs.q) } else { hs.arms[slot - 1] };
            vec![forces[slot], arm, v_rel]
        })
        .collect()
}

/// Sum of member hidden features per object instance, the input of the
/// object-level gates.
fn member_h_sum(sess: &mut Session, members: &[std::sync::Arc<Vec<usize>>], h: TensorId) -> TensorId {
    let mut total: Option<TensorId> = None;
    for idx in members {
        let hk = gather2(sess, h, idx);
        total = Some(match total {
            Some(t) => sess.tape.add(t, hk),
            None => hk,
        });
    }
    total.expect("objects have members")
}

/// GMN forward pass: returns the predicted positions `[B*N, 3]`.
pub fn gmn_forward(sess: &mut Session, batch: &GraphBatch, specs: &ModelSpecs) -> TensorId {
    let nodes = BatchNodes::new(sess, batch);
    let h0 = embed_features(sess, &nodes);
    let mut state = GmnState {
        x: nodes.x0,
        v: nodes.v0,
        h: h0,
        sticks: (!batch.sticks.is_empty()).then(|| init_stick_state(sess, batch, nodes.x0, nodes.v0)),
        hinges: (!batch.hinges.is_empty()).then(|| init_hinge_state(sess, batch, nodes.x0, nodes.v0)),
    };

    for layer in &specs.layers {
        let (force, h_next) = interaction_step(sess, batch, &nodes, layer, state.x, state.h);
        let n = batch.nodes();
        let mut x_parts: Vec<(TensorId, &std::sync::Arc<Vec<usize>>)> = Vec::new();
        let mut v_parts: Vec<(TensorId, &std::sync::Arc<Vec<usize>>)> = Vec::new();

        if !batch.particles.is_empty() {
            let idx = &batch.particles.members[0];
            let f_p = gather2(sess, force, idx);
            let h_p = gather2(sess, state.h, idx);
            let gate = scalar_gate(sess, &layer.psi, h_p);
            let q = gather2(sess, state.x, idx);
            let q_dot = gather2(sess, state.v, idx);
            let (q_next, q_dot_next) = generalized_update(sess, q, q_dot, f_p, gate);
            x_parts.push((q_next, idx));
            v_parts.push((q_dot_next, idx));
        }

        if let Some(st) = &state.sticks {
            let f1 = gather2(sess, force, &batch.sticks.members[0]);
            let f2 = gather2(sess, force, &batch.sticks.members[1]);
            let phi2 = layer.phi2_stick.as_ref().expect("gmn layer has a stick head");
            let sets = stick_phi2_inputs(sess, batch, specs.cfg.stick_phi2, st, state.v, [f1, f2]);
            let q_ddot = infer_generalized_accel(sess, phi2, &sets);
            let theta_ddot = stick_angular_accel(sess, st.arms[0], st.arms[1], f1, f2);

            let h_sum = member_h_sum(sess, &batch.sticks.members, state.h);
            let gate = scalar_gate(sess, &layer.psi, h_sum);
            let gate_ang = scalar_gate(sess, layer.psi_angular.as_ref().expect("gmn has psi'"), h_sum);
            let (q_next, q_dot_next) = generalized_update(sess, st.q, st.q_dot, q_ddot, gate);
            let damped = sess.tape.row_scale(st.theta_dot, gate_ang);
            let theta_next = sess.tape.add(damped, theta_ddot);

            let mut new_arms = [theta_next; 2];
            for (k, arm_in) in st.arms.iter().enumerate() {
                let (arm, x_k, v_k) = forward_kinematics(sess, q_next, q_dot_next, theta_next, *arm_in);
                new_arms[k] = arm;
                x_parts.push((x_k, &batch.sticks.members[k]));
                v_parts.push((v_k, &batch.sticks.members[k]));
            }
            state.sticks = Some(StickState { q: q_next, q_dot: q_dot_next, theta_dot: theta_next, arms: new_arms });
        }

        if let Some(hs) = &state.hinges {
            let f0 = gather2(sess, force, &batch.hinges.members[0]);
            let f1 = gather2(sess, force, &batch.hinges.members[1]);
            let f2 = gather2(sess, force, &batch.hinges.members[2]);
            let phi2 = layer.phi2_hinge.as_ref().expect("gmn layer has a hinge head");
            let sets = hinge_phi2_inputs(
                sess,
                batch,
                specs.cfg.stick_phi2,
                layer.phi2_shared,
                hs,
                state.v,
                [f0, f1, f2],
            );
            let q_ddot = infer_generalized_accel(sess, phi2, &sets);

            let h_sum = member_h_sum(sess, &batch.hinges.members, state.h);
            let gate = scalar_gate(sess, &layer.psi, h_sum);
            let gate_ang = scalar_gate(sess, layer.psi_angular.as_ref().expect("gmn has psi'"), h_sum);
            let (q_next, q_dot_next) = generalized_update(sess, hs.q, hs.q_dot, q_ddot, gate);

            let mut new_arms = hs.arms;
            let mut new_theta = hs.theta_dot;
            let member_forces = [f1, f2];
            for k in 0..2 {
                let theta_ddot = hinge_angular_accel(sess, hs.arms[k], member_forces[k], q_ddot);
                let damped = sess.tape.row_scale(hs.theta_dot[k], gate_ang);
                let theta_next = sess.tape.add(damped, theta_ddot);
                let (arm, x_k, v_k) = forward_kinematics(sess, q_next, q_dot_next, theta_next, hs.arms[k]);
                new_arms[k] = arm;
                new_theta[k] = theta_next;
                x_parts.push((x_k, &batch.hinges.members[k + 1]));
                v_parts.push((v_k, &batch.hinges.members[k + 1]));
            }
            x_parts.push((q_next, &batch.hinges.members[0]));
            v_parts.push((q_dot_next, &batch.hinges.members[0]));
            state.hinges = Some(HingeState { q: q_next, q_dot: q_dot_next, theta_dot: new_theta, arms: new_arms });
        }

        state.x = scatter_parts(sess, &x_parts, n);
        state.v = scatter_parts(sess, &v_parts, n);
        state.h = h_next;
    }
    state.x
}

/// Scatter disjoint member rows back into a `[B*N, 3]` tensor.
fn scatter_parts(
    sess: &mut Session,
    parts: &[(TensorId, &std::sync::Arc<Vec<usize>>)],
    n: usize,
) -> TensorId {
    let mut total: Option<TensorId> = None;
    for (t, idx) in parts {
        let scattered = sess.tape.segment_sum(*t, (*idx).clone(), n);
        total = Some(match total {
            Some(acc) => sess.tape.add(acc, scattered),
            None => scattered,
        });
    }
    total.expect("non-empty system")
}

/// EGNN baseline: every node updates independently, no constraint handling.
pub fn egnn_forward(sess: &mut Session, batch: &GraphBatch, specs: &ModelSpecs) -> TensorId {
    let nodes = BatchNodes::new(sess, batch);
    let mut h = embed_features(sess, &nodes);
    let mut x = nodes.x0;
    let mut v = nodes.v0;
    for layer in &specs.layers {
        let (accel, h_next) = interaction_step(sess, batch, &nodes, layer, x, h);
        let gate = scalar_gate(sess, &layer.psi, h);
        let (x_next, v_next) = generalized_update(sess, x, v, accel, gate);
        x = x_next;
        v = v_next;
        h = h_next;
    }
    x
}

/// Learnable-FK variant: object-level accelerations feed an equivariant
/// per-node velocity update instead of the exact kinematics.
pub fn learnable_fk_forward(sess: &mut Session, batch: &GraphBatch, specs: &ModelSpecs) -> TensorId {
    let nodes = BatchNodes::new(sess, batch);
    let mut h = embed_features(sess, &nodes);
    let mut x = nodes.x0;
    let mut v = nodes.v0;

    for layer in &specs.layers {
        let (force, h_next) = interaction_step(sess, batch, &nodes, layer, x, h);

        // generalized coordinates re-derived from the current state
        let mut qdd_parts: Vec<(TensorId, &std::sync::Arc<Vec<usize>>)> = Vec::new();
        let mut q_parts: Vec<(TensorId, &std::sync::Arc<Vec<usize>>)> = Vec::new();
        if !batch.particles.is_empty() {
            let idx = &batch.particles.members[0];
            let f_p = gather2(sess, force, idx);
            let q = gather2(sess, x, idx);
            qdd_parts.push((f_p, &batch.particles.object_rows));
            q_parts.push((q, &batch.particles.object_rows));
        }
        if !batch.sticks.is_empty() {
            let st = init_stick_state(sess, batch, x, v);
            let f1 = gather2(sess, force, &batch.sticks.members[0]);
            let f2 = gather2(sess, force, &batch.sticks.members[1]);
            let phi2 = layer.phi2_stick.as_ref().expect("gmn-l layer has a stick head");
            let sets = stick_phi2_inputs(sess, batch, specs.cfg.stick_phi2, &st, v, [f1, f2]);
            let q_ddot = infer_generalized_accel(sess, phi2, &sets);
            qdd_parts.push((q_ddot, &batch.sticks.object_rows));
            q_parts.push((st.q, &batch.sticks.object_rows));
        }
        if !batch.hinges.is_empty() {
            let hs = init_hinge_state(sess, batch, x, v);
            let f0 = gather2(sess, force, &batch.hinges.members[0]);
            let f1 = gather2(sess, force, &batch.hinges.members[1]);
            let f2 = gather2(sess, force, &batch.hinges.members[2]);
            let phi2 = layer.phi2_hinge.as_ref().expect("gmn-l layer has a hinge head");
            let sets = hinge_phi2_inputs(
                sess,
                batch,
                specs.cfg.stick_phi2,
                layer.phi2_shared,
                &hs,
                v,
                [f0, f1, f2],
            );
            let q_ddot = infer_generalized_accel(sess, phi2, &sets);
            qdd_parts.push((q_ddot, &batch.hinges.object_rows));
            q_parts.push((hs.q, &batch.hinges.object_rows));
        }

        let obj_qdd = scatter_obj(sess, &qdd_parts, batch.objects_total);
        let obj_q = scatter_obj(sess, &q_parts, batch.objects_total);
        let node_qdd = sess.tape.gather(obj_qdd, batch.node_object.clone());
        let node_q = sess.tape.gather(obj_q, batch.node_object.clone());
        let rel_pos = sess.tape.sub(x, node_q);

        let rho = layer.rho.as_ref().expect("gmn-l has rho");
        let update = rho.apply(sess, &[node_qdd, rel_pos, force], None)[0];
        let vgate = layer.velocity_gate.as_ref().expect("gmn-l has a velocity gate");
        let gate = scalar_gate(sess, vgate, h);
        let damped = sess.tape.row_scale(v, gate);
        let v_next = sess.tape.add(damped, update);
        let x_next = sess.tape.add(x, v_next);
        x = x_next;
        v = v_next;
        h = h_next;
    }
    x
}

fn scatter_obj(
    sess: &mut Session,
    parts: &[(TensorId, &std::sync::Arc<Vec<usize>>)],
    total: usize,
) -> TensorId {
    let mut acc: Option<TensorId> = None;
    for (t, rows) in parts {
        let scattered = sess.tape.segment_sum(*t, (*rows).clone(), total);
        acc = Some(match acc {
            Some(a) => sess.tape.add(a, scattered),
            None => scattered,
        });
    }
    acc.expect("non-empty system")
}

/// Dispatch on the configured model kind (EGNN-reg shares the EGNN forward).
pub fn forward_positions(sess: &mut Session, batch: &GraphBatch, specs: &ModelSpecs) -> TensorId {
    match specs.cfg.kind {
        ModelKind::Gmn => gmn_forward(sess, batch, specs),
        ModelKind::GmnLearnable => learnable_fk_forward(sess, batch, specs),
        ModelKind::Egnn | ModelKind::EgnnReg => egnn_forward(sess, batch, specs),
        ModelKind::Linear => unreachable!("linear baseline is closed-form"),
    }
}
