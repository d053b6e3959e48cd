//! Constrained N-body simulator: charged particles under softened Coulomb
//! forces, with sticks and hinges evolved by their analytic
//! generalized-coordinate dynamics.
//!
//! Conventions (recorded in every dataset's metadata): unit particle mass,
//! unit coupling constant, softening added inside the inverse-square law,
//! semi-implicit Euler on generalized coordinates with per-step arm-length
//! renormalization. A hinge aggregates its force over its total mass of 3.

mod data;

pub use data::{
    generate_dataset, read_dataset, write_dataset, GenerationReport, Sample, TrajectoryDataset,
    FRAMES_FILE, META_FILE,
};

use crate::geom::{cross, project_perp, rotate, solve3, Mat3, Vec3};
use crate::rng::{gaussian_vec3, rng_for, unit_vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default softening added to squared pair distances.
pub const DEFAULT_SOFTENING: f64 = 1e-2;
/// Arm norms below this are treated as degenerate geometry.
pub const DEGENERATE_ARM: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degenerate arm on object {object} (norm {norm:e})")]
    DegenerateArm { object: usize, norm: f64 },
    #[error("invalid system spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file {path} at byte {offset}: {what}")]
    Malformed { path: String, offset: u64, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Particle,
    Stick,
    Hinge,
}

/// A particle, stick, or hinge: ordered member indices. The pivot for the
/// generalized coordinates is the virtual center for sticks and member 0
/// for hinges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RigidObject {
    pub kind: ObjectKind,
    pub members: Vec<usize>,
}

impl RigidObject {
    pub fn particle(i: usize) -> Self {
        RigidObject { kind: ObjectKind::Particle, members: vec![i] }
    }

    pub fn stick(a: usize, b: usize) -> Self {
        RigidObject { kind: ObjectKind::Stick, members: vec![a, b] }
    }

    pub fn hinge(pivot: usize, a: usize, b: usize) -> Self {
        RigidObject { kind: ObjectKind::Hinge, members: vec![pivot, a, b] }
    }

    /// Number of constrained arms (0 / 1 stick length / 2 hinge edges).
    pub fn arm_count(&self) -> usize {
        match self.kind {
            ObjectKind::Particle => 0,
            ObjectKind::Stick => 1,
            ObjectKind::Hinge => 2,
        }
    }
}

/// Checks that `objects` partition `0..n` (every particle in exactly one
/// object, member sets disjoint).
pub fn check_partition(objects: &[RigidObject], n: usize) -> Result<(), SimError> {
    let mut seen = vec![false; n];
    for obj in objects {
        let expect = match obj.kind {
            ObjectKind::Particle => 1,
            ObjectKind::Stick => 2,
            ObjectKind::Hinge => 3,
        };
        if obj.members.len() != expect {
            return Err(SimError::InvalidSpec(format!(
                "{:?} object with {} members",
                obj.kind,
                obj.members.len()
            )));
        }
        for &i in &obj.members {
            if i >= n {
                return Err(SimError::InvalidSpec(format!("member index {i} out of range")));
            }
            if seen[i] {
                return Err(SimError::InvalidSpec(format!("particle {i} belongs to two objects")));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(SimError::InvalidSpec(format!("particle {i} belongs to no object")));
    }
    Ok(())
}

/// System composition plus the dataset-level scalars that drive sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub particles: usize,
    pub sticks: usize,
    pub hinges: usize,
    /// One charge per particle, each -1 or +1.
    pub charges: Vec<f64>,
    pub stick_length_range: (f64, f64),
    pub box_scale: f64,
}

impl SystemSpec {
    /// Total particle count `p + 2s + 3h`.
    pub fn n_particles(&self) -> usize {
        self.particles + 2 * self.sticks + 3 * self.hinges
    }

    /// Build a spec with charges drawn uniformly from {-1, +1}.
    ///
    /// The default box scale puts the mean nearest-neighbor distance near 1
    /// at any particle count, which keeps initial pair forces O(1).
    pub fn sample(particles: usize, sticks: usize, hinges: usize, seed: u64) -> Self {
        let mut spec = SystemSpec {
            particles,
            sticks,
            hinges,
            charges: Vec::new(),
            stick_length_range: (0.5, 1.5),
            box_scale: 1.8,
        };
        let mut rng = rng_for(seed, tags::CHARGES, 0);
        spec.charges = (0..spec.n_particles())
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        spec
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.n_particles();
        if n == 0 {
            return Err(SimError::InvalidSpec("empty system".into()));
        }
        if self.charges.len() != n {
            return Err(SimError::InvalidSpec(format!(
                "{} charges for {} particles",
                self.charges.len(),
                n
            )));
        }
        let (lo, hi) = self.stick_length_range;
        if lo.is_nan() || hi.is_nan() || lo <= 0.0 || hi < lo {
            return Err(SimError::InvalidSpec(format!("bad length range ({lo}, {hi})")));
        }
        if self.box_scale.is_nan() || self.box_scale <= 0.0 {
            return Err(SimError::InvalidSpec("box_scale must be positive".into()));
        }
        Ok(())
    }

    /// The canonical object table: particles first, then sticks, then hinges,
    /// with contiguous member indices.
    pub fn object_table(&self) -> Vec<RigidObject> {
        let mut objects = Vec::with_capacity(self.particles + self.sticks + self.hinges);
        let mut next = 0;
        for _ in 0..self.particles {
            objects.push(RigidObject::particle(next));
            next += 1;
        }
        for _ in 0..self.sticks {
            objects.push(RigidObject::stick(next, next + 1));
            next += 2;
        }
        for _ in 0..self.hinges {
            objects.push(RigidObject::hinge(next, next + 1, next + 2));
            next += 3;
        }
        objects
    }
}

/// Per-object generalized state. Particles carry nothing: their generalized
/// coordinates are their Cartesian state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GenCoord {
    Particle,
    Stick {
        q: Vec3,
        q_dot: Vec3,
        /// Shared angular velocity of both half-arms.
        theta_dot: Vec3,
        /// Rest length of each half-arm (half the stick length).
        rest_half: f64,
    },
    Hinge {
        q: Vec3,
        q_dot: Vec3,
        theta_dot: [Vec3; 2],
        rest: [f64; 2],
    },
}

/// Full state of a system: Cartesian per-particle state plus the generalized
/// state of every object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub gen: Vec<GenCoord>,
}

/// Seed stream tags.
pub(crate) mod tags {
    pub const CHARGES: u64 = 0x01;
    pub const SAMPLE: u64 = 0x02;
}

/// Derive the generalized state from Cartesian positions/velocities and the
/// per-object rest lengths; the pivot rules are stick = virtual midpoint,
/// hinge = member 0, and the angular velocity is the minimal-norm vector
/// consistent with the arm's linear velocity.
pub fn canonical_gen(
    positions: &[Vec3],
    velocities: &[Vec3],
    objects: &[RigidObject],
    rests: &[Vec<f64>],
) -> Vec<GenCoord> {
    objects
        .iter()
        .zip(rests)
        .map(|(obj, rest)| match obj.kind {
            ObjectKind::Particle => GenCoord::Particle,
            ObjectKind::Stick => {
                let (a, b) = (obj.members[0], obj.members[1]);
                let q = (positions[a] + positions[b]) * 0.5;
                let q_dot = (velocities[a] + velocities[b]) * 0.5;
                let arm = positions[a] - q;
                let theta_dot = cross(arm, velocities[a] - q_dot) / arm.norm_squared();
                GenCoord::Stick { q, q_dot, theta_dot, rest_half: rest[0] * 0.5 }
            }
            ObjectKind::Hinge => {
                let pivot = obj.members[0];
                let q = positions[pivot];
                let q_dot = velocities[pivot];
                let mut theta_dot = [Vec3::ZERO; 2];
                for (k, td) in theta_dot.iter_mut().enumerate() {
                    let i = obj.members[k + 1];
                    let arm = positions[i] - q;
                    *td = cross(arm, velocities[i] - q_dot) / arm.norm_squared();
                }
                GenCoord::Hinge { q, q_dot, theta_dot, rest: [rest[0], rest[1]] }
            }
        })
        .collect()
}

/// Sampled rest lengths per object: `[]` for particles, `[L]` for sticks,
/// `[L1, L2]` for hinges.
pub fn rest_lengths_of(state: &SystemState, objects: &[RigidObject]) -> Vec<Vec<f64>> {
    objects
        .iter()
        .zip(&state.gen)
        .map(|(_, gen)| match gen {
            GenCoord::Particle => vec![],
            GenCoord::Stick { rest_half, .. } => vec![rest_half * 2.0],
            GenCoord::Hinge { rest, .. } => vec![rest[0], rest[1]],
        })
        .collect()
}

/// Draw an initial system: particle positions uniform in a cube of side
/// `box_scale * N^(1/3)`, velocities standard Gaussian, stick/hinge members
/// placed at rest lengths sampled from `stick_length_range` with random
/// orientations, and arm velocities consistent with a sampled angular
/// velocity. Deterministic in `(spec, seed)`.
pub fn sample_system(spec: &SystemSpec, seed: u64) -> Result<(SystemState, Vec<RigidObject>), SimError> {
    spec.validate()?;
    let n = spec.n_particles();
    let objects = spec.object_table();
    let mut rng = rng_for(seed, tags::SAMPLE, 0);
    let side = spec.box_scale * (n as f64).cbrt();
    let uniform_pos = |rng: &mut rand_chacha::ChaCha20Rng| {
        Vec3::new(
            rng.gen_range(-0.5..0.5) * side,
            rng.gen_range(-0.5..0.5) * side,
            rng.gen_range(-0.5..0.5) * side,
        )
    };

    let mut positions = vec![Vec3::ZERO; n];
    let mut velocities = vec![Vec3::ZERO; n];
    let mut rests: Vec<Vec<f64>> = Vec::with_capacity(objects.len());
    let (lo, hi) = spec.stick_length_range;
    let sample_len = |rng: &mut rand_chacha::ChaCha20Rng| {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };

    for obj in &objects {
        match obj.kind {
            ObjectKind::Particle => {
                let i = obj.members[0];
                positions[i] = uniform_pos(&mut rng);
                velocities[i] = gaussian_vec3(&mut rng);
                rests.push(vec![]);
            }
            ObjectKind::Stick => {
                let (a, b) = (obj.members[0], obj.members[1]);
                let center = uniform_pos(&mut rng);
                let center_vel = gaussian_vec3(&mut rng);
                let len = sample_len(&mut rng);
                let dir = unit_vec3(&mut rng);
                let arm = dir * (len * 0.5);
                let w = gaussian_vec3(&mut rng);
                let theta_dot = w - dir * dir.dot(w);
                positions[a] = center + arm;
                positions[b] = center - arm;
                velocities[a] = center_vel + cross(theta_dot, arm);
                velocities[b] = center_vel - cross(theta_dot, arm);
                rests.push(vec![len]);
            }
            ObjectKind::Hinge => {
                let pivot = obj.members[0];
                positions[pivot] = uniform_pos(&mut rng);
                velocities[pivot] = gaussian_vec3(&mut rng);
                let mut rest = Vec::with_capacity(2);
                for k in 0..2 {
                    let i = obj.members[k + 1];
                    let len = sample_len(&mut rng);
                    let dir = unit_vec3(&mut rng);
                    let arm = dir * len;
                    let w = gaussian_vec3(&mut rng);
                    let theta_dot = w - dir * dir.dot(w);
                    positions[i] = positions[pivot] + arm;
                    velocities[i] = velocities[pivot] + cross(theta_dot, arm);
                    rest.push(len);
                }
                rests.push(rest);
            }
        }
    }

    let gen = canonical_gen(&positions, &velocities, &objects, &rests);
    Ok((SystemState { positions, velocities, gen }, objects))
}

/// Softened Coulomb forces `f_i = sum_j c_i c_j (x_i - x_j) / (r^2 + soft)^(3/2)`.
/// Each pair force is computed once and applied with both signs, so the total
/// is antisymmetric to the last bit.
pub fn pairwise_forces(positions: &[Vec3], charges: &[f64], softening: f64) -> Vec<Vec3> {
    debug_assert!(softening > 0.0);
    let n = positions.len();
    let mut forces = vec![Vec3::ZERO; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = positions[i] - positions[j];
            let r2 = d.norm_squared() + softening;
            let w = charges[i] * charges[j] / (r2 * r2.sqrt());
            let f = d * w;
            forces[i] += f;
            forces[j] -= f;
        }
    }
    forces
}

/// One semi-implicit Euler step of a free unit-mass particle.
pub fn step_free_particle(x: Vec3, v: Vec3, f: Vec3, dt: f64) -> (Vec3, Vec3) {
    let v_next = v + f * dt;
    (x + v_next * dt, v_next)
}

/// One step of a stick (total mass 2). The center translates under the mean
/// force; the shared angular velocity integrates the torque over the moment
/// of inertia; both arms are rebuilt by rotating one stored arm, so the stick
/// stays straight and its length is renormalized exactly.
#[allow(clippy::too_many_arguments)]
pub fn step_stick(
    q: &mut Vec3,
    q_dot: &mut Vec3,
    theta_dot: &mut Vec3,
    arm: Vec3,
    rest_half: f64,
    f1: Vec3,
    f2: Vec3,
    dt: f64,
) -> (Vec3, Vec3, Vec3) {
    let arm2 = -arm;
    let q_ddot = (f1 + f2) * 0.5;
    let torque = cross(arm, f1) + cross(arm2, f2);
    let theta_ddot = torque / (arm.norm_squared() + arm2.norm_squared());
    *q_dot += q_ddot * dt;
    *q += *q_dot * dt;
    *theta_dot += theta_ddot * dt;
    let rotated = rotate(*theta_dot * dt, arm);
    let new_arm = rotated * (rest_half / rotated.norm());
    let arm_vel = cross(*theta_dot, new_arm);
    (new_arm, *q_dot + arm_vel, *q_dot - arm_vel)
}

/// Hinge acceleration solve: the pivot acceleration `a0` and both angular
/// accelerations, from the member forces and the current arm state. The
/// aggregate force is divided by the hinge's total mass of 3; the per-member
/// projections use the unit particle mass.
#[allow(clippy::too_many_arguments)]
pub fn hinge_accels(
    arm1: Vec3,
    arm2: Vec3,
    td1: Vec3,
    td2: Vec3,
    f0: Vec3,
    f1: Vec3,
    f2: Vec3,
    object: usize,
) -> Result<(Vec3, Vec3, Vec3), SimError> {
    let ns1 = arm1.norm_squared();
    let ns2 = arm2.norm_squared();
    for (ns, arm) in [(ns1, arm1), (ns2, arm2)] {
        if ns.sqrt() < DEGENERATE_ARM {
            return Err(SimError::DegenerateArm { object, norm: arm.norm() });
        }
    }
    let e1 = arm1 / ns1.sqrt();
    let e2 = arm2 / ns2.sqrt();
    let nu1 = cross(td1, arm1);
    let nu2 = cross(td2, arm2);
    let f = f0 + f1 + f2;
    let degenerate = |_| SimError::DegenerateArm { object, norm: 0.0 };
    let a_vec = f / 3.0
        - cross(td1, nu1)
        - cross(td2, nu2)
        - project_perp(e1, f1).map_err(degenerate)?
        - project_perp(e2, f2).map_err(degenerate)?;
    let a_mat = Mat3::IDENTITY + Mat3::outer(e1, e1) + Mat3::outer(e2, e2);
    let a0 = solve3(a_mat, a_vec).map_err(degenerate)?;
    let thdd1 = cross(arm1, f1 - a0) / ns1;
    let thdd2 = cross(arm2, f2 - a0) / ns2;
    Ok((a0, thdd1, thdd2))
}

/// New arms and member `(position, velocity)` pairs from one hinge step.
pub struct HingeStep {
    pub arms: [Vec3; 2],
    pub members: [(Vec3, Vec3); 2],
}

/// One step of a hinge (total mass 3): solve for the pivot acceleration,
/// integrate, and rebuild both arms by rotation plus length renormalization.
#[allow(clippy::too_many_arguments)]
pub fn step_hinge(
    q: &mut Vec3,
    q_dot: &mut Vec3,
    theta_dot: &mut [Vec3; 2],
    arms: [Vec3; 2],
    rest: [f64; 2],
    forces: [Vec3; 3],
    dt: f64,
    object: usize,
) -> Result<HingeStep, SimError> {
    let (a0, thdd1, thdd2) = hinge_accels(
        arms[0], arms[1], theta_dot[0], theta_dot[1], forces[0], forces[1], forces[2], object,
    )?;
    *q_dot += a0 * dt;
    *q += *q_dot * dt;
    theta_dot[0] += thdd1 * dt;
    theta_dot[1] += thdd2 * dt;
    let mut out = HingeStep { arms: [Vec3::ZERO; 2], members: [(Vec3::ZERO, Vec3::ZERO); 2] };
    for (k, (arm, theta)) in arms.iter().zip(theta_dot.iter()).enumerate() {
        let rotated = rotate(*theta * dt, *arm);
        let new_arm = rotated * (rest[k] / rotated.norm());
        out.arms[k] = new_arm;
        out.members[k] = (*q + new_arm, *q_dot + cross(*theta, new_arm));
    }
    Ok(out)
}

/// Advance every object of the system by one step under the given forces.
pub fn step_system(
    state: &mut SystemState,
    objects: &[RigidObject],
    forces: &[Vec3],
    dt: f64,
) -> Result<(), SimError> {
    for (oi, obj) in objects.iter().enumerate() {
        match (&mut state.gen[oi], obj.kind) {
            (GenCoord::Particle, ObjectKind::Particle) => {
                let i = obj.members[0];
                let (x, v) = step_free_particle(state.positions[i], state.velocities[i], forces[i], dt);
                state.positions[i] = x;
                state.velocities[i] = v;
            }
            (GenCoord::Stick { q, q_dot, theta_dot, rest_half }, ObjectKind::Stick) => {
                let (a, b) = (obj.members[0], obj.members[1]);
                let arm = state.positions[a] - *q;
                let (new_arm, va, vb) =
                    step_stick(q, q_dot, theta_dot, arm, *rest_half, forces[a], forces[b], dt);
                state.positions[a] = *q + new_arm;
                state.positions[b] = *q - new_arm;
                state.velocities[a] = va;
                state.velocities[b] = vb;
            }
            (GenCoord::Hinge { q, q_dot, theta_dot, rest }, ObjectKind::Hinge) => {
                let (p, a, b) = (obj.members[0], obj.members[1], obj.members[2]);
                let arms = [state.positions[a] - *q, state.positions[b] - *q];
                let step = step_hinge(
                    q,
                    q_dot,
                    theta_dot,
                    arms,
                    *rest,
                    [forces[p], forces[a], forces[b]],
                    dt,
                    oi,
                )?;
                state.positions[p] = *q;
                state.velocities[p] = *q_dot;
                for (&i, &(x, v)) in [a, b].iter().zip(&step.members) {
                    state.positions[i] = x;
                    state.velocities[i] = v;
                }
            }
            (gen, kind) => {
                return Err(SimError::InvalidSpec(format!(
                    "object {oi}: generalized state {gen:?} does not match kind {kind:?}"
                )))
            }
        }
    }
    Ok(())
}

/// Run `steps` force evaluations + object updates. Pure in its inputs.
pub fn simulate(
    initial: &SystemState,
    objects: &[RigidObject],
    charges: &[f64],
    steps: usize,
    dt: f64,
    softening: f64,
) -> Result<SystemState, SimError> {
    let mut state = initial.clone();
    for _ in 0..steps {
        let forces = pairwise_forces(&state.positions, charges, softening);
        step_system(&mut state, objects, &forces, dt)?;
    }
    Ok(state)
}

/// Largest relative deviation of any constrained arm from its rest length.
pub fn max_relative_drift(state: &SystemState, objects: &[RigidObject]) -> f64 {
    let mut worst: f64 = 0.0;
    for (obj, gen) in objects.iter().zip(&state.gen) {
        match gen {
            GenCoord::Particle => {}
            GenCoord::Stick { rest_half, .. } => {
                let len = (state.positions[obj.members[0]] - state.positions[obj.members[1]]).norm();
                worst = worst.max((len - 2.0 * rest_half).abs() / (2.0 * rest_half));
            }
            GenCoord::Hinge { rest, .. } => {
                for (k, rest_len) in rest.iter().enumerate() {
                    let len =
                        (state.positions[obj.members[k + 1]] - state.positions[obj.members[0]]).norm();
                    worst = worst.max((len - rest_len).abs() / rest_len);
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests;
