//! Trajectory dataset generation and the on-disk dataset format.
//!
//! A dataset directory holds `meta.json` (spec, integration scalars, object
//! table, per-sample rest lengths) and `frames.f64`: little-endian IEEE 754
//! doubles laid out `[sample][initial: N*6 (x then v)][final: N*3]`,
//! row-major with no padding.

use super::{
    canonical_gen, check_partition, max_relative_drift, rest_lengths_of, sample_system, simulate,
    tags, RigidObject, SimError, SystemSpec, SystemState,
};
use crate::geom::Vec3;
use crate::rng::subseed;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.f64";

/// One simulated trajectory: full initial state and final positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub initial: SystemState,
    pub final_positions: Vec<Vec3>,
}

/// Simulated (initial state, final positions) pairs with their generation
/// parameters. Sample `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub spec: SystemSpec,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub softening: f64,
    pub objects: Vec<RigidObject>,
    pub samples: Vec<Sample>,
}

impl TrajectoryDataset {
    pub fn n_particles(&self) -> usize {
        self.spec.n_particles()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationReport {
    pub samples: usize,
    /// Worst relative arm-length drift across all final states.
    pub max_drift: f64,
}

/// Simulate `num` trajectories of `spec` for `steps` steps of size `dt`.
pub fn generate_dataset(
    spec: &SystemSpec,
    num: usize,
    steps: usize,
    dt: f64,
    softening: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, GenerationReport), SimError> {
    spec.validate()?;
    let objects = spec.object_table();
    let mut samples = Vec::with_capacity(num);
    let mut max_drift: f64 = 0.0;
    for i in 0..num {
        let (initial, _) = sample_system(spec, subseed(seed, tags::SAMPLE, i as u64))?;
        let final_state = simulate(&initial, &objects, &spec.charges, steps, dt, softening)?;
        max_drift = max_drift.max(max_relative_drift(&final_state, &objects));
        samples.push(Sample { initial, final_positions: final_state.positions });
    }
    let report = GenerationReport { samples: num, max_drift };
    Ok((TrajectoryDataset { spec: spec.clone(), dt, steps, seed, softening, objects, samples }, report))
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: SystemSpec,
    dt: f64,
    steps: usize,
    seed: u64,
    softening: f64,
    objects: Vec<RigidObject>,
    /// `rest_lengths[sample][object]` lists the sampled lengths of that
    /// object's constrained arms (empty for particles).
    rest_lengths: Vec<Vec<Vec<f64>>>,
    num_samples: usize,
}

/// Write `meta.json` + `frames.f64` under `dir` (created if needed).
pub fn write_dataset(dataset: &TrajectoryDataset, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        spec: dataset.spec.clone(),
        dt: dataset.dt,
        steps: dataset.steps,
        seed: dataset.seed,
        softening: dataset.softening,
        objects: dataset.objects.clone(),
        rest_lengths: dataset
            .samples
            .iter()
            .map(|s| rest_lengths_of(&s.initial, &dataset.objects))
            .collect(),
        num_samples: dataset.samples.len(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("meta serialization cannot fail");
    fs::write(dir.join(META_FILE), json)?;

    let n = dataset.n_particles();
    let mut buf = Vec::with_capacity(dataset.samples.len() * n * 9 * 8);
    let mut push = |v: Vec3| {
        for c in v.to_array() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    };
    for sample in &dataset.samples {
        for &x in &sample.initial.positions {
            push(x);
        }
        for &v in &sample.initial.velocities {
            push(v);
        }
        for &x in &sample.final_positions {
            push(x);
        }
    }
    let mut file = fs::File::create(dir.join(FRAMES_FILE))?;
    file.write_all(&buf)?;
    Ok(())
}

fn malformed(path: &Path, offset: u64, what: impl Into<String>) -> SimError {
    SimError::Malformed { path: path.display().to_string(), offset, what: what.into() }
}

/// Read a dataset directory written by [`write_dataset`]. The float payload
/// round-trips bitwise; the generalized state is re-derived from it.
pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset, SimError> {
    let meta_path = dir.join(META_FILE);
    let meta_bytes = fs::read(&meta_path)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| malformed(&meta_path, 0, e.to_string()))?;
    meta.spec.validate().map_err(|e| malformed(&meta_path, 0, e.to_string()))?;
    let n = meta.spec.n_particles();
    check_partition(&meta.objects, n).map_err(|e| malformed(&meta_path, 0, e.to_string()))?;
    if meta.rest_lengths.len() != meta.num_samples {
        return Err(malformed(
            &meta_path,
            0,
            format!("{} rest-length rows for {} samples", meta.rest_lengths.len(), meta.num_samples),
        ));
    }

    let frames_path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&frames_path)?;
    let expected = meta.num_samples * n * 9 * 8;
    if bytes.len() != expected {
        return Err(malformed(
            &frames_path,
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {} samples, found {}", meta.num_samples, bytes.len()),
        ));
    }

    let mut doubles = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next_vec3 = || {
        let x = doubles.next().unwrap();
        let y = doubles.next().unwrap();
        let z = doubles.next().unwrap();
        Vec3::new(x, y, z)
    };

    let mut samples = Vec::with_capacity(meta.num_samples);
    for (si, rests) in meta.rest_lengths.iter().enumerate() {
        if rests.len() != meta.objects.len() {
            return Err(malformed(
                &meta_path,
                0,
                format!("sample {si}: {} rest-length entries for {} objects", rests.len(), meta.objects.len()),
            ));
        }
        for (obj, rest) in meta.objects.iter().zip(rests) {
            if rest.len() != obj.arm_count() {
                return Err(malformed(
                    &meta_path,
                    0,
                    format!("sample {si}: {} rest lengths for a {:?}", rest.len(), obj.kind),
                ));
            }
            if rest.iter().any(|&l| l.is_nan() || l <= 0.0) {
                return Err(malformed(&meta_path, 0, format!("sample {si}: non-positive rest length")));
            }
        }
        let positions: Vec<Vec3> = (0..n).map(|_| next_vec3()).collect();
        let velocities: Vec<Vec3> = (0..n).map(|_| next_vec3()).collect();
        let final_positions: Vec<Vec3> = (0..n).map(|_| next_vec3()).collect();
        let byte_base = (si * n * 9 * 8) as u64;
        for (i, v) in positions.iter().chain(&velocities).chain(&final_positions).enumerate() {
            if !v.is_finite() {
                return Err(malformed(&frames_path, byte_base + (i * 24) as u64, "non-finite value"));
            }
        }
        let gen = canonical_gen(&positions, &velocities, &meta.objects, rests);
        samples.push(Sample {
            initial: SystemState { positions, velocities, gen },
            final_positions,
        });
    }

    Ok(TrajectoryDataset {
        spec: meta.spec,
        dt: meta.dt,
        steps: meta.steps,
        seed: meta.seed,
        softening: meta.softening,
        objects: meta.objects,
        samples,
    })
}
