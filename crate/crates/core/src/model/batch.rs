//! Batched graph view of a set of trajectory samples. Samples share one
//! object table, so a batch is the block-diagonal union of B copies of the
//! complete interaction graph, with node/edge features precomputed as
//! constants and the object membership flattened into index vectors.

use crate::ad::Tensor;
use crate::geom::Vec3;
use crate::sim::{ObjectKind, RigidObject, Sample, SimError, TrajectoryDataset};
use std::sync::Arc;

/// Edge type indicator values: 0 none, 1 stick, 2 hinge.
fn edge_indicator(objects: &[RigidObject], n: usize) -> Vec<Vec<f64>> {
    let mut ind = vec![vec![0.0; n]; n];
    for obj in objects {
        match obj.kind {
            ObjectKind::Particle => {}
            ObjectKind::Stick => {
                let (a, b) = (obj.members[0], obj.members[1]);
                ind[a][b] = 1.0;
                ind[b][a] = 1.0;
            }
            ObjectKind::Hinge => {
                // the two rigid edges share the pivot
                for k in 0..2 {
                    let (p, i) = (obj.members[0], obj.members[k + 1]);
                    ind[p][i] = 2.0;
                    ind[i][p] = 2.0;
                }
            }
        }
    }
    ind
}

/// Flattened member indices of the objects of one kind across the batch.
#[derive(Debug, Clone, Default)]
pub struct ObjectIndex {
    /// `members[k][o]` is the node index of member slot `k` of instance `o`.
    pub members: Vec<Arc<Vec<usize>>>,
    /// Row of each instance in the batch-wide object enumeration.
    pub object_rows: Arc<Vec<usize>>,
}

impl ObjectIndex {
    pub fn len(&self) -> usize {
        self.members.first().map_or(0, |m| m.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub batch: usize,
    pub n_per_sample: usize,
    /// `[B*N, 3]` initial positions.
    pub positions: Tensor,
    /// `[B*N, 3]` initial velocities.
    pub velocities: Tensor,
    /// `[B*N, 1]` velocity norms (the invariant node input).
    pub velocity_norms: Tensor,
    /// Directed edges: message source (the `j` of `x_ji = x_i - x_j`).
    pub edge_src: Arc<Vec<usize>>,
    /// Directed edges: receiver `i`.
    pub edge_dst: Arc<Vec<usize>>,
    /// `[E, 2]` edge features: charge product and edge type indicator.
    pub edge_features: Tensor,
    pub particles: ObjectIndex,
    pub sticks: ObjectIndex,
    pub hinges: ObjectIndex,
    /// Node -> batch-wide object row.
    pub node_object: Arc<Vec<usize>>,
    /// Total object instances across the batch.
    pub objects_total: usize,
    /// `[B*N, 3]` final positions, when the samples carry them.
    pub targets: Option<Tensor>,
}

impl GraphBatch {
    pub fn nodes(&self) -> usize {
        self.batch * self.n_per_sample
    }

    /// Build a batch from samples that share `objects` and `charges`.
    pub fn new(
        samples: &[&Sample],
        objects: &[RigidObject],
        charges: &[f64],
        with_targets: bool,
    ) -> Result<GraphBatch, SimError> {
        assert!(!samples.is_empty(), "empty batch");
        let n = charges.len();
        crate::sim::check_partition(objects, n)?;

        let b = samples.len();
        let mut positions = Vec::with_capacity(b * n);
        let mut velocities = Vec::with_capacity(b * n);
        let mut targets: Vec<Vec3> = Vec::with_capacity(b * n);
        for s in samples {
            if s.initial.positions.len() != n {
                return Err(SimError::InvalidSpec(format!(
                    "sample has {} particles, expected {n}",
                    s.initial.positions.len()
                )));
            }
            positions.extend_from_slice(&s.initial.positions);
            velocities.extend_from_slice(&s.initial.velocities);
            if with_targets {
                targets.extend_from_slice(&s.final_positions);
            }
        }
        let velocity_norms =
            Tensor::from_vec(b * n, 1, velocities.iter().map(|v| v.norm()).collect());

        let ind = edge_indicator(objects, n);
        let mut edge_src = Vec::with_capacity(b * n * (n - 1));
        let mut edge_dst = Vec::with_capacity(b * n * (n - 1));
        let mut edge_features = Vec::with_capacity(b * n * (n - 1) * 2);
        for bi in 0..b {
            let base = bi * n;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    edge_dst.push(base + i);
                    edge_src.push(base + j);
                    edge_features.push(charges[i] * charges[j]);
                    edge_features.push(ind[i][j]);
                }
            }
        }
        let e = edge_src.len();

        // object views, enumerated sample-major then table order
        let mut particle_nodes = Vec::new();
        let mut stick_members = [Vec::new(), Vec::new()];
        let mut hinge_members = [Vec::new(), Vec::new(), Vec::new()];
        let (mut particle_rows, mut stick_rows, mut hinge_rows) = (Vec::new(), Vec::new(), Vec::new());
        let mut node_object = vec![0usize; b * n];
        let mut row = 0;
        for bi in 0..b {
            let base = bi * n;
            for obj in objects {
                match obj.kind {
                    ObjectKind::Particle => {
                        particle_nodes.push(base + obj.members[0]);
                        particle_rows.push(row);
                        node_object[base + obj.members[0]] = row;
                    }
                    ObjectKind::Stick => {
                        for k in 0..2 {
                            stick_members[k].push(base + obj.members[k]);
                            node_object[base + obj.members[k]] = row;
                        }
                        stick_rows.push(row);
                    }
                    ObjectKind::Hinge => {
                        for k in 0..3 {
                            hinge_members[k].push(base + obj.members[k]);
                            node_object[base + obj.members[k]] = row;
                        }
                        hinge_rows.push(row);
                    }
                }
                row += 1;
            }
        }

        Ok(GraphBatch {
            batch: b,
            n_per_sample: n,
            positions: Tensor::from_vec3s(&positions),
            velocities: Tensor::from_vec3s(&velocities),
            velocity_norms,
            edge_src: Arc::new(edge_src),
            edge_dst: Arc::new(edge_dst),
            edge_features: Tensor::from_vec(e, 2, edge_features),
            particles: ObjectIndex {
                members: vec![Arc::new(particle_nodes)],
                object_rows: Arc::new(particle_rows),
            },
            sticks: ObjectIndex {
                members: stick_members.into_iter().map(Arc::new).collect(),
                object_rows: Arc::new(stick_rows),
            },
            hinges: ObjectIndex {
                members: hinge_members.into_iter().map(Arc::new).collect(),
                object_rows: Arc::new(hinge_rows),
            },
            node_object: Arc::new(node_object),
            objects_total: row,
            targets: if with_targets { Some(Tensor::from_vec3s(&targets)) } else { None },
        })
    }

    /// Batch over a contiguous sample range of a dataset.
    pub fn from_dataset(ds: &TrajectoryDataset, range: std::ops::Range<usize>) -> Result<GraphBatch, SimError> {
        let samples: Vec<&Sample> = ds.samples[range].iter().collect();
        GraphBatch::new(&samples, &ds.objects, &ds.spec.charges, true)
    }
}
