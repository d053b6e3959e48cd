//! Decompose an arbitrary constrained graph into disjoint sticks plus
//! isolated particles, via greedy maximal matching over the rigid edges.
//! Sticks may not intersect, so a particle joins at most one stick.

use crate::sim::RigidObject;

/// `edges[k]` connects two node indices; `rigid[k]` flags a length
/// constraint. Returns a partition of `0..n` into sticks (matched rigid
/// pairs) and particles (everything else), particles first in node order.
pub fn decompose_kinematics(n: usize, edges: &[(usize, usize)], rigid: &[bool]) -> Vec<RigidObject> {
    assert_eq!(edges.len(), rigid.len(), "one rigid flag per edge");
    let mut matched = vec![false; n];
    let mut sticks = Vec::new();
    let mut ordered: Vec<(usize, usize)> = edges
        .iter()
        .zip(rigid)
        .filter(|(_, &r)| r)
        .map(|(&(a, b), _)| (a.min(b), a.max(b)))
        .collect();
    ordered.sort_unstable();
    ordered.dedup();
    for (a, b) in ordered {
        if a != b && !matched[a] && !matched[b] {
            matched[a] = true;
            matched[b] = true;
            sticks.push(RigidObject::stick(a, b));
        }
    }
    let mut objects: Vec<RigidObject> = (0..n)
        .filter(|&i| !matched[i])
        .map(RigidObject::particle)
        .collect();
    objects.extend(sticks);
    objects
}

/// Verifies maximality: no rigid edge has both endpoints unmatched.
pub fn is_maximal_matching(n: usize, edges: &[(usize, usize)], rigid: &[bool], objects: &[RigidObject]) -> bool {
    let mut in_stick = vec![false; n];
    for obj in objects {
        if obj.kind == crate::sim::ObjectKind::Stick {
            for &m in &obj.members {
                in_stick[m] = true;
            }
        }
    }
    edges
        .iter()
        .zip(rigid)
        .filter(|(_, &r)| r)
        .all(|(&(a, b), _)| a == b || in_stick[a] || in_stick[b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{check_partition, ObjectKind};
    use proptest::prelude::*;

    #[test]
    fn path_of_three_becomes_stick_plus_particle() {
        let objects = decompose_kinematics(3, &[(0, 1), (1, 2)], &[true, true]);
        let sticks: Vec<_> = objects.iter().filter(|o| o.kind == ObjectKind::Stick).collect();
        let particles: Vec<_> = objects.iter().filter(|o| o.kind == ObjectKind::Particle).collect();
        assert_eq!(sticks.len(), 1);
        assert_eq!(particles.len(), 1);
        check_partition(&objects, 3).unwrap();
    }

    #[test]
    fn no_rigid_edges_means_all_particles() {
        let objects = decompose_kinematics(4, &[(0, 1), (2, 3)], &[false, false]);
        assert_eq!(objects.len(), 4);
        assert!(objects.iter().all(|o| o.kind == ObjectKind::Particle));
    }

    proptest! {
        #[test]
        fn decomposition_is_a_maximal_disjoint_partition(
            n in 2usize..12,
            edge_seeds in prop::collection::vec((0usize..12, 0usize..12, prop::bool::ANY), 0..20),
        ) {
            let edges: Vec<(usize, usize)> = edge_seeds.iter().map(|&(a, b, _)| (a % n, b % n)).collect();
            let rigid: Vec<bool> = edge_seeds.iter().map(|&(_, _, r)| r).collect();
            let objects = decompose_kinematics(n, &edges, &rigid);
            check_partition(&objects, n).unwrap();
            prop_assert!(is_maximal_matching(n, &edges, &rigid, &objects));
        }
    }
}
