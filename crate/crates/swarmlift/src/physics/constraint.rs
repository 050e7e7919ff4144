//! Cable topology: each cable connects one MAV to the load, either as a
//! single inextensible distance constraint (taut-rod idealisation) or as a
//! short chain of three equal segments joined by two point-mass nodes, which
//! lets the cable sag and go slack for larger teams.

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Which simulated body a constraint endpoint lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyRef {
    Load,
    Mav(usize),
    Node(usize),
}

/// One inextensible distance constraint between two anchor points.
/// Anchors are body-frame offsets (ignored for point-mass nodes).
#[derive(Debug, Clone)]
pub struct DistanceConstraint {
    pub a: BodyRef,
    pub b: BodyRef,
    pub anchor_a: Vec3,
    pub anchor_b: Vec3,
    pub length: f64,
    /// Index of the cable this segment belongs to.
    pub cable: usize,
    /// Marks the MAV-side segment whose impulse sum is reported as the
    /// cable's tension estimate.
    pub probe: bool,
}

/// Geometry of one cable.
#[derive(Debug, Clone)]
pub struct CableModel {
    /// Total unstretched length (m).
    pub length: f64,
    /// 1 = taut rod, 3 = chain of three segments with two interior nodes.
    pub segments: usize,
    /// Attachment point on the load, in the load body frame.
    pub attach_load: Vec3,
    /// Attachment point on the MAV, in the MAV body frame.
    pub attach_mav: Vec3,
    /// Mass of each interior chain node (kg).
    pub node_mass: f64,
}

/// Expand the cable set into solver constraints. Returns the constraint list
/// and the number of interior nodes (chain cables contribute two each, with
/// cable `i`'s nodes at indices `2i` and `2i + 1` counting from the MAV side).
///
/// Rejects non-positive lengths, unsupported segment counts, and cables that
/// share a load attachment point.
pub fn build_cable_constraints(cables: &[CableModel]) -> Result<(Vec<DistanceConstraint>, usize)> {
    for (i, c) in cables.iter().enumerate() {
        if !(c.length > 0.0) {
            return Err(Error::Config(format!(
                "cable {i} has non-positive length {}",
                c.length
            )));
        }
        if c.segments != 1 && c.segments != 3 {
            return Err(Error::Config(format!(
                "cable {i}: segment count must be 1 or 3, got {}",
                c.segments
            )));
        }
        if c.segments == 3 && !(c.node_mass > 0.0) {
            return Err(Error::Config(format!(
                "cable {i}: chain node mass must be positive"
            )));
        }
        for (j, other) in cables.iter().enumerate().skip(i + 1) {
            if (c.attach_load - other.attach_load).norm() < 1e-9 {
                return Err(Error::Config(format!(
                    "cables {i} and {j} share the load attachment point {:?}",
                    c.attach_load
                )));
            }
        }
    }

    let mut constraints = Vec::new();
    let mut n_nodes = 0;
    for (i, c) in cables.iter().enumerate() {
        match c.segments {
            1 => constraints.push(DistanceConstraint {
                a: BodyRef::Mav(i),
                b: BodyRef::Load,
                anchor_a: c.attach_mav,
                anchor_b: c.attach_load,
                length: c.length,
                cable: i,
                probe: true,
            }),
            3 => {
                let seg = c.length / 3.0;
                let n0 = n_nodes;
                let n1 = n_nodes + 1;
                n_nodes += 2;
                constraints.push(DistanceConstraint {
                    a: BodyRef::Mav(i),
                    b: BodyRef::Node(n0),
                    anchor_a: c.attach_mav,
                    anchor_b: Vec3::ZERO,
                    length: seg,
                    cable: i,
                    probe: true,
                });
                constraints.push(DistanceConstraint {
                    a: BodyRef::Node(n0),
                    b: BodyRef::Node(n1),
                    anchor_a: Vec3::ZERO,
                    anchor_b: Vec3::ZERO,
                    length: seg,
                    cable: i,
                    probe: false,
                });
                constraints.push(DistanceConstraint {
                    a: BodyRef::Node(n1),
                    b: BodyRef::Load,
                    anchor_a: Vec3::ZERO,
                    anchor_b: c.attach_load,
                    length: seg,
                    cable: i,
                    probe: false,
                });
            }
            _ => unreachable!(),
        }
    }
    Ok((constraints, n_nodes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cable(attach_load: Vec3, segments: usize) -> CableModel {
        CableModel {
            length: 1.0,
            segments,
            attach_load,
            attach_mav: Vec3::ZERO,
            node_mass: 0.001,
        }
    }

    #[test]
    fn rod_cables_expand_one_to_one() {
        let cables = vec![cable(Vec3::X, 1), cable(Vec3::Y, 1)];
        let (cs, nodes) = build_cable_constraints(&cables).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(nodes, 0);
        assert!(cs.iter().all(|c| c.probe));
        assert_eq!(cs[1].a, BodyRef::Mav(1));
    }

    #[test]
    fn chain_cables_add_two_nodes_each() {
        let cables = vec![cable(Vec3::X, 3), cable(Vec3::Y, 3)];
        let (cs, nodes) = build_cable_constraints(&cables).unwrap();
        assert_eq!(cs.len(), 6);
        assert_eq!(nodes, 4);
        // MAV-side segment is the probe; lengths are thirds.
        assert!(cs[0].probe && !cs[1].probe && !cs[2].probe);
        assert!((cs[0].length - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cs[3].a, BodyRef::Mav(1));
        assert_eq!(cs[3].b, BodyRef::Node(2));
        assert_eq!(cs[5].b, BodyRef::Load);
    }

    #[test]
    fn duplicate_load_attachment_is_rejected() {
        let cables = vec![cable(Vec3::X, 1), cable(Vec3::X, 1)];
        let err = build_cable_constraints(&cables).unwrap_err();
        assert!(err.to_string().contains("share the load attachment"));
    }

    #[test]
    fn bad_length_and_segments_are_rejected() {
        assert!(build_cable_constraints(&[CableModel {
            length: 0.0,
            ..cable(Vec3::X, 1)
        }])
        .is_err());
        assert!(build_cable_constraints(&[cable(Vec3::X, 2)]).is_err());
    }
}
