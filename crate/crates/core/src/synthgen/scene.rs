//! Primitive assemblies with exact boundary curves.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::primitives::{Axes, BoundaryCurve, Curve, Domain, Primitive, Surface};
use crate::cloud::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Surface distance allowed between a boundary curve and its incident primitives.
pub const CURVE_ON_SURFACE_TOL: f64 = 1e-6;
/// Normal agreement below which two same-kind primitives count as one smooth surface.
pub const SAME_GEOMETRY_DEG: f64 = 1.0;
const CURVE_PROBES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveScene {
    pub primitives: Vec<Primitive>,
    pub curves: Vec<BoundaryCurve>,
}

impl PrimitiveScene {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !p.surface.is_valid() {
                return Err(Error::invalid(format!("primitive {i} is degenerate")));
            }
        }
        for (c, bc) in self.curves.iter().enumerate() {
            let (a, b) = bc.between;
            if a == b || a >= self.primitives.len() || b >= self.primitives.len() {
                return Err(Error::invalid(format!("curve {c} has invalid incident primitives")));
            }
            for s in 0..=CURVE_PROBES {
                let q = bc.curve.at(s as f64 / CURVE_PROBES as f64);
                for &p in &[a, b] {
                    let d = self.primitives[p].surface.distance(q);
                    if d > CURVE_ON_SURFACE_TOL {
                        return Err(Error::invalid(format!("curve {c} is {d:e} off primitive {p}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when the curve separates two patches of the same smooth surface.
    pub fn is_same_geometry(&self, curve: usize) -> bool {
        let bc = &self.curves[curve];
        let (pa, pb) = (&self.primitives[bc.between.0], &self.primitives[bc.between.1]);
        if pa.kind() != pb.kind() {
            return false;
        }
        (0..CURVE_PROBES).all(|s| {
            let q = bc.curve.at((s as f64 + 0.5) / CURVE_PROBES as f64);
            let ang = vec3::angle_deg(pa.surface.normal_near(q), pb.surface.normal_near(q));
            ang.min(180.0 - ang) <= SAME_GEOMETRY_DEG
        })
    }

    /// Indices of curves that count as part boundaries.
    pub fn active_curves(&self) -> Vec<usize> {
        (0..self.curves.len()).filter(|&c| !self.is_same_geometry(c)).collect()
    }

    pub fn rotated(&self, rot: &[f64; 9]) -> PrimitiveScene {
        PrimitiveScene {
            primitives: self
                .primitives
                .iter()
                .map(|p| Primitive { surface: p.surface.transformed(rot), ..*p })
                .collect(),
            curves: self
                .curves
                .iter()
                .map(|c| BoundaryCurve { curve: c.curve.transformed(rot), between: c.between })
                .collect(),
        }
    }
}

/// Generator families; geometric ones yield primitive scenes, semantic ones labeled meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Dihedral,
    Box,
    CappedCylinder,
    CylinderBox,
    SphereCylinder,
    TorusPlane,
    /// Uniform draw over the six geometric templates per shape.
    Mixed,
    Table,
    Chair,
    Lamp,
}

impl Template {
    pub const GEOMETRIC: [Template; 6] = [
        Template::Dihedral,
        Template::Box,
        Template::CappedCylinder,
        Template::CylinderBox,
        Template::SphereCylinder,
        Template::TorusPlane,
    ];
    pub const ALL: [Template; 10] = [
        Template::Dihedral,
        Template::Box,
        Template::CappedCylinder,
        Template::CylinderBox,
        Template::SphereCylinder,
        Template::TorusPlane,
        Template::Mixed,
        Template::Table,
        Template::Chair,
        Template::Lamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Dihedral => "dihedral",
            Template::Box => "box",
            Template::CappedCylinder => "capped_cylinder",
            Template::CylinderBox => "cylinder_box",
            Template::SphereCylinder => "sphere_cylinder",
            Template::TorusPlane => "torus_plane",
            Template::Mixed => "mixed",
            Template::Table => "table",
            Template::Chair => "chair",
            Template::Lamp => "lamp",
        }
    }

    pub fn parse(name: &str) -> Option<Template> {
        Template::ALL.iter().copied().find(|t| t.name() == name)
    }

    pub fn names() -> String {
        Template::ALL.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
    }

    pub fn is_semantic(self) -> bool {
        matches!(self, Template::Table | Template::Chair | Template::Lamp)
    }

    /// Randomized, randomly rotated scene for a geometric template.
    pub fn scene<R: Rng + ?Sized>(self, rng: &mut R) -> Result<PrimitiveScene> {
        let t = match self {
            Template::Mixed => Template::GEOMETRIC[rng.random_range(0..Template::GEOMETRIC.len())],
            t => t,
        };
        let scene = match t {
            Template::Dihedral => dihedral(rng.random_range(60.0..120.0)),
            Template::Box => {
                box_scene([rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)])
            }
            Template::CappedCylinder => capped_cylinder(rng.random_range(0.4..0.8), rng.random_range(0.8..1.6)),
            Template::CylinderBox => cylinder_box(
                [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.3..0.6)],
                rng.random_range(0.25..0.45),
                rng.random_range(0.5..1.0),
            ),
            Template::SphereCylinder => sphere_cylinder(rng.random_range(0.3..0.6)),
            Template::TorusPlane => torus_plane(rng.random_range(0.6..0.9), rng.random_range(0.2..0.35)),
            _ => return Err(Error::invalid(format!("template {} is not geometric", t.name()))),
        };
        Ok(scene.rotated(&vec3::random_rotation(rng)))
    }
}

const X: Vec3 = [1.0, 0.0, 0.0];
const Y: Vec3 = [0.0, 1.0, 0.0];

/// Two unit half-planes meeting along the x axis at the given interior angle.
pub fn dihedral(angle_deg: f64) -> PrimitiveScene {
    let t = angle_deg.to_radians();
    let d = [0.0, t.cos(), t.sin()];
    let dom = Domain::rect((-1.0, 1.0), (0.0, 1.0));
    let a = Primitive::new(Surface::Plane { origin: [0.0; 3], axes: Axes::from_e1_e2(X, Y) }, dom, true, 0);
    let b = Primitive::new(Surface::Plane { origin: [0.0; 3], axes: Axes::from_e1_e2(X, d) }, dom, false, 1);
    PrimitiveScene {
        primitives: vec![a, b],
        curves: vec![BoundaryCurve {
            curve: Curve::Segment { a: [-1.0, 0.0, 0.0], b: [1.0, 0.0, 0.0] },
            between: (0, 1),
        }],
    }
}

/// Two coplanar unit squares sharing the edge x = 0.
pub fn coplanar_pair() -> PrimitiveScene {
    let axes = Axes::WORLD;
    let a = Primitive::new(Surface::Plane { origin: [0.0; 3], axes }, Domain::rect((-1.0, 0.0), (0.0, 1.0)), false, 0);
    let b = Primitive::new(Surface::Plane { origin: [0.0; 3], axes }, Domain::rect((0.0, 1.0), (0.0, 1.0)), false, 1);
    PrimitiveScene {
        primitives: vec![a, b],
        curves: vec![BoundaryCurve { curve: Curve::Segment { a: [0.0; 3], b: [0.0, 1.0, 0.0] }, between: (0, 1) }],
    }
}

fn unit(k: usize) -> Vec3 {
    let mut e = [0.0; 3];
    e[k] = 1.0;
    e
}

fn box_faces(h: [f64; 3], center: Vec3, part0: i64) -> (Vec<Primitive>, Vec<(usize, f64)>) {
    let mut prims = Vec::with_capacity(6);
    let mut ids = Vec::with_capacity(6);
    for k in 0..3 {
        for s in [1.0, -1.0] {
            let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
            let (a1, a2) = if s > 0.0 { (k1, k2) } else { (k2, k1) };
            let mut origin = center;
            origin[k] += s * h[k];
            prims.push(Primitive::new(
                Surface::Plane { origin, axes: Axes::from_e1_e2(unit(a1), unit(a2)) },
                Domain::rect((-h[a1], h[a1]), (-h[a2], h[a2])),
                false,
                part0 + prims.len() as i64,
            ));
            ids.push((k, s));
        }
    }
    (prims, ids)
}

fn box_edges(h: [f64; 3], center: Vec3, ids: &[(usize, f64)], offset: usize) -> Vec<BoundaryCurve> {
    let mut curves = Vec::with_capacity(12);
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let ((k1, s1), (k2, s2)) = (ids[i], ids[j]);
            if k1 == k2 {
                continue;
            }
            let k3 = 3 - k1 - k2;
            let mut a = center;
            a[k1] += s1 * h[k1];
            a[k2] += s2 * h[k2];
            let mut b = a;
            a[k3] -= h[k3];
            b[k3] += h[k3];
            curves.push(BoundaryCurve { curve: Curve::Segment { a, b }, between: (offset + i, offset + j) });
        }
    }
    curves
}

/// Axis-aligned box with the given half extents; one part per face.
pub fn box_scene(h: [f64; 3]) -> PrimitiveScene {
    let (primitives, ids) = box_faces(h, [0.0; 3], 0);
    let curves = box_edges(h, [0.0; 3], &ids, 0);
    PrimitiveScene { primitives, curves }
}

fn disk(center: Vec3, up: bool, radius: f64, part: i64) -> Primitive {
    let axes = if up { Axes::from_e1_e2(X, Y) } else { Axes::from_e1_e2(Y, X) };
    Primitive {
        surface: Surface::Plane { origin: center, axes },
        domain: Domain { u: (-radius, radius), v: (-radius, radius), radial: Some((0.0, radius)) },
        flip: false,
        part,
    }
}

/// Cylinder about z with flat caps.
pub fn capped_cylinder(radius: f64, height: f64) -> PrimitiveScene {
    let h = 0.5 * height;
    let side = Primitive::new(
        Surface::Cylinder { center: [0.0; 3], axes: Axes::WORLD, radius },
        Domain::rect((0.0, TAU), (-h, h)),
        false,
        0,
    );
    let top = disk([0.0, 0.0, h], true, radius, 1);
    let bottom = disk([0.0, 0.0, -h], false, radius, 2);
    PrimitiveScene {
        primitives: vec![side, top, bottom],
        curves: vec![
            BoundaryCurve { curve: Curve::full_circle([0.0, 0.0, h], Axes::WORLD, radius), between: (0, 1) },
            BoundaryCurve { curve: Curve::full_circle([0.0, 0.0, -h], Axes::WORLD, radius), between: (0, 2) },
        ],
    }
}

/// Capped cylinder standing on the top face of a box.
pub fn cylinder_box(h: [f64; 3], radius: f64, height: f64) -> PrimitiveScene {
    let center = [0.0, 0.0, -0.5 * height];
    let (mut primitives, ids) = box_faces(h, center, 0);
    let mut curves = box_edges(h, center, &ids, 0);
    let top_z = center[2] + h[2];
    // the +z face gets a hole where the cylinder stands
    let top = ids.iter().position(|&(k, s)| k == 2 && s > 0.0).expect("box has a +z face");
    primitives[top].domain.radial = Some((radius, f64::INFINITY));
    let base = Axes::WORLD;
    let side = primitives.len();
    primitives.push(Primitive::new(
        Surface::Cylinder { center: [0.0, 0.0, top_z], axes: base, radius },
        Domain::rect((0.0, TAU), (0.0, height)),
        false,
        6,
    ));
    primitives.push(disk([0.0, 0.0, top_z + height], true, radius, 7));
    curves.push(BoundaryCurve { curve: Curve::full_circle([0.0, 0.0, top_z], base, radius), between: (top, side) });
    curves.push(BoundaryCurve {
        curve: Curve::full_circle([0.0, 0.0, top_z + height], base, radius),
        between: (side, side + 1),
    });
    PrimitiveScene { primitives, curves }
}

/// Unit sphere with a coaxial cylindrical hole of the given radius.
pub fn sphere_cylinder(hole: f64) -> PrimitiveScene {
    let alpha = hole.asin();
    let z = alpha.cos();
    let sphere = Primitive::new(
        Surface::Sphere { center: [0.0; 3], axes: Axes::WORLD, radius: 1.0 },
        Domain::rect((0.0, TAU), (alpha, PI - alpha)),
        false,
        0,
    );
    let wall = Primitive::new(
        Surface::Cylinder { center: [0.0; 3], axes: Axes::WORLD, radius: hole },
        Domain::rect((0.0, TAU), (-z, z)),
        true,
        1,
    );
    PrimitiveScene {
        primitives: vec![sphere, wall],
        curves: vec![
            BoundaryCurve { curve: Curve::full_circle([0.0, 0.0, z], Axes::WORLD, hole), between: (0, 1) },
            BoundaryCurve { curve: Curve::full_circle([0.0, 0.0, -z], Axes::WORLD, hole), between: (0, 1) },
        ],
    }
}

/// Upper half torus resting on the plane z = 0.
pub fn torus_plane(major: f64, minor: f64) -> PrimitiveScene {
    let torus = Primitive::new(
        Surface::Torus { center: [0.0; 3], axes: Axes::WORLD, major, minor },
        Domain::rect((0.0, TAU), (0.0, PI)),
        false,
        0,
    );
    let (inner, outer) = (major - minor, major + minor);
    let half = outer + 0.5;
    let plane = |radial, part| Primitive {
        surface: Surface::Plane { origin: [0.0; 3], axes: Axes::WORLD },
        domain: Domain { u: (-half, half), v: (-half, half), radial: Some(radial) },
        flip: false,
        part,
    };
    PrimitiveScene {
        primitives: vec![torus, plane((outer, f64::INFINITY), 1), plane((0.0, inner), 2)],
        curves: vec![
            BoundaryCurve { curve: Curve::full_circle([0.0; 3], Axes::WORLD, outer), between: (0, 1) },
            BoundaryCurve { curve: Curve::full_circle([0.0; 3], Axes::WORLD, inner), between: (0, 2) },
        ],
    }
}
