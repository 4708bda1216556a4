//! Analytic surface patches and boundary curves.

use std::f64::consts::{PI, TAU};

use crate::cloud::vec3::{self, Vec3};

/// Orthonormal axes of a local frame; `e3 = e1 x e2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl Axes {
    pub const WORLD: Axes = Axes { e1: [1.0, 0.0, 0.0], e2: [0.0, 1.0, 0.0], e3: [0.0, 0.0, 1.0] };

    /// Right-handed axes with `e1`, `e2` as given (both unit, orthogonal).
    pub fn from_e1_e2(e1: Vec3, e2: Vec3) -> Axes {
        Axes { e1, e2, e3: vec3::cross(e1, e2) }
    }

    fn at(&self, a: f64, b: f64, c: f64) -> Vec3 {
        [
            a * self.e1[0] + b * self.e2[0] + c * self.e3[0],
            a * self.e1[1] + b * self.e2[1] + c * self.e3[1],
            a * self.e1[2] + b * self.e2[2] + c * self.e3[2],
        ]
    }

    fn local(&self, d: Vec3) -> Vec3 {
        [vec3::dot(d, self.e1), vec3::dot(d, self.e2), vec3::dot(d, self.e3)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceKind {
    Plane,
    Sphere,
    Cylinder,
    Cone,
    Torus,
}

/// Unbounded analytic surface; `(u, v)` parameterization noted per variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// `o + u e1 + v e2`.
    Plane { origin: Vec3, axes: Axes },
    /// `u` = azimuth about e3, `v` = polar angle from e3.
    Sphere { center: Vec3, axes: Axes, radius: f64 },
    /// `u` = azimuth, `v` = height along e3.
    Cylinder { center: Vec3, axes: Axes, radius: f64 },
    /// `u` = azimuth, `v` = slant distance from the apex.
    Cone { apex: Vec3, axes: Axes, half_angle: f64 },
    /// `u` = azimuth, `v` = tube angle (0 at the outer equator, pi/2 on top).
    Torus { center: Vec3, axes: Axes, major: f64, minor: f64 },
}

impl Surface {
    pub fn kind(&self) -> SurfaceKind {
        match self {
            Surface::Plane { .. } => SurfaceKind::Plane,
            Surface::Sphere { .. } => SurfaceKind::Sphere,
            Surface::Cylinder { .. } => SurfaceKind::Cylinder,
            Surface::Cone { .. } => SurfaceKind::Cone,
            Surface::Torus { .. } => SurfaceKind::Torus,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            Surface::Plane { .. } => true,
            Surface::Sphere { radius, .. } | Surface::Cylinder { radius, .. } => radius > 0.0,
            Surface::Cone { half_angle, .. } => half_angle > 0.0 && half_angle < PI / 2.0,
            Surface::Torus { major, minor, .. } => minor > 0.0 && major > minor,
        }
    }

    /// Point and (unoriented-outward) unit normal at `(u, v)`, plus the area element.
    pub fn eval(&self, u: f64, v: f64) -> (Vec3, Vec3, f64) {
        match *self {
            Surface::Plane { origin, axes } => (vec3::add(origin, axes.at(u, v, 0.0)), axes.e3, 1.0),
            Surface::Sphere { center, axes, radius } => {
                let (st, ct) = v.sin_cos();
                let (sp, cp) = u.sin_cos();
                let n = axes.at(st * cp, st * sp, ct);
                (vec3::add(center, vec3::scale(n, radius)), n, radius * radius * st.abs())
            }
            Surface::Cylinder { center, axes, radius } => {
                let (sp, cp) = u.sin_cos();
                let n = axes.at(cp, sp, 0.0);
                (vec3::add(center, vec3::add(vec3::scale(n, radius), axes.at(0.0, 0.0, v))), n, radius)
            }
            Surface::Cone { apex, axes, half_angle } => {
                let (sa, ca) = half_angle.sin_cos();
                let (sp, cp) = u.sin_cos();
                let radial = axes.at(cp, sp, 0.0);
                let p = vec3::add(apex, vec3::add(vec3::scale(radial, v * sa), axes.at(0.0, 0.0, v * ca)));
                let n = vec3::sub(vec3::scale(radial, ca), vec3::scale(axes.e3, sa));
                (p, n, v.abs() * sa)
            }
            Surface::Torus { center, axes, major, minor } => {
                let (st, ct) = v.sin_cos();
                let (sp, cp) = u.sin_cos();
                let radial = axes.at(cp, sp, 0.0);
                let n = vec3::add(vec3::scale(radial, ct), vec3::scale(axes.e3, st));
                let p = vec3::add(center, vec3::add(vec3::scale(radial, major), vec3::scale(n, minor)));
                (p, n, minor * (major + minor * ct))
            }
        }
    }

    /// Unit normal of the unbounded surface at the foot point of `p`
    /// (same orientation convention as [`Self::eval`]).
    pub fn normal_near(&self, p: Vec3) -> Vec3 {
        match *self {
            Surface::Plane { axes, .. } => axes.e3,
            Surface::Sphere { center, .. } => vec3::normalize(vec3::sub(p, center)).unwrap_or([0.0, 0.0, 1.0]),
            Surface::Cylinder { center, axes, .. } => {
                let l = axes.local(vec3::sub(p, center));
                let phi = l[1].atan2(l[0]);
                axes.at(phi.cos(), phi.sin(), 0.0)
            }
            Surface::Cone { apex, axes, half_angle } => {
                let l = axes.local(vec3::sub(p, apex));
                let phi = l[1].atan2(l[0]);
                let (sa, ca) = half_angle.sin_cos();
                vec3::sub(vec3::scale(axes.at(phi.cos(), phi.sin(), 0.0), ca), vec3::scale(axes.e3, sa))
            }
            Surface::Torus { center, axes, major, .. } => {
                let l = axes.local(vec3::sub(p, center));
                let phi = l[1].atan2(l[0]);
                let rho = l[0].hypot(l[1]);
                let theta = l[2].atan2(rho - major);
                let radial = axes.at(phi.cos(), phi.sin(), 0.0);
                vec3::add(vec3::scale(radial, theta.cos()), vec3::scale(axes.e3, theta.sin()))
            }
        }
    }

    /// Euclidean distance from `p` to the unbounded surface.
    pub fn distance(&self, p: Vec3) -> f64 {
        match *self {
            Surface::Plane { origin, axes } => vec3::dot(vec3::sub(p, origin), axes.e3).abs(),
            Surface::Sphere { center, radius, .. } => (vec3::dist(p, center) - radius).abs(),
            Surface::Cylinder { center, axes, radius } => {
                let l = axes.local(vec3::sub(p, center));
                (l[0].hypot(l[1]) - radius).abs()
            }
            Surface::Cone { apex, axes, half_angle } => {
                // distance to the cone line in the meridian half-plane
                let l = axes.local(vec3::sub(p, apex));
                let rho = l[0].hypot(l[1]);
                let (sa, ca) = half_angle.sin_cos();
                let along = rho * sa + l[2] * ca;
                if along >= 0.0 {
                    (rho * ca - l[2] * sa).abs()
                } else {
                    rho.hypot(l[2])
                }
            }
            Surface::Torus { center, axes, major, minor } => {
                let l = axes.local(vec3::sub(p, center));
                let rho = l[0].hypot(l[1]);
                ((rho - major).hypot(l[2]) - minor).abs()
            }
        }
    }

    pub fn transformed(&self, rot: &[f64; 9]) -> Surface {
        let r = |v: Vec3| vec3::mat_vec(rot, v);
        let ra = |a: Axes| Axes { e1: r(a.e1), e2: r(a.e2), e3: r(a.e3) };
        match *self {
            Surface::Plane { origin, axes } => Surface::Plane { origin: r(origin), axes: ra(axes) },
            Surface::Sphere { center, axes, radius } => Surface::Sphere { center: r(center), axes: ra(axes), radius },
            Surface::Cylinder { center, axes, radius } => {
                Surface::Cylinder { center: r(center), axes: ra(axes), radius }
            }
            Surface::Cone { apex, axes, half_angle } => Surface::Cone { apex: r(apex), axes: ra(axes), half_angle },
            Surface::Torus { center, axes, major, minor } => {
                Surface::Torus { center: r(center), axes: ra(axes), major, minor }
            }
        }
    }
}

/// Rectangular parameter domain with an optional radial trim in `(u, v)`
/// (used for disks, holes and annuli on planes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub u: (f64, f64),
    pub v: (f64, f64),
    /// Keep only `min <= sqrt(u^2 + v^2) <= max`.
    pub radial: Option<(f64, f64)>,
}

impl Domain {
    pub fn rect(u: (f64, f64), v: (f64, f64)) -> Domain {
        Domain { u, v, radial: None }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        match self.radial {
            None => true,
            Some((lo, hi)) => {
                let r = u.hypot(v);
                r >= lo && r <= hi
            }
        }
    }
}

/// Trimmed surface patch with its part id and normal orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub surface: Surface,
    pub domain: Domain,
    /// Negate the parameterization normal.
    pub flip: bool,
    pub part: i64,
}

impl Primitive {
    pub fn new(surface: Surface, domain: Domain, flip: bool, part: i64) -> Self {
        Primitive { surface, domain, flip, part }
    }

    pub fn kind(&self) -> SurfaceKind {
        self.surface.kind()
    }

    /// Oriented point, normal and area element; `None` outside the trim.
    pub fn eval(&self, u: f64, v: f64) -> Option<(Vec3, Vec3, f64)> {
        if !self.domain.contains(u, v) {
            return None;
        }
        let (p, n, da) = self.surface.eval(u, v);
        Some((p, if self.flip { vec3::scale(n, -1.0) } else { n }, da))
    }

    pub fn normal_near(&self, p: Vec3) -> Vec3 {
        let n = self.surface.normal_near(p);
        if self.flip {
            vec3::scale(n, -1.0)
        } else {
            n
        }
    }

    /// Midpoint-rule area and the largest area element over a grid.
    pub fn area_and_bound(&self) -> (f64, f64) {
        const G: usize = 256;
        let (u0, u1) = self.domain.u;
        let (v0, v1) = self.domain.v;
        let (du, dv) = ((u1 - u0) / G as f64, (v1 - v0) / G as f64);
        let mut area = 0.0;
        let mut bound: f64 = 0.0;
        for i in 0..=G {
            for j in 0..=G {
                let (u, v) = (u0 + i as f64 * du, v0 + j as f64 * dv);
                let (_, _, da) = self.surface.eval(u, v);
                bound = bound.max(da);
                if i < G && j < G {
                    let (um, vm) = (u + 0.5 * du, v + 0.5 * dv);
                    if self.domain.contains(um, vm) {
                        area += self.surface.eval(um, vm).2 * du * dv;
                    }
                }
            }
        }
        (area, bound * 1.0001)
    }
}

/// Constant-speed 3D curve on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    Segment {
        a: Vec3,
        b: Vec3,
    },
    /// Arc from angle `t0` to `t1` (radians) in the `e1, e2` plane.
    Circle {
        center: Vec3,
        axes: Axes,
        radius: f64,
        t0: f64,
        t1: f64,
    },
}

impl Curve {
    pub fn full_circle(center: Vec3, axes: Axes, radius: f64) -> Curve {
        Curve::Circle { center, axes, radius, t0: 0.0, t1: TAU }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Curve::Segment { a, b } => vec3::dist(a, b),
            Curve::Circle { radius, t0, t1, .. } => radius * (t1 - t0).abs(),
        }
    }

    pub fn is_closed(&self) -> bool {
        match *self {
            Curve::Segment { .. } => false,
            Curve::Circle { t0, t1, .. } => ((t1 - t0).abs() - TAU).abs() < 1e-12,
        }
    }

    /// Point at arc-length fraction `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> Vec3 {
        match *self {
            Curve::Segment { a, b } => vec3::add(a, vec3::scale(vec3::sub(b, a), s)),
            Curve::Circle { center, axes, radius, t0, t1 } => {
                let t = t0 + (t1 - t0) * s;
                vec3::add(center, axes.at(radius * t.cos(), radius * t.sin(), 0.0))
            }
        }
    }

    pub fn transformed(&self, rot: &[f64; 9]) -> Curve {
        let r = |v: Vec3| vec3::mat_vec(rot, v);
        match *self {
            Curve::Segment { a, b } => Curve::Segment { a: r(a), b: r(b) },
            Curve::Circle { center, axes, radius, t0, t1 } => Curve::Circle {
                center: r(center),
                axes: Axes { e1: r(axes.e1), e2: r(axes.e2), e3: r(axes.e3) },
                radius,
                t0,
                t1,
            },
        }
    }

    /// Samples with consecutive spacing at most `spacing` along the curve.
    pub fn dense_samples(&self, spacing: f64) -> Vec<Vec3> {
        let len = self.length();
        let segs = ((len / spacing).ceil() as usize).max(1);
        let count = if self.is_closed() { segs } else { segs + 1 };
        (0..count).map(|i| self.at(i as f64 / segs as f64)).collect()
    }
}

/// A curve shared by two primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCurve {
    pub curve: Curve,
    pub between: (usize, usize),
}
