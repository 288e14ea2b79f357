use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridSpec, TsdfVolume};

pub const LABEL_BODY: u8 = 0;
pub const LABEL_TOP: u8 = 1;
pub const LABEL_LEG: u8 = 2;
pub const LABEL_HEAD: u8 = 3;
pub const NUM_LABELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    /// Capped cylinder along coordinate axis `axis` (0 = x, 1 = y, 2 = z).
    Cylinder {
        axis: usize,
        center: [f64; 3],
        radius: f64,
        half_height: f64,
    },
}

fn len3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl Primitive {
    /// Exact signed distance, negative inside.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => {
                len3([p[0] - center[0], p[1] - center[1], p[2] - center[2]]) - radius
            }
            Primitive::Box { center, half_extents } => {
                let q: [f64; 3] = std::array::from_fn(|i| (p[i] - center[i]).abs() - half_extents[i]);
                let outside = len3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Primitive::Cylinder {
                axis,
                center,
                radius,
                half_height,
            } => {
                let d: [f64; 3] = std::array::from_fn(|i| p[i] - center[i]);
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let radial = (d[u] * d[u] + d[v] * d[v]).sqrt() - radius;
                let along = d[axis].abs() - half_height;
                let outside = (radial.max(0.0).powi(2) + along.max(0.0).powi(2)).sqrt();
                outside + radial.max(along).min(0.0)
            }
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Primitive::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Primitive::Box { center, half_extents } => (
                std::array::from_fn(|i| center[i] - half_extents[i]),
                std::array::from_fn(|i| center[i] + half_extents[i]),
            ),
            Primitive::Cylinder {
                axis,
                center,
                radius,
                half_height,
            } => {
                let ext: [f64; 3] = std::array::from_fn(|i| if i == axis { half_height } else { radius });
                (
                    std::array::from_fn(|i| center[i] - ext[i]),
                    std::array::from_fn(|i| center[i] + ext[i]),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub primitive: Primitive,
    pub label: u8,
}

/// Union of labelled primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeProgram {
    pub parts: Vec<Part>,
}

impl ShapeProgram {
    pub fn new(parts: Vec<Part>) -> Result<Self> {
        let prog = ShapeProgram { parts };
        prog.validate(&GridSpec::default())?;
        Ok(prog)
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::Empty("shape program has no primitives".into()));
        }
        for (i, part) in self.parts.iter().enumerate() {
            let (lo, hi) = part.primitive.bounds();
            let inside = (0..3).all(|a| hi[a] > spec.origin_min[a] && lo[a] < spec.origin_max[a]);
            if !inside {
                return Err(Error::InvalidVolume(format!(
                    "primitive {i} does not intersect the canonical box"
                )));
            }
            if part.label as usize >= NUM_LABELS {
                return Err(Error::InvalidVolume(format!(
                    "primitive {i} has unknown part label {}",
                    part.label
                )));
            }
        }
        Ok(())
    }

    /// Minimum over primitives; exact outside the union.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        self.parts
            .iter()
            .map(|q| q.primitive.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance and the label of the closest primitive.
    pub fn distance_and_label(&self, p: [f64; 3]) -> (f64, u8) {
        let mut best = (f64::INFINITY, 0);
        for q in &self.parts {
            let d = q.primitive.distance(p);
            if d < best.0 {
                best = (d, q.label);
            }
        }
        best
    }
}

/// Signed distance at voxel centers in voxel units, clamped to the band.
pub fn analytic_tsdf(prog: &ShapeProgram, spec: &GridSpec) -> Result<TsdfVolume> {
    if prog.parts.is_empty() {
        return Err(Error::Empty("shape program has no primitives".into()));
    }
    spec.validate()?;
    let g = spec.edge;
    let voxel = spec.voxel_size(0);
    let t = spec.truncation;
    let mut values = Vec::with_capacity(spec.voxel_count());
    for z in 0..g {
        for y in 0..g {
            for x in 0..g {
                let d = prog.distance(spec.voxel_center(x, y, z)) / voxel;
                values.push(d.clamp(-t, t) as f32);
            }
        }
    }
    TsdfVolume::new(*spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(radius: f64) -> ShapeProgram {
        ShapeProgram::new(vec![Part {
            primitive: Primitive::Sphere {
                center: [0.0; 3],
                radius,
            },
            label: LABEL_BODY,
        }])
        .unwrap()
    }

    #[test]
    fn unit_sphere_center_is_clamped() {
        let spec = GridSpec::default();
        let v = analytic_tsdf(&sphere(1.0), &spec).unwrap();
        assert_eq!(v.get(15, 15, 15), -3.0);
        assert_eq!(v.get(0, 0, 0), -3.0);
        let small = analytic_tsdf(&sphere(0.2), &spec).unwrap();
        assert_eq!(small.get(0, 0, 0), 3.0);
    }

    #[test]
    fn surface_voxel_is_zero() {
        let spec = GridSpec::default();
        let c = spec.voxel_center(20, 15, 15);
        let v = analytic_tsdf(&sphere(c[0].abs().hypot(c[1]).hypot(c[2])), &spec).unwrap();
        assert!(v.get(20, 15, 15).abs() < 1e-5);
    }

    #[test]
    fn primitive_distances() {
        let b = Primitive::Box {
            center: [0.0; 3],
            half_extents: [0.1, 0.2, 0.3],
        };
        assert!((b.distance([0.3, 0.0, 0.0]) - 0.2).abs() < 1e-12);
        assert!((b.distance([0.0; 3]) + 0.1).abs() < 1e-12);
        assert!((b.distance([0.4, 0.6, 0.3]) - 0.5).abs() < 1e-12);
        let c = Primitive::Cylinder {
            axis: 1,
            center: [0.0; 3],
            radius: 0.1,
            half_height: 0.2,
        };
        assert!((c.distance([0.3, 0.0, 0.0]) - 0.2).abs() < 1e-12);
        assert!((c.distance([0.0, 0.5, 0.0]) - 0.3).abs() < 1e-12);
        assert!((c.distance([0.0, 0.0, 0.0]) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn programs_must_touch_the_box() {
        let far = Part {
            primitive: Primitive::Sphere {
                center: [3.0, 0.0, 0.0],
                radius: 0.1,
            },
            label: LABEL_BODY,
        };
        assert!(ShapeProgram::new(vec![far]).is_err());
        assert!(ShapeProgram::new(vec![]).is_err());
    }
}
