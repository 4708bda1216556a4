//! Synthetic labeled point clouds with exact ground-truth boundaries, from
//! analytic primitive assemblies and from labeled triangle meshes.

mod generate;
mod mesh;
mod poisson;
pub mod primitives;
pub mod scene;

pub use generate::{
    boundary_flags_near, compute_epsilon, epsilon_of_points, make_eval_cloud, make_geometric_training_cloud,
    poisson_sample, NoiseProfile,
};
pub use mesh::{mark_semantic_boundaries, read_m1, semantic_mesh, t_junction, write_m1, Mesh};
pub use scene::{PrimitiveScene, Template};

use std::path::Path;

use crate::cloud::vec3::Vec3;
use crate::cloud::{PcbRecord, PointCloud};
use crate::error::{Error, Result};
use crate::textio::{self, Lines};

/// Cloud with per-point part labels, boundary flags and sampling tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<i64>,
    pub boundary: Vec<u8>,
    pub epsilon: f64,
}

impl LabeledCloud {
    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b == 1).count()
    }

    /// Record with labels and boundary flags.
    pub fn to_record(&self) -> PcbRecord {
        PcbRecord {
            cloud: self.cloud.clone(),
            labels: Some(self.labels.clone()),
            boundary: Some(self.boundary.clone()),
            probabilities: None,
        }
    }

    /// Positions of flagged points.
    pub fn boundary_points(&self) -> Vec<Vec3> {
        self.cloud.positions().iter().zip(&self.boundary).filter(|(_, &b)| b == 1).map(|(p, _)| *p).collect()
    }
}

/// `CRV1 <M>` followed by one `x y z` line per curve sample.
pub fn curves_to_text(samples: &[Vec3]) -> String {
    let mut out = format!("CRV1 {}\n", samples.len());
    for p in samples {
        for (k, c) in p.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            textio::write_sig(&mut out, *c, 9);
        }
        out.push('\n');
    }
    out
}

pub fn parse_curves(source: &str, text: &str) -> Result<Vec<Vec3>> {
    let mut lines = Lines::new(source, text);
    let header = lines.next_fields()?;
    if header.len() != 2 || header[0] != "CRV1" {
        return Err(lines.error("expected header `CRV1 <M>`"));
    }
    let m = lines.parse_usize(header[1])?;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let f = lines.next_fields()?;
        if f.len() != 3 {
            return Err(lines.error(format!("expected 3 columns, found {}", f.len())));
        }
        out.push([lines.parse_f64(f[0])?, lines.parse_f64(f[1])?, lines.parse_f64(f[2])?]);
    }
    lines.expect_end()?;
    Ok(out)
}

pub fn write_curves(path: &Path, samples: &[Vec3]) -> Result<()> {
    std::fs::write(path, curves_to_text(samples)).map_err(Error::from)
}

pub fn read_curves(path: &Path) -> Result<Vec<Vec3>> {
    parse_curves(&textio::source_name(path), &textio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip() {
        let pts = vec![[0.1, -0.2, 0.3], [1.0 / 3.0, 0.0, -1e-5]];
        let text = curves_to_text(&pts);
        let back = parse_curves("x", &text).unwrap();
        assert_eq!(curves_to_text(&back), text);
        for (a, b) in pts.iter().zip(&back) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-9 * a[k].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn malformed_curves_rejected() {
        assert!(parse_curves("x", "CRV1 2\n0 0 0\n").is_err());
        assert!(parse_curves("x", "CRV1 1\n0 0\n").is_err());
        assert!(parse_curves("x", "CRV1 1\n0 nan 0\n").is_err());
        let err = parse_curves("f.curves", "CRV1 1\n0 0 x\n").unwrap_err().to_string();
        assert!(err.starts_with("f.curves:2:"), "{err}");
    }
}
