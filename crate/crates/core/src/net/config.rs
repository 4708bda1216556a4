use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::textio::{join_list, KeyValues};

/// Transformation used by the first graph layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FirstLayer {
    /// Edge input `(x_i, x_j - x_i)`.
    EdgeConv,
    /// Edge input `(x_i, R_i^T (x_j - x_i))` with a random tangent frame.
    LocalEdgeConv,
    /// As `LocalEdgeConv` with principal-direction frames, max-pooled over
    /// both tangent sign choices.
    LocalEdgeConvCurv,
}

impl FirstLayer {
    pub const ALL: [FirstLayer; 3] = [FirstLayer::EdgeConv, FirstLayer::LocalEdgeConv, FirstLayer::LocalEdgeConvCurv];

    pub fn name(self) -> &'static str {
        match self {
            FirstLayer::EdgeConv => "edgeconv",
            FirstLayer::LocalEdgeConv => "local_edgeconv",
            FirstLayer::LocalEdgeConvCurv => "local_edgeconv_curv",
        }
    }

    /// Frame sign choices evaluated per point.
    pub fn frame_count(self) -> usize {
        match self {
            FirstLayer::EdgeConv | FirstLayer::LocalEdgeConv => 1,
            FirstLayer::LocalEdgeConvCurv => 2,
        }
    }
}

impl fmt::Display for FirstLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FirstLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FirstLayer::ALL.iter().copied().find(|l| l.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown first layer {s:?} (expected edgeconv, local_edgeconv or local_edgeconv_curv)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Neighbors per point in every graph layer.
    pub k: usize,
    pub first_layer: FirstLayer,
    pub use_normals: bool,
    pub first_widths: Vec<usize>,
    pub ec2_widths: Vec<usize>,
    pub ec3_widths: Vec<usize>,
    pub global_width: usize,
    /// Hidden head widths; the output layer (1 or `n_labels` wide) follows.
    pub head_widths: Vec<usize>,
    pub spatial_transform: bool,
    /// Neighborhood size of the curvature fit.
    pub curvature_k: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k: 20,
            first_layer: FirstLayer::LocalEdgeConv,
            use_normals: true,
            first_widths: vec![64, 64],
            ec2_widths: vec![64],
            ec3_widths: vec![64],
            global_width: 256,
            head_widths: vec![256, 128, 64],
            spatial_transform: false,
            curvature_k: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        for (name, w) in [
            ("first_widths", &self.first_widths),
            ("ec2_widths", &self.ec2_widths),
            ("ec3_widths", &self.ec3_widths),
            ("head_widths", &self.head_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::invalid(format!("{name} must be a nonempty list of positive widths")));
            }
        }
        if self.global_width == 0 {
            return Err(Error::invalid("global_width must be positive"));
        }
        if self.first_layer == FirstLayer::LocalEdgeConvCurv && self.curvature_k < 6 {
            return Err(Error::invalid("curvature_k must be at least 6"));
        }
        Ok(())
    }

    /// Columns per point fed to the first layer.
    pub fn input_dim(&self) -> usize {
        if self.use_normals {
            6
        } else {
            3
        }
    }

    /// Width of the concatenated per-point descriptor.
    pub fn point_dim(&self) -> usize {
        self.first_widths.last().unwrap() + self.ec2_widths.last().unwrap() + self.ec3_widths.last().unwrap()
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k", self.k.to_string()),
            ("first_layer", self.first_layer.to_string()),
            ("use_normals", self.use_normals.to_string()),
            ("first_widths", join_list(&self.first_widths)),
            ("ec2_widths", join_list(&self.ec2_widths)),
            ("ec3_widths", join_list(&self.ec3_widths)),
            ("global_width", self.global_width.to_string()),
            ("head_widths", join_list(&self.head_widths)),
            ("spatial_transform", self.spatial_transform.to_string()),
            ("curvature_k", self.curvature_k.to_string()),
        ]
    }

    /// Consumes the network keys present in `kv`, defaulting the rest.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = NetConfig::default();
        let c = NetConfig {
            k: kv.take("k")?.unwrap_or(d.k),
            first_layer: kv.take("first_layer")?.unwrap_or(d.first_layer),
            use_normals: kv.take("use_normals")?.unwrap_or(d.use_normals),
            first_widths: kv.take_list("first_widths")?.unwrap_or(d.first_widths),
            ec2_widths: kv.take_list("ec2_widths")?.unwrap_or(d.ec2_widths),
            ec3_widths: kv.take_list("ec3_widths")?.unwrap_or(d.ec3_widths),
            global_width: kv.take("global_width")?.unwrap_or(d.global_width),
            head_widths: kv.take_list("head_widths")?.unwrap_or(d.head_widths),
            spatial_transform: kv.take("spatial_transform")?.unwrap_or(d.spatial_transform),
            curvature_k: kv.take("curvature_k")?.unwrap_or(d.curvature_k),
        };
        c.validate()?;
        Ok(c)
    }
}
