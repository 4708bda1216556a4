use crate::cloud::vec3::Vec3;
use crate::error::{Error, Result};
use crate::metrics::{binarize, chamfer};
use crate::textio::Lines;

/// Boundary decision threshold: a point is boundary when `b >= value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub value: f64,
    /// Metric the value was selected by.
    pub metric: String,
}

impl Threshold {
    pub fn new(value: f64, metric: &str) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("threshold {value} outside [0, 1]")));
        }
        if metric.is_empty() || metric.contains(char::is_whitespace) {
            return Err(Error::invalid("metric tag must be a single word"));
        }
        Ok(Threshold { value, metric: metric.to_string() })
    }

    /// One line: `<value> <metric>`.
    pub fn to_text(&self) -> String {
        format!("{} {}\n", self.value, self.metric)
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let f = lines.next_fields()?;
        if f.len() != 2 {
            return Err(lines.error("expected `<threshold> <metric>`"));
        }
        let v = lines.parse_f64(f[0])?;
        let t = Threshold::new(v, f[1]).map_err(|e| lines.error(e.to_string()))?;
        lines.expect_end()?;
        Ok(t)
    }
}

/// Grid-search result.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: Threshold,
    /// `(tau, mean Chamfer distance)` for every candidate, ascending in tau.
    pub candidates: Vec<(f64, f64)>,
}

/// Picks the threshold in `{0, step, ..., 1}` minimizing the mean Chamfer
/// distance between thresholded predictions and curve samples, ties to the
/// smaller value. Each shape is `(positions, probabilities, curve samples)`.
pub fn calibrate_threshold(shapes: &[(&[Vec3], &[f64], &[Vec3])], step: f64) -> Result<Calibration> {
    if shapes.is_empty() {
        return Err(Error::invalid("calibration needs at least one validation shape"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step must lie in (0, 1], got {step}")));
    }
    let count = (1.0 / step).round();
    if (count * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    let count = count as usize;
    for (i, (p, b, _)) in shapes.iter().enumerate() {
        if p.len() != b.len() {
            return Err(Error::invalid(format!("validation shape {i}: {} points, {} probabilities", p.len(), b.len())));
        }
    }
    let mut candidates = Vec::with_capacity(count + 1);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=count {
        let tau = i as f64 / count as f64;
        let cd = shapes.iter().map(|(p, b, c)| chamfer(&binarize(p, b, tau), c)).sum::<f64>() / shapes.len() as f64;
        if cd < best.0 {
            best = (cd, tau);
        }
        candidates.push((tau, cd));
    }
    Ok(Calibration { threshold: Threshold::new(best.1, "chamfer")?, candidates })
}
