//! PCB1 text format.
//!
//! ```text
//! PCB1 <N> [flags]        flags drawn from L (labels), B (boundary), P (probability)
//! x y z nx ny nz [label] [t] [b]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::textio::{self, write_sig, Lines};
use crate::{Error, Result};

/// A cloud with the optional per-point columns of a PCB1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct PcbRecord {
    pub cloud: PointCloud,
    pub labels: Option<Vec<i64>>,
    pub boundary: Option<Vec<u8>>,
    pub probabilities: Option<Vec<f64>>,
}

impl PcbRecord {
    pub fn new(cloud: PointCloud) -> Self {
        PcbRecord { cloud, labels: None, boundary: None, probabilities: None }
    }

    pub fn flags(&self) -> String {
        let mut f = String::new();
        if self.labels.is_some() {
            f.push('L');
        }
        if self.boundary.is_some() {
            f.push('B');
        }
        if self.probabilities.is_some() {
            f.push('P');
        }
        f
    }

    pub fn to_text(&self) -> Result<String> {
        let n = self.cloud.len();
        for (name, len) in [
            ("labels", self.labels.as_ref().map(Vec::len)),
            ("boundary", self.boundary.as_ref().map(Vec::len)),
            ("probabilities", self.probabilities.as_ref().map(Vec::len)),
        ] {
            if let Some(l) = len {
                if l != n {
                    return Err(Error::invalid(format!("{name} column has {l} entries for {n} points")));
                }
            }
        }
        let mut s = String::with_capacity(n * 120);
        let flags = self.flags();
        if flags.is_empty() {
            let _ = writeln!(s, "PCB1 {n}");
        } else {
            let _ = writeln!(s, "PCB1 {n} {flags}");
        }
        for i in 0..n {
            let p = self.cloud.positions()[i];
            let q = self.cloud.normals()[i];
            for (c, v) in p.iter().chain(q.iter()).enumerate() {
                if c > 0 {
                    s.push(' ');
                }
                write_sig(&mut s, *v, 9);
            }
            if let Some(l) = &self.labels {
                let _ = write!(s, " {}", l[i]);
            }
            if let Some(b) = &self.boundary {
                let _ = write!(s, " {}", b[i]);
            }
            if let Some(pr) = &self.probabilities {
                s.push(' ');
                write_sig(&mut s, pr[i], 9);
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let head = lines.next_fields()?;
        if head.first() != Some(&"PCB1") || !(2..=3).contains(&head.len()) {
            return Err(lines.error("expected header `PCB1 <N> [flags]`"));
        }
        let n = lines.parse_usize(head[1])?;
        let flags = head.get(2).copied().unwrap_or("");
        let flags = if flags == "-" { "" } else { flags };
        if let Some(bad) = flags.chars().find(|c| !"LBP".contains(*c)) {
            return Err(lines.error(format!("unknown flag {bad:?}")));
        }
        let (has_l, has_b, has_p) = (flags.contains('L'), flags.contains('B'), flags.contains('P'));
        let cols = 6 + has_l as usize + has_b as usize + has_p as usize;
        let mut pos = Vec::with_capacity(n);
        let mut nor = Vec::with_capacity(n);
        let mut labels = has_l.then(|| Vec::with_capacity(n));
        let mut boundary = has_b.then(|| Vec::with_capacity(n));
        let mut probs = has_p.then(|| Vec::with_capacity(n));
        for _ in 0..n {
            let f = lines.next_fields()?;
            if f.len() != cols {
                return Err(lines.error(format!("expected {cols} columns, found {}", f.len())));
            }
            let mut v = [0.0; 6];
            for (c, slot) in v.iter_mut().enumerate() {
                *slot = lines.parse_f64(f[c])?;
            }
            pos.push([v[0], v[1], v[2]]);
            nor.push([v[3], v[4], v[5]]);
            let mut c = 6;
            if let Some(l) = labels.as_mut() {
                l.push(lines.parse_i64(f[c])?);
                c += 1;
            }
            if let Some(b) = boundary.as_mut() {
                match f[c] {
                    "0" => b.push(0u8),
                    "1" => b.push(1u8),
                    other => return Err(lines.error(format!("boundary flag must be 0 or 1, found {other:?}"))),
                }
                c += 1;
            }
            if let Some(p) = probs.as_mut() {
                let v = lines.parse_f64(f[c])?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(lines.error(format!("probability {v} outside [0, 1]")));
                }
                p.push(v);
            }
        }
        lines.expect_end()?;
        let cloud = PointCloud::new(pos, nor).map_err(|e| lines.error(e.to_string()))?;
        Ok(PcbRecord { cloud, labels, boundary, probabilities: probs })
    }
}

pub fn write_pcb(path: &Path, rec: &PcbRecord) -> Result<()> {
    std::fs::write(path, rec.to_text()?)?;
    Ok(())
}

pub fn read_pcb(path: &Path) -> Result<PcbRecord> {
    PcbRecord::parse(&textio::source_name(path), &textio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_columns() {
        let cloud =
            PointCloud::new(vec![[0.1, -2.5e-7, 3.0], [1.0 / 3.0, 0.0, -1.0]], vec![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]])
                .unwrap();
        let rec = PcbRecord {
            cloud,
            labels: Some(vec![3, -1]),
            boundary: Some(vec![1, 0]),
            probabilities: Some(vec![0.25, 0.987654321]),
        };
        let text = rec.to_text().unwrap();
        assert!(text.starts_with("PCB1 2 LBP\n"));
        let back = PcbRecord::parse("mem", &text).unwrap();
        assert_eq!(back.labels, rec.labels);
        assert_eq!(back.boundary, rec.boundary);
        for (a, b) in back.cloud.positions().iter().flatten().zip(rec.cloud.positions().iter().flatten()) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-30));
        }
        // a second pass is byte-identical
        assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn rejects_nan_and_bad_rows() {
        assert!(PcbRecord::parse("m", "PCB1 1\nnan 0 0 0 0 1\n").is_err());
        assert!(PcbRecord::parse("m", "PCB1 1\ninf 0 0 0 0 1\n").is_err());
        let e = PcbRecord::parse("m", "PCB1 2 B\n0 0 0 0 0 1 1\n0 0 0 0 0 1\n").unwrap_err();
        assert!(e.to_string().contains("m:3"), "{e}");
        assert!(PcbRecord::parse("m", "PCB1 1 X\n0 0 0 0 0 1\n").is_err());
        assert!(PcbRecord::parse("m", "PCB1 1 P\n0 0 0 0 0 1 1.5\n").is_err());
    }
}
