//! On-disk dataset layout written by `gen`.
//!
//! ```text
//! <root>/manifest.txt              MAN1 <count>, then `split file template seed epsilon` rows
//! <root>/<split>/<id>.pcb          PCB1 with labels and boundary flags
//! <root>/<split>/<id>.curves       CRV1 ground-truth boundary samples
//! ```
//!
//! Command outputs mirror the relative file paths, so a prediction for
//! `test/0042.pcb` lives at `<pred>/test/0042.pcb`.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use boundaryforge::cloud::{read_pcb, PcbRecord};
use boundaryforge::synthgen::{read_curves, LabeledCloud};
use boundaryforge::textio::{self, Lines};
use boundaryforge::{cloud::vec3::Vec3, Error, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?} (train, val, test)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub split: Split,
    /// Path of the PCB1 file relative to the dataset root.
    pub file: String,
    pub template: String,
    pub seed: u64,
    /// Sampling tolerance of the clean cloud.
    pub epsilon: f64,
}

impl Entry {
    /// File stem, used as the shape name in reports.
    pub fn name(&self) -> String {
        self.file.trim_end_matches(".pcb").to_string()
    }

    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(&self.file)
    }

    /// Sibling of the shape file under `root` with another extension.
    pub fn sibling(&self, root: &Path, ext: &str) -> PathBuf {
        root.join(&self.file).with_extension(ext)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("MAN1 {}\n", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {} {}", e.split, e.file, e.template, e.seed, e.epsilon);
        }
        s
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let head = lines.next_fields()?;
        if head.len() != 2 || head[0] != "MAN1" {
            return Err(lines.error("expected header `MAN1 <count>`"));
        }
        let n = lines.parse_usize(head[1])?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let f = lines.next_fields()?;
            if f.len() != 5 {
                return Err(lines.error(format!("expected 5 fields, found {}", f.len())));
            }
            let split = f[0].parse().map_err(|e: Error| lines.error(e.to_string()))?;
            let seed = f[3].parse().map_err(|_| lines.error(format!("invalid seed {:?}", f[3])))?;
            let epsilon = lines.parse_f64(f[4])?;
            if !(epsilon > 0.0) {
                return Err(lines.error(format!("epsilon must be positive, found {epsilon}")));
            }
            entries.push(Entry { split, file: f[1].to_string(), template: f[2].to_string(), seed, epsilon });
        }
        lines.expect_end()?;
        Ok(Manifest { entries })
    }

    pub fn read(root: &Path) -> Result<Self> {
        let p = root.join(MANIFEST);
        Self::parse(&textio::source_name(&p), &textio::read_file(&p)?)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::write(root.join(MANIFEST), self.to_text())?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&Entry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// A shape's PCB1 record with the labels and boundary flags a dataset file carries.
pub fn load_labeled(root: &Path, e: &Entry) -> Result<LabeledCloud> {
    let path = e.path(root);
    let rec = read_pcb(&path)?;
    let missing = |what: &str| Error::InvalidArgument(format!("{}: no {what} column", path.display()));
    Ok(LabeledCloud {
        labels: rec.labels.ok_or_else(|| missing("label"))?,
        boundary: rec.boundary.ok_or_else(|| missing("boundary"))?,
        cloud: rec.cloud,
        epsilon: e.epsilon,
    })
}

pub fn load_curves(root: &Path, e: &Entry) -> Result<Vec<Vec3>> {
    read_curves(&e.sibling(root, "curves"))
}

/// Boundary probabilities of a predicted shape.
pub fn load_probabilities(root: &Path, e: &Entry) -> Result<(PcbRecord, Vec<f64>)> {
    let path = e.path(root);
    let mut rec = read_pcb(&path)?;
    let p = rec
        .probabilities
        .take()
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no probability column", path.display())))?;
    Ok((rec, p))
}

/// Creates the parent directory of every file of `entries` under `root`.
pub fn create_dirs(root: &Path, entries: &[&Entry]) -> Result<()> {
    std::fs::create_dir_all(root)?;
    for e in entries {
        if let Some(parent) = e.path(root).parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![
                Entry {
                    split: Split::Train,
                    file: "train/0000.pcb".into(),
                    template: "box".into(),
                    seed: 7,
                    epsilon: 0.1 / 3.0,
                },
                Entry {
                    split: Split::Test,
                    file: "test/0001.pcb".into(),
                    template: "mixed".into(),
                    seed: 8,
                    epsilon: 2.5e-2,
                },
            ],
        };
        let back = Manifest::parse("m", &m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.split(Split::Test).len(), 1);
        assert_eq!(m.entries[0].name(), "train/0000");
    }

    #[test]
    fn manifest_errors_carry_lines() {
        let err = Manifest::parse("m", "MAN1 1\nwat train/0.pcb box 1 0.1\n").unwrap_err();
        assert!(err.to_string().starts_with("m:2:"), "{err}");
        assert!(Manifest::parse("m", "MAN1 1\ntrain a b 1 -1\n").is_err());
        assert!(Manifest::parse("m", "MAN1 2\ntrain a b 1 0.1\n").is_err());
    }
}
