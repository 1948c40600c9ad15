//! Per-superpixel class confidence fields and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::SuperpixelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivation {
    Pooled,
    Adapted,
}

/// One confidence value per superpixel (global node order) for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceField {
    pub class: String,
    pub values: Vec<f64>,
    pub derivation: Derivation,
}

pub const CSV_HEADER: &str = "frame,superpixel_id,class,value";

impl ConfidenceField {
    pub fn to_csv(&self, sp: &SuperpixelMap) -> String {
        let mut out = String::with_capacity(32 * self.values.len());
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (node, v) in self.values.iter().enumerate() {
            let (frame, label) = sp.locate(node);
            // `{}` on f64 prints the shortest string that parses back exactly
            writeln!(out, "{frame},{label},{},{v}", self.class).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path, sp: &SuperpixelMap) -> Result<()> {
        fs::write(path, self.to_csv(sp)).map_err(|e| Error::io(path, e))
    }

    /// Parses a confidence CSV for `class`; rows for other classes are
    /// skipped. Every superpixel of `sp` must be covered exactly once.
    pub fn from_csv(
        text: &str,
        class: &str,
        sp: &SuperpixelMap,
        derivation: Derivation,
        path: &Path,
    ) -> Result<Self> {
        let mut values = vec![f64::NAN; sp.num_nodes()];
        let mut seen = vec![false; sp.num_nodes()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line == CSV_HEADER) {
                continue;
            }
            let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", lineno + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            if cols[2] != class {
                continue;
            }
            let frame: usize = cols[0].parse().map_err(|_| bad("bad frame"))?;
            let label: u32 = cols[1].parse().map_err(|_| bad("bad superpixel id"))?;
            let value: f64 = cols[3].parse().map_err(|_| bad("bad value"))?;
            if frame >= sp.frame_count() || label as usize >= sp.count(frame) {
                return Err(bad("superpixel out of range"));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ConfidenceOutOfRange(value));
            }
            let node = sp.node(frame, label);
            if std::mem::replace(&mut seen[node], true) {
                return Err(bad("duplicate superpixel"));
            }
            values[node] = value;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let (f, l) = sp.locate(missing);
            return Err(Error::format(
                path,
                format!("no value for class {class} at frame {f}, superpixel {l}"),
            ));
        }
        Ok(Self {
            class: class.to_string(),
            values,
            derivation,
        })
    }

    pub fn read_csv(
        path: &Path,
        class: &str,
        sp: &SuperpixelMap,
        derivation: Derivation,
    ) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, class, sp, derivation, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(vals in proptest::collection::vec(0.0f64..=1.0, 6)) {
            let sp = SuperpixelMap::from_raw(3, 1, vec![vec![0, 1, 2], vec![0, 1, 2]]).unwrap();
            let f = ConfidenceField { class: "cat".into(), values: vals, derivation: Derivation::Pooled };
            let text = f.to_csv(&sp);
            let back = ConfidenceField::from_csv(&text, "cat", &sp, Derivation::Pooled, Path::new("x")).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(back.to_csv(&sp), text);
        }
    }

    #[test]
    fn missing_row_is_an_error() {
        let sp = SuperpixelMap::from_raw(2, 1, vec![vec![0, 1]]).unwrap();
        let text = "frame,superpixel_id,class,value\n0,0,cat,0.5\n";
        assert!(
            ConfidenceField::from_csv(text, "cat", &sp, Derivation::Pooled, Path::new("x"))
                .is_err()
        );
    }

    #[test]
    fn other_classes_skipped() {
        let sp = SuperpixelMap::from_raw(1, 1, vec![vec![0]]).unwrap();
        let text = "frame,superpixel_id,class,value\n0,0,dog,0.1\n0,0,cat,0.25\n";
        let f = ConfidenceField::from_csv(text, "cat", &sp, Derivation::Adapted, Path::new("x"))
            .unwrap();
        assert_eq!(f.values, vec![0.25]);
    }
}
