//! Demo segments for the block command and the waves suite.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use wildmhd::algebra::{k_atom, State};
use wildmhd::wavecone::{lambda_direction, LambdaSegment, WaveDirection};
use wildmhd::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    /// Atoms (e2, e3) and (e4, e3); wave direction e1.
    Aligned,
    /// Two generic atoms; the wave direction has a time component.
    General,
    /// The aligned amplitude paired with the time axis, which must be refused.
    TimeAxis,
}

/// Segment file: z-bar = scale (a1 - a2); xi defaults to the solver's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub u1: Vec<f64>,
    pub b1: Vec<f64>,
    pub u2: Vec<f64>,
    pub b2: Vec<f64>,
    #[serde(default = "half")]
    pub scale: f64,
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
}

fn half() -> f64 {
    0.5
}

pub fn e(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn unit(v: &[f64]) -> DVector<f64> {
    let v = DVector::from_column_slice(v);
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

impl SegmentFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn demo(kind: SegmentKind, n: usize) -> Self {
        match kind {
            SegmentKind::Aligned | SegmentKind::TimeAxis => SegmentFile {
                u1: e(n, 1),
                b1: e(n, 2),
                u2: e(n, 3),
                b2: e(n, 2),
                scale: 0.5,
                xi: (kind == SegmentKind::TimeAxis).then(|| e(n + 1, n)),
            },
            SegmentKind::General => {
                let s = 0.5f64.sqrt();
                // u1 also reaches the coordinates past the fourth, so no
                // spare spatial axis is orthogonal to everything
                let mut u1 = vec![1.0; n];
                u1[2] = 0.0;
                u1[3] = 0.0;
                let mut u2 = vec![0.0; n];
                u2[1] = 0.6;
                u2[3] = 0.8;
                let mut b2 = vec![0.0; n];
                b2[2] = s;
                b2[3] = s;
                SegmentFile { u1, b1: e(n, 2), u2, b2, scale: 0.25, xi: None }
            }
        }
    }

    /// Segment through 0 with unit half-length. Input vectors are normalized.
    pub fn segment(&self) -> Result<LambdaSegment> {
        let n = self.u1.len();
        let [u1, b1, u2, b2] = [&self.u1, &self.b1, &self.u2, &self.b2].map(|v| unit(v));
        let a1 = k_atom(u1.clone(), b1.clone())?;
        let a2 = k_atom(u2.clone(), b2.clone())?;
        let certificate = match &self.xi {
            Some(xi) => {
                if xi.len() != n + 1 {
                    return Err(Error::Config(format!("xi needs {} entries", n + 1)));
                }
                WaveDirection { xi: unit(xi).iter().cloned().collect(), residual: 0.0 }
            }
            None => lambda_direction(&u1, &b1, &u2, &b2)?,
        };
        Ok(LambdaSegment {
            base: State::zeros(n),
            direction: a1.reduced().sub(a2.reduced()).scaled(self.scale),
            half_length: 1.0,
            certificate,
            base_margin: 1.0,
            endpoint_margins: [1.0, 1.0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_segments_have_the_expected_directions() {
        for n in [4, 5] {
            let a = SegmentFile::demo(SegmentKind::Aligned, n).segment().unwrap();
            assert_eq!(a.certificate.xi, e(n + 1, 0));
            let g = SegmentFile::demo(SegmentKind::General, n).segment().unwrap();
            assert!(g.certificate.xi[n].abs() > 1e-3 && g.certificate.residual < 1e-12);
            let t = SegmentFile::demo(SegmentKind::TimeAxis, n).segment().unwrap();
            assert_eq!(t.certificate.xi, e(n + 1, n));
        }
    }

    #[test]
    fn segment_files_parse() {
        let f: SegmentFile =
            serde_json::from_str(r#"{"u1":[0,1,0,0],"b1":[0,0,1,0],"u2":[0,0,0,1],"b2":[0,0,1,0]}"#).unwrap();
        assert_eq!(f.scale, 0.5);
        assert_eq!(f.segment().unwrap(), SegmentFile::demo(SegmentKind::Aligned, 4).segment().unwrap());
        let bad = SegmentFile { xi: Some(vec![1.0; 3]), ..f };
        assert!(matches!(bad.segment(), Err(Error::Config(_))));
    }
}
