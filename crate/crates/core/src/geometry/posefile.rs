//! Text pose files: one `frame_index tx ty tz qx qy qz qw` line per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for (i, p) in poses.iter().enumerate() {
        let q = p.quaternion();
        let t = p.translation;
        writeln!(
            out,
            "{i} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    out
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let mut entries: Vec<(usize, Pose)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let index: usize = fields[0].parse().map_err(|_| bad("bad frame index"))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad("bad number"))?;
            if !slot.is_finite() {
                return Err(bad("non-finite value"));
            }
        }
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        if (q.norm() - 1.0).abs() > 1e-3 {
            return Err(bad("quaternion is not unit length"));
        }
        let pose = Pose::from_quaternion(
            UnitQuaternion::from_quaternion(q),
            Vector3::new(v[0], v[1], v[2]),
        );
        entries.push((index, pose));
    }
    entries.sort_by_key(|e| e.0);
    for (expect, (index, _)) in entries.iter().enumerate() {
        if *index != expect {
            return Err(Error::format(path, format!("frame indices must be 0..n, found {index}")));
        }
    }
    Ok(entries.into_iter().map(|e| e.1).collect())
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    fs::write(path, format_poses(poses)).map_err(|e| Error::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}
