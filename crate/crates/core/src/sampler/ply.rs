//! ASCII PLY import/export for point sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::SurfacePointSet;
use crate::error::{Error, Result};
use crate::Vec3;

pub fn write_ply(path: &Path, set: &SurfacePointSet) -> Result<()> {
    fs::write(path, to_ply_string(set))?;
    Ok(())
}

pub(crate) fn to_ply_string(set: &SurfacePointSet) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment source {}", set.source);
    let _ = writeln!(out, "element vertex {}", set.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if set.normals.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in set.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &set.normals {
            let _ = write!(out, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        out.push('\n');
    }
    out
}

pub fn read_ply(path: &Path) -> Result<SurfacePointSet> {
    parse_ply(&fs::read_to_string(path)?)
}

pub(crate) fn parse_ply(text: &str) -> Result<SurfacePointSet> {
    let bad = |msg: &str| Error::Parse(format!("ply: {msg}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let mut source = String::new();
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("unterminated header"))?.trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii is supported")),
            ["comment", "source", rest @ ..] => source = rest.join(" "),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?)
            }
            ["element", other, ..] => return Err(bad(&format!("unsupported element {other}"))),
            ["property", _, name] => props.push(name.to_string()),
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let col = |n: &str| props.iter().position(|p| p == n);
    let xyz = [col("x"), col("y"), col("z")];
    let nrm = [col("nx"), col("ny"), col("nz")];
    if xyz.iter().any(Option::is_none) {
        return Err(bad("missing x/y/z properties"));
    }
    let has_normals = nrm.iter().all(Option::is_some);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("too few vertices"))?;
        let vals = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < props.len() {
            return Err(bad("short vertex line"));
        }
        let pick = |idx: [Option<usize>; 3]| Vec3::new(vals[idx[0].unwrap()], vals[idx[1].unwrap()], vals[idx[2].unwrap()]);
        points.push(pick(xyz));
        if has_normals {
            normals.push(pick(nrm));
        }
    }
    Ok(SurfacePointSet {
        points,
        source,
        normals: has_normals.then_some(normals),
    })
}
