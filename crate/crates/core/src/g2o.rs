//! g2o pose-graph and TUM trajectory file formats.
//!
//! Information matrices are reduced to scalar precisions by
//! `τ = d / tr(Σ_t)` and `κ = (d(d−1)/2) / tr(Σ_R)`, where `Σ_t` and `Σ_R`
//! are the inverses of the translational and rotational information blocks.
//! Written files carry `τ I` and `κ I` blocks, which reduce back exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::graph::{MeasurementGraph, PoseEstimate, PoseMeasurement};

/// A parsed g2o file: the measurement graph plus any vertex estimates,
/// keyed by original id.
#[derive(Clone, Debug)]
pub struct G2oFile {
    pub graph: MeasurementGraph,
    pub vertices: BTreeMap<i64, Pose>,
}

impl G2oFile {
    /// Vertex estimates in internal node order, if every node has one.
    pub fn initial_estimate(&self) -> Option<PoseEstimate> {
        let ids = self.graph.original_ids();
        let mut rots = Vec::with_capacity(ids.len());
        let mut trans = Vec::with_capacity(ids.len());
        for id in ids {
            let (r, t) = self.vertices.get(id)?;
            rots.push(r.clone());
            trans.push(t.clone());
        }
        PoseEstimate::new(rots, trans).ok()
    }
}

struct RawEdge {
    tail: i64,
    head: i64,
    t: DVector<f64>,
    rot: Rotation,
    tau: f64,
    kappa: f64,
    line: usize,
}

fn numbers(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("expected a number, found {s:?}"),
            })
        })
        .collect()
}

fn id(token: &str, line: usize) -> Result<i64> {
    token.parse::<i64>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected an integer vertex id, found {token:?}"),
    })
}

/// Symmetric matrix from its upper triangle in row-major order.
fn upper_triangular(k: usize, entries: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in i..k {
            m[(i, j)] = entries[idx];
            m[(j, i)] = entries[idx];
            idx += 1;
        }
    }
    m
}

/// Scalar precisions `(τ, κ)` from a full information matrix whose first `d`
/// coordinates are translational.
pub fn reduce_information(info: &DMatrix<f64>, d: usize) -> Option<(f64, f64)> {
    info.clone().cholesky()?;
    let k = info.nrows();
    let inv_tt = info.view((0, 0), (d, d)).into_owned().try_inverse()?;
    let inv_rr = info.view((d, d), (k - d, k - d)).into_owned().try_inverse()?;
    let tau = d as f64 / inv_tt.trace();
    let kappa = (k - d) as f64 / inv_rr.trace();
    (tau.is_finite() && kappa.is_finite() && tau > 0.0 && kappa > 0.0).then_some((tau, kappa))
}

fn expect_len(tokens: &[&str], n: usize, tag: &str, line: usize) -> Result<()> {
    if tokens.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!("{tag} expects {} fields, found {}", n - 1, tokens.len() - 1),
        });
    }
    Ok(())
}

fn set_dim(dim: &mut Option<usize>, d: usize) -> Result<()> {
    match *dim {
        Some(prev) if prev != d => Err(Error::MixedDimensions { first: prev, second: d }),
        _ => {
            *dim = Some(d);
            Ok(())
        }
    }
}

fn parse_edge(tokens: &[&str], d: usize, line: usize) -> Result<RawEdge> {
    let (tag, info_len, info_dim) = if d == 3 { ("EDGE_SE3:QUAT", 21, 6) } else { ("EDGE_SE2", 6, 3) };
    let pose_len = if d == 3 { 7 } else { 3 };
    expect_len(tokens, 3 + pose_len + info_len, tag, line)?;
    let tail = id(tokens[1], line)?;
    let head = id(tokens[2], line)?;
    let vals = numbers(&tokens[3..], line)?;
    let (t, rot) = if d == 3 {
        let (r, warned) = Rotation::from_quaternion(vals[3], vals[4], vals[5], vals[6])
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if warned {
            warn!("line {line}: quaternion renormalized");
        }
        (DVector::from_row_slice(&vals[0..3]), r)
    } else {
        (DVector::from_row_slice(&vals[0..2]), Rotation::from_angle(vals[2]))
    };
    let info = upper_triangular(info_dim, &vals[pose_len..]);
    let (tau, kappa) = reduce_information(&info, d).ok_or_else(|| Error::Parse {
        line,
        msg: "information matrix is not positive definite".into(),
    })?;
    Ok(RawEdge { tail, head, t, rot, tau, kappa, line })
}

/// A single pose `(R, t)`.
pub type Pose = (Rotation, DVector<f64>);

/// Parses a `VERTEX_SE3:QUAT` or `VERTEX_SE2` record.
fn parse_vertex(tokens: &[&str], line: usize) -> Result<(i64, Pose)> {
    let planar = tokens[0] == "VERTEX_SE2";
    expect_len(tokens, if planar { 5 } else { 9 }, tokens[0], line)?;
    let key = id(tokens[1], line)?;
    let v = numbers(&tokens[2..], line)?;
    if planar {
        return Ok((key, (Rotation::from_angle(v[2]), DVector::from_row_slice(&v[0..2]))));
    }
    let (r, warned) =
        Rotation::from_quaternion(v[3], v[4], v[5], v[6]).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    if warned {
        warn!("line {line}: quaternion renormalized");
    }
    Ok((key, (r, DVector::from_row_slice(&v[0..3]))))
}

/// Parses a g2o stream. Vertex ids are re-indexed contiguously in ascending
/// order of their original values. Unsupported record types are skipped.
pub fn parse_g2o<R: BufRead>(reader: R) -> Result<G2oFile> {
    let mut dim = None;
    let mut edges = Vec::new();
    let mut vertices = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some(&tag) = tokens.first() else { continue };
        match tag {
            "EDGE_SE3:QUAT" => {
                set_dim(&mut dim, 3)?;
                edges.push(parse_edge(&tokens, 3, lineno)?);
            }
            "EDGE_SE2" => {
                set_dim(&mut dim, 2)?;
                edges.push(parse_edge(&tokens, 2, lineno)?);
            }
            "VERTEX_SE3:QUAT" | "VERTEX_SE2" => {
                set_dim(&mut dim, if tag == "VERTEX_SE2" { 2 } else { 3 })?;
                let (key, pose) = parse_vertex(&tokens, lineno)?;
                vertices.insert(key, pose);
            }
            t if t.starts_with('#') => {}
            other => {
                if skipped.insert(other.to_string()) {
                    warn!("line {lineno}: skipping unsupported record type {other}");
                }
            }
        }
    }
    let d = dim.ok_or(Error::Parse { line: 0, msg: "no pose records found".into() })?;
    if edges.is_empty() && vertices.len() != 1 {
        return Err(Error::Parse { line: 0, msg: "no edge records found".into() });
    }

    let mut ids: BTreeSet<i64> = vertices.keys().copied().collect();
    for e in &edges {
        ids.insert(e.tail);
        ids.insert(e.head);
    }
    let ids: Vec<i64> = ids.into_iter().collect();
    let index: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let measurements = edges
        .into_iter()
        .map(|e| {
            PoseMeasurement::new(index[&e.tail], index[&e.head], e.t, e.rot, e.tau, e.kappa)
                .map_err(|err| Error::Parse { line: e.line, msg: err.to_string() })
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = MeasurementGraph::with_ids(d, measurements, ids)?;
    Ok(G2oFile { graph, vertices })
}

pub fn read_g2o(path: &Path) -> Result<G2oFile> {
    parse_g2o(BufReader::new(File::open(path)?))
}

fn write_vertex<W: Write>(w: &mut W, id: i64, r: &Rotation, t: &DVector<f64>) -> std::io::Result<()> {
    if r.dim() == 3 {
        let q = r.to_quaternion();
        writeln!(
            w,
            "VERTEX_SE3:QUAT {id} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
            t[0], t[1], t[2], q[0], q[1], q[2], q[3]
        )
    } else {
        writeln!(w, "VERTEX_SE2 {id} {:e} {:e} {:e}", t[0], t[1], r.angle_2d())
    }
}

/// Writes the graph's measurements (with original ids) and, optionally, one
/// vertex per pose.
pub fn write_g2o<W: Write>(w: W, g: &MeasurementGraph, vertices: Option<&PoseEstimate>) -> Result<()> {
    let mut w = BufWriter::new(w);
    if let Some(est) = vertices {
        write_trajectory_g2o(&mut w, est, g.original_ids())?;
    }
    for e in g.edges() {
        let (a, b) = (g.original_id(e.tail), g.original_id(e.head));
        if g.dim() == 3 {
            let q = e.rot.to_quaternion();
            write!(
                w,
                "EDGE_SE3:QUAT {a} {b} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
                e.t[0], e.t[1], e.t[2], q[0], q[1], q[2], q[3]
            )?;
            let diag = [e.tau, e.tau, e.tau, e.kappa, e.kappa, e.kappa];
            for i in 0..6 {
                for j in i..6 {
                    write!(w, " {:e}", if i == j { diag[i] } else { 0.0 })?;
                }
            }
            writeln!(w)?;
        } else {
            writeln!(
                w,
                "EDGE_SE2 {a} {b} {:e} {:e} {:e} {:e} 0 0 {:e} 0 {:e}",
                e.t[0],
                e.t[1],
                e.rot.angle_2d(),
                e.tau,
                e.tau,
                e.kappa
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a trajectory as g2o vertex records.
pub fn write_trajectory_g2o<W: Write>(mut w: W, est: &PoseEstimate, ids: &[i64]) -> Result<()> {
    for ((r, t), id) in est.rotations.iter().zip(&est.translations).zip(ids) {
        write_vertex(&mut w, *id, r, t)?;
    }
    Ok(())
}

/// Writes a trajectory in TUM format, `id tx ty tz qx qy qz qw`; planar poses
/// use `tz = 0` and a rotation about z.
pub fn write_tum<W: Write>(w: W, est: &PoseEstimate, ids: &[i64]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for ((r, t), id) in est.rotations.iter().zip(&est.translations).zip(ids) {
        let q = r.to_quaternion();
        let tz = if t.len() == 3 { t[2] } else { 0.0 };
        writeln!(w, "{id} {:e} {:e} {:e} {:e} {:e} {:e} {:e}", t[0], t[1], tz, q[0], q[1], q[2], q[3])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TUM trajectory as `d`-dimensional poses keyed by id. For d = 2 the
/// z coordinate is dropped and the rotation is projected to the plane.
pub fn read_tum<R: BufRead>(reader: R, d: usize) -> Result<BTreeMap<i64, Pose>> {
    let mut out = BTreeMap::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || tokens[0].starts_with('#') {
            continue;
        }
        if tokens.len() != 8 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 8 fields, found {}", tokens.len()) });
        }
        let key = id(tokens[0], lineno)?;
        let v = numbers(&tokens[1..], lineno)?;
        let (r3, warned) = Rotation::from_quaternion(v[3], v[4], v[5], v[6])
            .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        if warned {
            warn!("line {lineno}: quaternion renormalized");
        }
        let pose = if d == 3 {
            (r3, DVector::from_row_slice(&v[0..3]))
        } else {
            let m = r3.matrix();
            (Rotation::from_angle(m[(1, 0)].atan2(m[(0, 0)])), DVector::from_row_slice(&v[0..2]))
        };
        out.insert(key, pose);
    }
    Ok(out)
}

/// Reads a trajectory from a `.tum`/`.txt` or `.g2o` file (chosen by
/// extension) and orders it by the graph's nodes.
pub fn read_trajectory(path: &Path, g: &MeasurementGraph) -> Result<PoseEstimate> {
    let is_g2o = path.extension().is_some_and(|e| e == "g2o");
    let poses = if is_g2o {
        let mut out = BTreeMap::new();
        let reader = BufReader::new(File::open(path)?);
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.first() {
                Some(&"VERTEX_SE3:QUAT") | Some(&"VERTEX_SE2") => {}
                _ => continue,
            }
            let (key, pose) = parse_vertex(&tokens, k + 1)?;
            out.insert(key, pose);
        }
        out
    } else {
        read_tum(BufReader::new(File::open(path)?), g.dim())?
    };
    let mut rots = Vec::with_capacity(g.num_poses());
    let mut trans = Vec::with_capacity(g.num_poses());
    for &id in g.original_ids() {
        let (r, t) = poses.get(&id).ok_or_else(|| Error::InvalidMeasurement(format!("trajectory has no pose for vertex {id}")))?;
        if r.dim() != g.dim() {
            return Err(Error::MixedDimensions { first: g.dim(), second: r.dim() });
        }
        rots.push(r.clone());
        trans.push(t.clone());
    }
    PoseEstimate::new(rots, trans)
}

/// Writes a trajectory in g2o vertex form or TUM form, chosen by extension.
pub fn write_trajectory(path: &Path, est: &PoseEstimate, ids: &[i64]) -> Result<()> {
    let f = File::create(path)?;
    if path.extension().is_some_and(|e| e == "g2o") {
        let mut w = BufWriter::new(f);
        write_trajectory_g2o(&mut w, est, ids)?;
        w.flush()?;
        Ok(())
    } else {
        write_tum(f, est, ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY_SE3: &str = "EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1 \
        1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";

    #[test]
    fn identity_edge() {
        let f = parse_g2o(IDENTITY_SE3.as_bytes()).unwrap();
        let g = &f.graph;
        assert_eq!((g.num_poses(), g.num_measurements(), g.dim()), (2, 1, 3));
        assert_eq!(g.edges()[0].tau, 1.0);
        assert_eq!(g.edges()[0].kappa, 1.0);
    }

    #[test]
    fn planar_kappa_is_the_angular_information() {
        let text = "EDGE_SE2 4 7 1 2 0.5 10 0 0 10 0 25\n";
        let g = parse_g2o(text.as_bytes()).unwrap().graph;
        let e = &g.edges()[0];
        assert!((e.tau - 10.0).abs() < 1e-12);
        assert!((e.kappa - 25.0).abs() < 1e-12);
        assert_eq!(g.original_ids(), &[4, 7]);
    }

    #[test]
    fn anisotropic_reduction() {
        let info = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 4.0, 9.0, 9.0, 9.0]));
        let (tau, kappa) = reduce_information(&info, 3).unwrap();
        assert!((tau - 3.0 / (1.0 + 0.5 + 0.25)).abs() < 1e-12);
        assert!((kappa - 9.0).abs() < 1e-12);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("# comment\n{IDENTITY_SE3}EDGE_SE3:QUAT 1 2 0 0 0\n");
        match parse_g2o(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let text = format!("{IDENTITY_SE3}EDGE_SE2 1 2 1 2 0.5 1 0 0 1 0 1\n");
        assert!(matches!(parse_g2o(text.as_bytes()), Err(Error::MixedDimensions { .. })));
    }

    #[test]
    fn indefinite_information_rejected() {
        let text = "EDGE_SE2 0 1 1 2 0.5 1 0 0 -1 0 1\n";
        assert!(matches!(parse_g2o(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn disconnected_rejected() {
        let text = "EDGE_SE2 0 1 1 2 0.5 1 0 0 1 0 1\nEDGE_SE2 2 3 1 2 0.5 1 0 0 1 0 1\n";
        assert!(matches!(parse_g2o(text.as_bytes()), Err(Error::Disconnected { components: 2 })));
    }
}
