mod common;

use std::io::Cursor;

use nalgebra::DMatrix;
use sesync::error::Error;
use sesync::experiments::{generate_cube, CubeConfig};
use sesync::g2o::{parse_g2o, read_trajectory, read_tum, reduce_information, write_g2o, write_trajectory, write_tum};
use sesync::graph::MeasurementGraph;

fn round_trip(g: &MeasurementGraph) -> MeasurementGraph {
    let mut buf = Vec::new();
    write_g2o(&mut buf, g, None).unwrap();
    parse_g2o(Cursor::new(buf)).unwrap().graph
}

fn assert_graphs_close(a: &MeasurementGraph, b: &MeasurementGraph) {
    assert_eq!(a.num_poses(), b.num_poses());
    assert_eq!(a.original_ids(), b.original_ids());
    assert_eq!(a.num_measurements(), b.num_measurements());
    for (x, y) in a.edges().iter().zip(b.edges()) {
        assert_eq!((x.tail, x.head), (y.tail, y.head));
        assert!((&x.t - &y.t).amax() <= 1e-12);
        assert!((x.rot.matrix() - y.rot.matrix()).amax() <= 1e-12);
        assert!((x.tau - y.tau).abs() <= 1e-12 * x.tau);
        assert!((x.kappa - y.kappa).abs() <= 1e-12 * x.kappa);
    }
}

#[test]
fn write_then_parse_round_trips() {
    for dim in [2, 3] {
        let cfg = CubeConfig { s: 3, dim, p_lc: 0.5, seed: 3, ..Default::default() };
        let (g, _) = generate_cube(&cfg).unwrap();
        assert_graphs_close(&g, &round_trip(&g));
    }
    let (g, _) = common::random_instance(12, 3, 10, 0.3, 0.5, 8);
    assert_graphs_close(&g, &round_trip(&g));
}

#[test]
fn writing_is_deterministic() {
    let (g, truth) = generate_cube(&CubeConfig { s: 3, ..Default::default() }).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_g2o(&mut a, &g, Some(&truth)).unwrap();
    write_g2o(&mut b, &g, Some(&truth)).unwrap();
    assert_eq!(a, b);
    let parsed = parse_g2o(Cursor::new(a)).unwrap();
    let est = parsed.initial_estimate().unwrap();
    for (x, y) in est.rotations.iter().zip(&truth.rotations) {
        assert!((x.matrix() - y.matrix()).amax() <= 1e-12);
    }
}

#[test]
fn tum_round_trips() {
    for dim in [2, 3] {
        let (g, truth) = generate_cube(&CubeConfig { s: 3, dim, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_tum(&mut buf, &truth, g.original_ids()).unwrap();
        let poses = read_tum(Cursor::new(buf), dim).unwrap();
        assert_eq!(poses.len(), truth.len());
        for (k, (r, t)) in poses.values().enumerate() {
            assert!((r.matrix() - truth.rotations[k].matrix()).amax() <= 1e-12);
            assert!((t - &truth.translations[k]).amax() <= 1e-12);
        }
    }
}

#[test]
fn trajectory_files_are_read_by_extension() {
    let dir = std::env::temp_dir().join(format!("sesync-g2o-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (g, truth) = generate_cube(&CubeConfig { s: 2, ..Default::default() }).unwrap();
    for name in ["traj.g2o", "traj.tum"] {
        let path = dir.join(name);
        write_trajectory(&path, &truth, g.original_ids()).unwrap();
        let back = read_trajectory(&path, &g).unwrap();
        for (x, y) in back.translations.iter().zip(&truth.translations) {
            assert!((x - y).amax() <= 1e-12);
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn planar_file_with_sparse_ids() {
    let text = "\
# comment
VERTEX_SE2 10 0 0 0
VERTEX_SE2 30 1 0 0
VERTEX_SE2 20 2 0 0
EDGE_SE2 10 30 1 0 0.5 4 0 0 4 0 9
EDGE_SE2 30 20 1 0 0 2 0 0 2 0 3
FIX 10
EDGE_SE2 10 20 2 0 0.5 1 0 0 1 0 1
";
    let file = parse_g2o(Cursor::new(text)).unwrap();
    let g = &file.graph;
    assert_eq!(g.num_poses(), 3);
    assert_eq!(g.original_ids(), &[10, 20, 30]);
    // Edges are stored sorted by node pair.
    let e = g.edges().iter().find(|e| (e.tail, e.head) == (0, 2)).unwrap();
    assert!((e.tau - 4.0).abs() < 1e-12 && (e.kappa - 9.0).abs() < 1e-12);
    assert!((e.rot.angle_2d() - 0.5).abs() < 1e-12);
}

#[test]
fn spatial_information_is_reduced_by_traces() {
    // Oracle: τ = 3 / tr(Σ_tt), κ = 3 / tr(Σ_RR) with Σ = I⁻¹ per block.
    let diag = [1.0, 2.0, 4.0, 10.0, 20.0, 40.0];
    let mut info = DMatrix::zeros(6, 6);
    for (k, v) in diag.iter().enumerate() {
        info[(k, k)] = *v;
    }
    let (tau, kappa) = reduce_information(&info, 3).unwrap();
    assert!((tau - 3.0 / (1.0 + 0.5 + 0.25)).abs() < 1e-12);
    assert!((kappa - 3.0 / (0.1 + 0.05 + 0.025)).abs() < 1e-12);
}

#[test]
fn malformed_records_report_their_line() {
    let text = "VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0\n";
    match parse_g2o(Cursor::new(text)) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}
