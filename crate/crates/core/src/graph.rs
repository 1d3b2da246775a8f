//! Problem instances: directed relative-pose measurements over a connected
//! pose graph, and pose estimates.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{Rotation, ROTATION_TOL};

/// One directed relative-pose observation `x̃_ij` of `x_i⁻¹ x_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseMeasurement {
    pub tail: usize,
    pub head: usize,
    /// Relative translation, expressed in the tail frame.
    pub t: DVector<f64>,
    pub rot: Rotation,
    /// Translational precision (1/m²).
    pub tau: f64,
    /// Rotational concentration.
    pub kappa: f64,
}

impl PoseMeasurement {
    pub fn new(
        tail: usize,
        head: usize,
        t: DVector<f64>,
        rot: Rotation,
        tau: f64,
        kappa: f64,
    ) -> Result<Self> {
        let m = PoseMeasurement { tail, head, t, rot, tau, kappa };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.t.len() != self.rot.dim() {
            return Err(Error::Dimension(format!(
                "translation has length {} but rotation is {}x{}",
                self.t.len(),
                self.rot.dim(),
                self.rot.dim()
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidMeasurement(format!(
                "edge ({}, {}): tau must be positive and finite, got {}",
                self.tail, self.head, self.tau
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidMeasurement(format!(
                "edge ({}, {}): kappa must be non-negative and finite, got {}",
                self.tail, self.head, self.kappa
            )));
        }
        if self.t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasurement(format!(
                "edge ({}, {}): non-finite translation",
                self.tail, self.head
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.rot.dim()
    }

    /// The reversed measurement `x̃_ji = x̃_ij⁻¹` with the same precisions.
    pub fn inverse(&self) -> PoseMeasurement {
        invert_measurement(self)
    }
}

/// `x̃_ij⁻¹`: swaps the endpoints, `R' = Rᵀ`, `t' = −Rᵀ t`.
pub fn invert_measurement(m: &PoseMeasurement) -> PoseMeasurement {
    let rt = m.rot.transpose();
    let t = -(rt.matrix() * &m.t);
    PoseMeasurement {
        tail: m.head,
        head: m.tail,
        t,
        rot: rt,
        tau: m.tau,
        kappa: m.kappa,
    }
}

/// Component structure of the underlying undirected graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Connectivity {
    pub connected: bool,
    pub components: usize,
    /// Component label per node; labels are assigned in order of each
    /// component's smallest node.
    pub labels: Vec<usize>,
}

/// Labels the undirected connected components spanned by `edges` on `n` nodes.
pub fn connected_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Connectivity {
    let mut adj = vec![Vec::new(); n];
    for (i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut labels = vec![usize::MAX; n];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = components;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if labels[w] == usize::MAX {
                    labels[w] = components;
                    stack.push(w);
                }
            }
        }
        components += 1;
    }
    Connectivity {
        connected: components == 1,
        components,
        labels,
    }
}

/// A connected SE(d) synchronization instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementGraph {
    n: usize,
    d: usize,
    edges: Vec<PoseMeasurement>,
    /// Original (external) id of each internal node.
    ids: Vec<i64>,
}

impl MeasurementGraph {
    /// Builds a graph on nodes `0..n`. Self-loops are dropped, duplicate
    /// measurements between the same unordered pair are merged, and the
    /// result must be connected.
    pub fn new(n: usize, d: usize, edges: Vec<PoseMeasurement>) -> Result<Self> {
        Self::with_ids(d, edges, (0..n as i64).collect())
    }

    /// As [`MeasurementGraph::new`], with an explicit map from internal node
    /// index to external id.
    pub fn with_ids(d: usize, edges: Vec<PoseMeasurement>, ids: Vec<i64>) -> Result<Self> {
        let n = ids.len();
        if !(d == 2 || d == 3) {
            return Err(Error::Dimension(format!("d must be 2 or 3, got {d}")));
        }
        if n == 0 {
            return Err(Error::InvalidMeasurement("graph has no nodes".into()));
        }
        let mut groups: BTreeMap<(usize, usize), Vec<PoseMeasurement>> = BTreeMap::new();
        for e in edges {
            e.validate()?;
            if e.dim() != d {
                return Err(Error::MixedDimensions { first: d, second: e.dim() });
            }
            if e.tail >= n || e.head >= n {
                return Err(Error::InvalidMeasurement(format!(
                    "edge ({}, {}) references a node outside 0..{n}",
                    e.tail, e.head
                )));
            }
            if e.tail == e.head {
                warn!("dropping self-loop on node {}", ids[e.tail]);
                continue;
            }
            let key = (e.tail.min(e.head), e.tail.max(e.head));
            groups.entry(key).or_default().push(e);
        }
        let mut merged = Vec::with_capacity(groups.len());
        for (_, group) in groups {
            merged.push(merge_measurements(group));
        }
        let conn = connected_components(n, merged.iter().map(|e| (e.tail, e.head)));
        if !conn.connected {
            return Err(Error::Disconnected { components: conn.components });
        }
        Ok(MeasurementGraph { n, d, edges: merged, ids })
    }

    pub fn num_poses(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_measurements(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[PoseMeasurement] {
        &self.edges
    }

    /// External id of internal node `i`.
    pub fn original_id(&self, i: usize) -> i64 {
        self.ids[i]
    }

    pub fn original_ids(&self) -> &[i64] {
        &self.ids
    }

    /// Internal index of an external id.
    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn connectivity(&self) -> Connectivity {
        check_connectivity(self)
    }
}

pub fn check_connectivity(g: &MeasurementGraph) -> Connectivity {
    connected_components(g.n, g.edges.iter().map(|e| (e.tail, e.head)))
}

/// Merges measurements of one unordered pair into a single measurement
/// oriented like the first. Translations are averaged with weights τ and
/// rotations by the κ-weighted chordal mean; precisions add.
fn merge_measurements(mut group: Vec<PoseMeasurement>) -> PoseMeasurement {
    if group.len() == 1 {
        return group.pop().unwrap();
    }
    let (tail, head) = (group[0].tail, group[0].head);
    warn!("merging {} measurements between nodes {tail} and {head}", group.len());
    let d = group[0].dim();
    let aligned: Vec<PoseMeasurement> = group
        .into_iter()
        .map(|m| if m.tail == tail { m } else { invert_measurement(&m) })
        .collect();
    let tau: f64 = aligned.iter().map(|m| m.tau).sum();
    let kappa: f64 = aligned.iter().map(|m| m.kappa).sum();
    let mut t = DVector::zeros(d);
    let mut rsum = DMatrix::zeros(d, d);
    for m in &aligned {
        t += &m.t * (m.tau / tau);
        let w = if kappa > 0.0 { m.kappa } else { 1.0 };
        rsum += m.rot.matrix() * w;
    }
    PoseMeasurement {
        tail,
        head,
        t,
        rot: Rotation::nearest(&rsum),
        tau,
        kappa,
    }
}

/// A full SE(d) trajectory estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub rotations: Vec<Rotation>,
    pub translations: Vec<DVector<f64>>,
}

impl PoseEstimate {
    pub fn new(rotations: Vec<Rotation>, translations: Vec<DVector<f64>>) -> Result<Self> {
        if rotations.len() != translations.len() {
            return Err(Error::Dimension(format!(
                "{} rotations but {} translations",
                rotations.len(),
                translations.len()
            )));
        }
        if let Some(r) = rotations.first() {
            let d = r.dim();
            if rotations.iter().any(|r| r.dim() != d) || translations.iter().any(|t| t.len() != d) {
                return Err(Error::Dimension("inconsistent pose dimensions".into()));
            }
        }
        Ok(PoseEstimate { rotations, translations })
    }

    /// Builds an estimate from a `d × dn` rotation block matrix and a `d × n`
    /// translation matrix.
    pub fn from_blocks(r: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<Self> {
        let d = r.nrows();
        let n = t.ncols();
        if r.ncols() != d * n || t.nrows() != d {
            return Err(Error::Dimension("rotation/translation block shapes disagree".into()));
        }
        let rotations = (0..n)
            .map(|i| Rotation::from_matrix(r.columns(d * i, d).into_owned(), 1e-8))
            .collect::<Result<Vec<_>>>()?;
        let translations = (0..n).map(|i| t.column(i).into_owned()).collect();
        Ok(PoseEstimate { rotations, translations })
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rotations.first().map_or(0, |r| r.dim())
    }

    /// Rotations stacked as `(R_1 ⋯ R_n)`, a `d × dn` matrix.
    pub fn rotation_blocks(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.len();
        let mut out = DMatrix::zeros(d, d * n);
        for (i, r) in self.rotations.iter().enumerate() {
            out.columns_mut(d * i, d).copy_from(r.matrix());
        }
        out
    }

    /// Translations as the columns of a `d × n` matrix.
    pub fn translation_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, self.len());
        for (i, t) in self.translations.iter().enumerate() {
            out.set_column(i, t);
        }
        out
    }

    /// Checks that every rotation is in SO(d) to within `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.rotations
            .iter()
            .all(|r| Rotation::from_matrix(r.matrix().clone(), tol.max(ROTATION_TOL)).is_ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so;

    fn meas(i: usize, j: usize, t: [f64; 3], omega: [f64; 3]) -> PoseMeasurement {
        PoseMeasurement::new(
            i,
            j,
            DVector::from_row_slice(&t),
            Rotation::from_matrix(exp_so(&omega), 1e-12).unwrap(),
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn chain_is_connected() {
        let c = connected_components(3, [(0, 1), (1, 2)]);
        assert!(c.connected);
        assert_eq!(c.labels, vec![0, 0, 0]);
    }

    #[test]
    fn two_disjoint_edges_are_two_components() {
        let c = connected_components(4, [(0, 1), (2, 3)]);
        assert!(!c.connected);
        assert_eq!(c.components, 2);
        assert_eq!(c.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let edges = vec![meas(0, 1, [1.0, 0.0, 0.0], [0.0; 3]), meas(2, 3, [1.0, 0.0, 0.0], [0.0; 3])];
        assert!(matches!(
            MeasurementGraph::new(4, 3, edges),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn invert_identity_edge_swaps_endpoints() {
        let m = meas(0, 1, [0.0; 3], [0.0; 3]);
        let inv = invert_measurement(&m);
        assert_eq!((inv.tail, inv.head), (1, 0));
        assert_eq!(inv.rot.matrix(), &DMatrix::identity(3, 3));
        assert!(inv.t.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invert_pure_translation() {
        let inv = invert_measurement(&meas(0, 1, [1.0, 0.0, 0.0], [0.0; 3]));
        assert_eq!(inv.t.as_slice(), &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn self_loops_are_dropped_and_duplicates_merged() {
        let a = meas(0, 1, [1.0, 0.0, 0.0], [0.0, 0.0, 0.1]);
        let b = invert_measurement(&meas(0, 1, [3.0, 0.0, 0.0], [0.0, 0.0, 0.1]));
        let lp = meas(1, 1, [0.0; 3], [0.0; 3]);
        let g = MeasurementGraph::new(2, 3, vec![a.clone(), b, lp]).unwrap();
        assert_eq!(g.num_measurements(), 1);
        let e = &g.edges()[0];
        assert_eq!((e.tail, e.head), (0, 1));
        assert_eq!(e.tau, 2.0);
        assert_eq!(e.kappa, 2.0);
        assert!((e.t[0] - 2.0).abs() < 1e-12);
        assert!((e.rot.matrix() - a.rot.matrix()).amax() < 1e-12);
    }

    #[test]
    fn invalid_precisions_are_rejected() {
        let r = Rotation::identity(2);
        assert!(PoseMeasurement::new(0, 1, DVector::zeros(2), r.clone(), 0.0, 1.0).is_err());
        assert!(PoseMeasurement::new(0, 1, DVector::zeros(2), r.clone(), 1.0, -1.0).is_err());
        assert!(PoseMeasurement::new(0, 1, DVector::zeros(3), r, 1.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inversion_is_an_involution(
                t in prop::array::uniform3(-10.0f64..10.0),
                w in prop::array::uniform3(-3.0f64..3.0),
                tau in 0.01f64..100.0,
                kappa in 0.0f64..100.0,
            ) {
                let mut m = meas(3, 7, t, w);
                m.tau = tau;
                m.kappa = kappa;
                let back = invert_measurement(&invert_measurement(&m));
                prop_assert_eq!((back.tail, back.head), (3, 7));
                let err = (back.t - &m.t).amax();
                // A few ulps of the translation magnitude.
                prop_assert!(err <= 2e-15 * (1.0 + m.t.lp_norm(1)), "err {:e}", err);
                prop_assert!((back.rot.matrix() - m.rot.matrix()).amax() <= 1e-15);
                prop_assert_eq!(back.tau, tau);
                prop_assert_eq!(back.kappa, kappa);
            }
        }
    }
}
