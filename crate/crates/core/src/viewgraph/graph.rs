use super::relative::{estimate_relative_pose, TwoViewOptions, ViewGraphEdge};
use super::{Match, ViewGraphError};
use crate::geom::CameraIntrinsics;
use crate::parallel;
use crate::synth::rng::{derive_seed, StreamKind};
use std::collections::{BTreeMap, BTreeSet};

/// Matches grouped for one unordered image pair, oriented `image_a < image_b`.
#[derive(Debug, Clone)]
pub struct PairMatchSet {
    pub image_a: usize,
    pub image_b: usize,
    pub matches: Vec<Match>,
}

/// Images as vertices, pairwise match sets and verified two-view geometries
/// as edges.
#[derive(Debug, Clone, Default)]
pub struct ViewGraph {
    pub vertices: Vec<usize>,
    pub pairs: Vec<PairMatchSet>,
    pub edges: Vec<ViewGraphEdge>,
}

/// Groups matches per unordered pair and keeps pairs with at least
/// `min_matches_per_pair` matches. Geometry is filled in by
/// [`estimate_edges`].
pub fn build_view_graph(
    matches: &[Match],
    min_matches_per_pair: usize,
) -> Result<ViewGraph, ViewGraphError> {
    let mut grouped: BTreeMap<(usize, usize), Vec<Match>> = BTreeMap::new();
    for m in matches {
        debug_assert_ne!(m.image_a, m.image_b);
        let mut m = *m;
        if m.image_a > m.image_b {
            m = Match {
                image_a: m.image_b,
                image_b: m.image_a,
                keypoint_a: m.keypoint_b,
                keypoint_b: m.keypoint_a,
                point_a: m.point_b,
                point_b: m.point_a,
            };
        }
        grouped.entry((m.image_a, m.image_b)).or_default().push(m);
    }

    let pairs: Vec<PairMatchSet> = grouped
        .into_iter()
        .filter(|(_, ms)| ms.len() >= min_matches_per_pair)
        .map(|((a, b), ms)| PairMatchSet { image_a: a, image_b: b, matches: ms })
        .collect();
    if pairs.is_empty() {
        return Err(ViewGraphError::EmptyGraph);
    }
    let vertices: BTreeSet<usize> =
        pairs.iter().flat_map(|p| [p.image_a, p.image_b]).collect();
    Ok(ViewGraph { vertices: vertices.into_iter().collect(), pairs, edges: Vec::new() })
}

impl ViewGraph {
    /// Connected components over the verified edges (or the raw pairs when
    /// no edges have been estimated yet), sorted by size descending.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let pairs: Vec<(usize, usize)> = if self.edges.is_empty() {
            self.pairs.iter().map(|p| (p.image_a, p.image_b)).collect()
        } else {
            self.edges.iter().map(|e| (e.image_a, e.image_b)).collect()
        };
        let index: BTreeMap<usize, usize> =
            self.vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut uf = petgraph::unionfind::UnionFind::new(self.vertices.len());
        for (a, b) in pairs {
            if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
                uf.union(ia, ib);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &v) in self.vertices.iter().enumerate() {
            groups.entry(uf.find(i)).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        out
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() <= 1
    }

    pub fn largest_component(&self) -> Vec<usize> {
        self.connected_components().into_iter().next().unwrap_or_default()
    }

    /// Drops edges and pairs outside the largest connected component.
    pub fn restrict_to_largest_component(&mut self) {
        let keep: BTreeSet<usize> = self.largest_component().into_iter().collect();
        self.pairs.retain(|p| keep.contains(&p.image_a) && keep.contains(&p.image_b));
        self.edges.retain(|e| keep.contains(&e.image_a) && keep.contains(&e.image_b));
        self.vertices.retain(|v| keep.contains(v));
    }
}

/// Estimates two-view geometry for every pair, in parallel, with one
/// deterministic RANSAC stream per pair. Pairs that fail (degenerate or
/// cheirality-ambiguous) are reported alongside the successful edges.
pub fn estimate_edges(
    graph: &ViewGraph,
    intrinsics: &BTreeMap<usize, CameraIntrinsics>,
    opts: &TwoViewOptions,
    seed: u64,
) -> (Vec<ViewGraphEdge>, Vec<((usize, usize), ViewGraphError)>) {
    let results = parallel::ordered_map(&graph.pairs, |_, pair| {
        let (Some(ka), Some(kb)) = (intrinsics.get(&pair.image_a), intrinsics.get(&pair.image_b))
        else {
            return Err((
                (pair.image_a, pair.image_b),
                ViewGraphError::DegenerateConfiguration { what: "missing intrinsics".into() },
            ));
        };
        let pair_tag = (pair.image_a as u64) << 32 | pair.image_b as u64;
        let mut per_pair = *opts;
        per_pair.ransac.seed = derive_seed(seed, StreamKind::Ransac, pair_tag);
        estimate_relative_pose(&pair.matches, ka, kb, &per_pair)
            .map_err(|e| ((pair.image_a, pair.image_b), e))
    });

    let mut edges = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => edges.push(e),
            Err(f) => failures.push(f),
        }
    }
    (edges, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn mk(a: usize, b: usize, n: usize) -> Vec<Match> {
        (0..n)
            .map(|i| Match {
                image_a: a,
                image_b: b,
                keypoint_a: i,
                keypoint_b: i,
                point_a: Vector2::new(i as f64, 0.0),
                point_b: Vector2::new(i as f64, 1.0),
            })
            .collect()
    }

    #[test]
    fn pair_above_threshold_kept() {
        let graph = build_view_graph(&mk(0, 1, 50), 16).unwrap();
        assert_eq!(graph.pairs.len(), 1);
        assert_eq!(graph.vertices, vec![0, 1]);
    }

    #[test]
    fn pair_below_threshold_is_empty_graph() {
        assert!(matches!(build_view_graph(&mk(0, 1, 10), 16), Err(ViewGraphError::EmptyGraph)));
    }

    #[test]
    fn components_and_largest() {
        let mut ms = mk(0, 1, 20);
        ms.extend(mk(1, 2, 20));
        ms.extend(mk(5, 6, 20));
        let graph = build_view_graph(&ms, 16).unwrap();
        let comps = graph.connected_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(graph.largest_component(), vec![0, 1, 2]);
        assert!(!graph.is_connected());
    }

    #[test]
    fn synthetic_orbit_graph_is_connected() {
        use crate::synth::{corrupt_observations, generate_scene, Layout, NoiseSpec};
        let scene = generate_scene(20, 300, Layout::Orbit, 17).unwrap();
        let obs = corrupt_observations(&scene, &NoiseSpec::clean(17));
        let graph = build_view_graph(&obs.all_matches(), 16).unwrap();
        assert!(graph.is_connected());
        assert_eq!(graph.vertices.len(), 20);
    }
}
