//! Multi-view feature tracks from pairwise inlier matches.
//!
//! Tracks are the connected components of the keypoint graph under the
//! inlier-match relation, cleaned so each image contributes at most one
//! observation. Merging joins tracks whose 3D points agree both in space
//! and when reprojected into each other's images.

use crate::geom::{project, CameraIntrinsics, Pose};
use crate::viewgraph::Match;
use nalgebra::{Vector2, Vector3};
use std::collections::{BTreeMap, HashMap};

/// One observation of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: usize,
    pub keypoint: usize,
    pub pixel: Vector2<f64>,
}

/// A multi-view track: connected 2D observations and, once positioned, a
/// 3D point.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: usize,
    pub point: Option<Vector3<f64>>,
    pub observations: Vec<Observation>,
}

impl Track {
    pub fn observation_in(&self, image: usize) -> Option<&Observation> {
        self.observations.iter().find(|o| o.image == image)
    }
}

/// An inlier match with the supporting edge's inlier count, used for
/// duplicate resolution.
#[derive(Debug, Clone, Copy)]
pub struct WeightedMatch {
    pub m: Match,
    pub edge_weight: f64,
}

/// Builds tracks by union-find over (image, keypoint) nodes.
///
/// Components containing two keypoints from the same image keep the one
/// with the higher summed inlier-edge weight (ties: lower keypoint id);
/// the others are dropped. Tracks with fewer than two observations are
/// discarded.
pub fn build_tracks(inlier_matches: &[WeightedMatch]) -> Vec<Track> {
    // Stable node numbering: (image, keypoint) in first-seen order.
    let mut node_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut nodes: Vec<(usize, usize)> = Vec::new();
    let mut pixel_of: Vec<Vector2<f64>> = Vec::new();
    let intern = |key: (usize, usize), px: Vector2<f64>,
                      nodes: &mut Vec<(usize, usize)>,
                      pixel_of: &mut Vec<Vector2<f64>>,
                      node_of: &mut HashMap<(usize, usize), usize>| {
        *node_of.entry(key).or_insert_with(|| {
            nodes.push(key);
            pixel_of.push(px);
            nodes.len() - 1
        })
    };

    let mut pairs = Vec::with_capacity(inlier_matches.len());
    for wm in inlier_matches {
        let a = intern(
            (wm.m.image_a, wm.m.keypoint_a),
            wm.m.point_a,
            &mut nodes,
            &mut pixel_of,
            &mut node_of,
        );
        let b = intern(
            (wm.m.image_b, wm.m.keypoint_b),
            wm.m.point_b,
            &mut nodes,
            &mut pixel_of,
            &mut node_of,
        );
        pairs.push((a, b, wm.edge_weight));
    }

    let mut uf = petgraph::unionfind::UnionFind::<usize>::new(nodes.len());
    let mut support = vec![0.0f64; nodes.len()]; // summed inlier-edge weight per keypoint
    for &(a, b, w) in &pairs {
        uf.union(a, b);
        support[a] += w;
        support[b] += w;
    }

    // Group nodes by component root, in node order (deterministic).
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        components.entry(uf.find(i)).or_default().push(i);
    }

    let mut tracks = Vec::new();
    for (_, members) in components {
        // Resolve duplicate observations per image.
        let mut best_per_image: BTreeMap<usize, usize> = BTreeMap::new();
        for &node in &members {
            let (image, keypoint) = nodes[node];
            match best_per_image.get(&image) {
                None => {
                    best_per_image.insert(image, node);
                }
                Some(&held) => {
                    let (_, held_kp) = nodes[held];
                    let better = support[node] > support[held]
                        || (support[node] == support[held] && keypoint < held_kp);
                    if better {
                        best_per_image.insert(image, node);
                    }
                }
            }
        }
        if best_per_image.len() < 2 {
            continue;
        }
        let observations = best_per_image
            .into_iter()
            .map(|(image, node)| Observation {
                image,
                keypoint: nodes[node].1,
                pixel: pixel_of[node],
            })
            .collect();
        tracks.push(Track { id: tracks.len(), point: None, observations });
    }
    tracks
}

#[derive(Debug, Clone, Copy)]
pub struct MergeOptions {
    /// Maximum reprojection distance of either point in every involved
    /// image, pixels.
    pub merge_px: f64,
    /// Maximum 3D separation, in scene units.
    pub max_distance: f64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions { merge_px: 2.0, max_distance: 0.01 }
    }
}

/// Merges pairs of triangulated tracks whose points lie within
/// `max_distance` and reproject within `merge_px` of every observation of
/// both tracks. Runs to a fixed point, so a second call changes nothing.
pub fn merge_tracks(
    tracks: &[Track],
    intrinsics: &BTreeMap<usize, CameraIntrinsics>,
    poses: &BTreeMap<usize, Pose>,
    opts: &MergeOptions,
) -> Vec<Track> {
    let mut current: Vec<Track> = tracks.to_vec();
    loop {
        let mut merged_any = false;
        let mut used = vec![false; current.len()];
        let mut next: Vec<Track> = Vec::with_capacity(current.len());
        for i in 0..current.len() {
            if used[i] {
                continue;
            }
            let mut acc = current[i].clone();
            for j in i + 1..current.len() {
                if used[j] {
                    continue;
                }
                if mergeable(&acc, &current[j], intrinsics, poses, opts) {
                    let other = &current[j];
                    // Midpoint of the two points; observations union with
                    // existing images keeping the current observation.
                    if let (Some(pa), Some(pb)) = (acc.point, other.point) {
                        acc.point = Some((pa + pb) * 0.5);
                    }
                    for o in &other.observations {
                        if acc.observation_in(o.image).is_none() {
                            acc.observations.push(*o);
                        }
                    }
                    acc.observations.sort_by_key(|o| o.image);
                    used[j] = true;
                    merged_any = true;
                }
            }
            next.push(acc);
        }
        for (i, t) in next.iter_mut().enumerate() {
            t.id = i;
        }
        current = next;
        if !merged_any {
            return current;
        }
    }
}

fn mergeable(
    a: &Track,
    b: &Track,
    intrinsics: &BTreeMap<usize, CameraIntrinsics>,
    poses: &BTreeMap<usize, Pose>,
    opts: &MergeOptions,
) -> bool {
    let (Some(pa), Some(pb)) = (a.point, b.point) else { return false };
    if (pa - pb).norm() > opts.max_distance {
        return false;
    }
    // Each point must explain every observation of both tracks.
    for (point, track) in [(pa, b), (pb, a), (pa, a), (pb, b)] {
        for obs in &track.observations {
            let (Some(k), Some(pose)) = (intrinsics.get(&obs.image), poses.get(&obs.image)) else {
                return false;
            };
            match project(k, pose, &point) {
                Ok(px) if (px - obs.pixel).norm() <= opts.merge_px => {}
                _ => return false,
            }
        }
    }
    true
}
