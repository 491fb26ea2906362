//! Landmark frames, the nine-region face partition, the visual patch grid and
//! the region-patch proximity mask.
//!
//! Coordinates are normalized to the face crop: `x` grows to the right, `y`
//! grows downward, and the crop spans the unit square.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;
pub const NUM_REGIONS: usize = 9;
pub const DEFAULT_MAX_FRAMES: usize = 8;

/// Accepted coordinate range. Detectors emit points slightly outside the crop.
pub const COORD_MIN: f64 = -0.5;
pub const COORD_MAX: f64 = 1.5;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    points: Vec<Point>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidLandmarks(format!(
                "expected {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            for &c in p {
                if !c.is_finite() {
                    return Err(Error::InvalidLandmarks(format!("point {i} is not finite")));
                }
                if !(COORD_MIN..=COORD_MAX).contains(&c) {
                    return Err(Error::InvalidLandmarks(format!(
                        "point {i} coordinate {c} outside [{COORD_MIN}, {COORD_MAX}]"
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkClip {
    frames: Vec<LandmarkFrame>,
}

impl LandmarkClip {
    pub fn new(frames: Vec<LandmarkFrame>) -> Result<Self> {
        Self::with_max_frames(frames, DEFAULT_MAX_FRAMES)
    }

    pub fn with_max_frames(frames: Vec<LandmarkFrame>, max_frames: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidLandmarks("clip has no frames".into()));
        }
        if frames.len() > max_frames {
            return Err(Error::InvalidLandmarks(format!(
                "clip has {} frames, maximum is {max_frames}",
                frames.len()
            )));
        }
        Ok(Self { frames })
    }

    pub fn single(frame: LandmarkFrame) -> Self {
        Self {
            frames: vec![frame],
        }
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// The nine named face regions, in partition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    FaceBoundary,
    RightBrow,
    LeftBrow,
    NoseBridge,
    Nostril,
    RightEye,
    LeftEye,
    OuterLips,
    InnerLips,
}

impl Region {
    pub const ALL: [Region; NUM_REGIONS] = [
        Region::FaceBoundary,
        Region::RightBrow,
        Region::LeftBrow,
        Region::NoseBridge,
        Region::Nostril,
        Region::RightEye,
        Region::LeftEye,
        Region::OuterLips,
        Region::InnerLips,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::FaceBoundary => "face boundary",
            Region::RightBrow => "right brow",
            Region::LeftBrow => "left brow",
            Region::NoseBridge => "nose bridge",
            Region::Nostril => "nostril",
            Region::RightEye => "right eye",
            Region::LeftEye => "left eye",
            Region::OuterLips => "outer lips",
            Region::InnerLips => "inner lips",
        }
    }

    /// Index range in the 68-point annotation convention.
    pub fn landmark_range(self) -> std::ops::Range<usize> {
        match self {
            Region::FaceBoundary => 0..17,
            Region::RightBrow => 17..22,
            Region::LeftBrow => 22..27,
            Region::NoseBridge => 27..31,
            Region::Nostril => 31..36,
            Region::RightEye => 36..42,
            Region::LeftEye => 42..48,
            Region::OuterLips => 48..60,
            Region::InnerLips => 60..68,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

/// Disjoint, non-empty landmark groups covering all 68 points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    groups: Vec<RegionGroup>,
}

impl RegionPartition {
    pub fn new(groups: Vec<RegionGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidPartition("no groups".into()));
        }
        let mut owner = [None::<usize>; NUM_LANDMARKS];
        for (g, group) in groups.iter().enumerate() {
            if group.indices.is_empty() {
                return Err(Error::InvalidPartition(format!(
                    "group {:?} is empty",
                    group.name
                )));
            }
            for &i in &group.indices {
                if i >= NUM_LANDMARKS {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} in group {:?} out of range",
                        group.name
                    )));
                }
                if let Some(prev) = owner[i] {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} appears in groups {:?} and {:?}",
                        groups[prev].name, group.name
                    )));
                }
                owner[i] = Some(g);
            }
        }
        if let Some(missing) = owner.iter().position(Option::is_none) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} not covered"
            )));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[RegionGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.indices.len()).collect()
    }
}

pub fn default_partition() -> RegionPartition {
    let groups = Region::ALL
        .iter()
        .map(|r| RegionGroup {
            name: r.name().to_string(),
            indices: r.landmark_range().collect(),
        })
        .collect();
    RegionPartition { groups }
}

/// Arithmetic mean of each group's points, in partition order.
pub fn region_centroids(frame: &LandmarkFrame, partition: &RegionPartition) -> Vec<Point> {
    partition
        .groups
        .iter()
        .map(|g| {
            let (sx, sy) = g.indices.iter().fold((0.0, 0.0), |(sx, sy), &i| {
                let [x, y] = frame.points[i];
                (sx + x, sy + y)
            });
            let n = g.indices.len() as f64;
            [sx / n, sy / n]
        })
        .collect()
}

/// Regular grid of visual patches over the crop, enumerated row-major from the
/// top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!(
                "patch grid must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch_centroids(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.num_patches());
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push([
                    (c as f64 + 0.5) / self.cols as f64,
                    (r as f64 + 0.5) / self.rows as f64,
                ]);
            }
        }
        out
    }
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self { rows: 16, cols: 16 }
    }
}

impl std::fmt::Display for PatchGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for PatchGrid {
    type Err = Error;

    /// Parses `ROWSxCOLS`, e.g. `16x16`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad grid {s:?}, expected ROWSxCOLS"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        PatchGrid::new(rows, cols)
    }
}

pub fn patch_centroids(grid: &PatchGrid) -> Vec<Point> {
    grid.patch_centroids()
}

/// Patch-by-region matrix of non-positive proximity scores for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RppMask {
    entries: Array2<f64>,
}

impl RppMask {
    /// Wraps an arbitrary bias matrix. Used for tests and ablations that need
    /// a mask not derived from geometry.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mask entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn zeros(patches: usize, regions: usize) -> Self {
        Self {
            entries: Array2::zeros((patches, regions)),
        }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn num_patches(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_regions(&self) -> usize {
        self.entries.ncols()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.outer_iter().map(|r| r.to_vec()).collect()
    }
}

/// Entry `(j, i)` is minus the Euclidean distance from patch `j` to region `i`.
pub fn rpp_mask(regions: &[Point], patches: &[Point]) -> Result<RppMask> {
    if regions
        .iter()
        .chain(patches)
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::NonFinite("centroids".into()));
    }
    let entries = Array2::from_shape_fn((patches.len(), regions.len()), |(j, i)| {
        let dx = regions[i][0] - patches[j][0];
        let dy = regions[i][1] - patches[j][1];
        -dx.hypot(dy)
    });
    Ok(RppMask { entries })
}

/// One mask per frame, each built from that frame's own region centroids.
pub fn clip_masks(
    clip: &LandmarkClip,
    partition: &RegionPartition,
    grid: &PatchGrid,
) -> Result<Vec<RppMask>> {
    let patches = grid.patch_centroids();
    clip.frames()
        .iter()
        .map(|f| rpp_mask(&region_centroids(f, partition), &patches))
        .collect()
}

/// A neutral frontal face in the 68-point convention, used by the synthetic
/// data generator and in examples.
pub fn canonical_points() -> Vec<Point> {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    // jaw: lower half ellipse from the image-left ear to the image-right ear
    for k in 0..17 {
        let phi = PI - k as f64 * PI / 16.0;
        pts.push([0.5 + 0.4 * phi.cos(), 0.45 + 0.45 * phi.sin()]);
    }
    for x0 in [0.18, 0.58] {
        for k in 0..5 {
            let u = k as f64 / 4.0;
            pts.push([x0 + 0.24 * u, 0.32 - 0.04 * (PI * u).sin()]);
        }
    }
    for k in 0..4 {
        pts.push([0.5, 0.38 + 0.06 * k as f64]);
    }
    for k in 0..5 {
        let u = k as f64 / 4.0;
        pts.push([0.42 + 0.16 * u, 0.62 - 0.02 * (PI * u).sin()]);
    }
    let ellipse = |pts: &mut Vec<Point>, cx: f64, cy: f64, rx: f64, ry: f64, n: usize| {
        for k in 0..n {
            let a = PI + 2.0 * PI * k as f64 / n as f64;
            pts.push([cx + rx * a.cos(), cy + ry * a.sin()]);
        }
    };
    ellipse(&mut pts, 0.32, 0.42, 0.07, 0.03, 6);
    ellipse(&mut pts, 0.68, 0.42, 0.07, 0.03, 6);
    ellipse(&mut pts, 0.5, 0.74, 0.13, 0.06, 12);
    ellipse(&mut pts, 0.5, 0.74, 0.08, 0.025, 8);
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    pts
}

pub fn canonical_frame() -> LandmarkFrame {
    LandmarkFrame {
        points: canonical_points(),
    }
}

/// On-disk landmark document: `{"id": ..., "frames": [[[x, y] x68] xT]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub id: String,
    pub frames: Vec<Vec<Point>>,
}

impl LandmarkFile {
    pub fn from_clip(id: impl Into<String>, clip: &LandmarkClip) -> Self {
        Self {
            id: id.into(),
            frames: clip.frames().iter().map(|f| f.points.clone()).collect(),
        }
    }

    pub fn to_clip(&self, max_frames: usize) -> Result<LandmarkClip> {
        let frames = self
            .frames
            .iter()
            .map(|f| LandmarkFrame::new(f.clone()))
            .collect::<Result<Vec<_>>>()?;
        LandmarkClip::with_max_frames(frames, max_frames)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Floats are written in shortest round-trip form, so reading the file
    /// back reproduces every coordinate bit for bit.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("landmark file serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng) -> LandmarkFrame {
        LandmarkFrame::new((0..68).map(|_| [rng.random(), rng.random()]).collect()).unwrap()
    }

    #[test]
    fn default_partition_is_complete() {
        let p = default_partition();
        assert_eq!(p.len(), 9);
        let mut seen = [0usize; 68];
        for g in p.groups() {
            for &i in &g.indices {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(p.group_sizes().iter().sum::<usize>(), 68);
        let eye = &p.groups()[5];
        assert_eq!(eye.name, "right eye");
        assert_eq!(eye.indices, (36..42).collect::<Vec<_>>());
        // default partition must pass its own validation
        RegionPartition::new(p.groups().to_vec()).unwrap();
    }

    #[test]
    fn partition_validation() {
        let overlapping = vec![
            RegionGroup { name: "a".into(), indices: (0..40).collect() },
            RegionGroup { name: "b".into(), indices: (39..68).collect() },
        ];
        assert!(matches!(RegionPartition::new(overlapping), Err(Error::InvalidPartition(_))));
        let missing = vec![RegionGroup { name: "a".into(), indices: (0..67).collect() }];
        assert!(RegionPartition::new(missing).is_err());
        let empty = vec![
            RegionGroup { name: "a".into(), indices: (0..68).collect() },
            RegionGroup { name: "b".into(), indices: vec![] },
        ];
        assert!(RegionPartition::new(empty).is_err());
    }

    #[test]
    fn frame_validation() {
        assert!(LandmarkFrame::new(vec![[0.5, 0.5]; 67]).is_err());
        let mut pts = vec![[0.5, 0.5]; 68];
        pts[3] = [f64::NAN, 0.0];
        assert!(LandmarkFrame::new(pts.clone()).is_err());
        pts[3] = [1.6, 0.0];
        assert!(LandmarkFrame::new(pts.clone()).is_err());
        pts[3] = [-0.5, 1.5];
        assert!(LandmarkFrame::new(pts).is_ok());
        assert!(LandmarkClip::new(vec![]).is_err());
        assert!(LandmarkClip::new(vec![canonical_frame(); 9]).is_err());
        assert_eq!(LandmarkClip::new(vec![canonical_frame(); 8]).unwrap().num_frames(), 8);
    }

    #[test]
    fn constant_frame_centroids() {
        let f = LandmarkFrame::new(vec![[0.5, 0.5]; 68]).unwrap();
        for c in region_centroids(&f, &default_partition()) {
            assert_eq!(c, [0.5, 0.5]);
        }
    }

    #[test]
    fn hexagon_eye_centroid() {
        let mut pts = vec![[0.5, 0.5]; 68];
        for k in 0..6 {
            let a = k as f64 * PI / 3.0;
            pts[36 + k] = [0.3 + 0.05 * a.cos(), 0.4 + 0.05 * a.sin()];
        }
        let f = LandmarkFrame::new(pts).unwrap();
        let c = region_centroids(&f, &default_partition())[5];
        assert!((c[0] - 0.3).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn centroids_match_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = default_partition();
        for _ in 0..50 {
            let f = random_frame(&mut rng);
            let got = region_centroids(&f, &p);
            for (g, c) in p.groups().iter().zip(&got) {
                let mut sx = 0.0;
                let mut sy = 0.0;
                for &i in &g.indices {
                    sx += f.points()[i][0];
                    sy += f.points()[i][1];
                }
                let n = g.indices.len() as f64;
                assert_eq!(*c, [sx / n, sy / n]);
            }
        }
    }

    #[test]
    fn patch_grid_centroids() {
        assert_eq!(PatchGrid::new(1, 1).unwrap().patch_centroids(), vec![[0.5, 0.5]]);
        assert_eq!(
            PatchGrid::new(2, 2).unwrap().patch_centroids(),
            vec![[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]
        );
        let g = PatchGrid::default();
        let c = g.patch_centroids();
        assert_eq!(c.len(), 256);
        assert_eq!(c[0], [1.0 / 32.0, 1.0 / 32.0]);
        // row-major: index 1 moves right
        assert_eq!(c[1], [3.0 / 32.0, 1.0 / 32.0]);
        assert!(PatchGrid::new(0, 3).is_err());
        assert_eq!("4x8".parse::<PatchGrid>().unwrap(), PatchGrid::new(4, 8).unwrap());
        assert!("4by8".parse::<PatchGrid>().is_err());
    }

    #[test]
    fn mask_entries() {
        let m = rpp_mask(&[[0.0, 0.0]], &[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert_eq!(m.entries()[[0, 0]], -5.0);
        assert_eq!(m.entries()[[1, 0]], 0.0);
        assert!(rpp_mask(&[[f64::INFINITY, 0.0]], &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn clip_masks_per_frame() {
        let mut moved = canonical_points();
        for p in &mut moved[36..42] {
            p[1] -= 0.1;
        }
        let clip = LandmarkClip::new(vec![canonical_frame(), LandmarkFrame::new(moved).unwrap()])
            .unwrap();
        let masks = clip_masks(&clip, &default_partition(), &PatchGrid::new(4, 4).unwrap()).unwrap();
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].entries().dim(), (16, 9));
        assert_ne!(masks[0].entries().column(5), masks[1].entries().column(5));
        assert_eq!(masks[0].entries().column(0), masks[1].entries().column(0));
    }

    #[test]
    fn canonical_face_is_valid() {
        let f = LandmarkFrame::new(canonical_points()).unwrap();
        let c = region_centroids(&f, &default_partition());
        // right eye on the image left, brows above eyes, lips below nose
        assert!(c[5][0] < c[6][0]);
        assert!(c[1][1] < c[5][1]);
        assert!(c[7][1] > c[4][1]);
    }

    #[test]
    fn landmark_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clip = LandmarkClip::new(vec![random_frame(&mut rng), random_frame(&mut rng)]).unwrap();
        let file = LandmarkFile::from_clip("vid_001", &clip);
        let back: LandmarkFile = serde_json::from_str(&file.to_json()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_clip(8).unwrap(), clip);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pt() -> impl Strategy<Value = Point> {
            (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y)| [x, y])
        }

        proptest! {
            #[test]
            fn mask_is_non_positive(r in prop::collection::vec(pt(), 1..10), p in prop::collection::vec(pt(), 1..10)) {
                let m = rpp_mask(&r, &p).unwrap();
                prop_assert!(m.entries().iter().all(|&v| v <= 0.0 && v.is_finite()));
            }

            #[test]
            fn mask_translation_invariant(r in prop::collection::vec(pt(), 1..10), p in prop::collection::vec(pt(), 1..10), shift in pt()) {
                let m = rpp_mask(&r, &p).unwrap();
                let r2: Vec<Point> = r.iter().map(|a| [a[0] + shift[0], a[1] + shift[1]]).collect();
                let p2: Vec<Point> = p.iter().map(|a| [a[0] + shift[0], a[1] + shift[1]]).collect();
                let m2 = rpp_mask(&r2, &p2).unwrap();
                for (a, b) in m.entries().iter().zip(m2.entries()) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }

            #[test]
            fn mask_monotone_in_distance(region in pt(), patch in pt(), dir in 0.0f64..(2.0 * PI), step in 0.01f64..5.0) {
                let m0 = rpp_mask(&[region], &[patch]).unwrap().entries()[[0, 0]];
                // push the region further along the ray from the patch
                let (dx, dy) = (region[0] - patch[0], region[1] - patch[1]);
                let len = dx.hypot(dy);
                let (ux, uy) = if len > 1e-9 { (dx / len, dy / len) } else { (dir.cos(), dir.sin()) };
                let farther = [region[0] + step * ux, region[1] + step * uy];
                let m1 = rpp_mask(&[farther], &[patch]).unwrap().entries()[[0, 0]];
                prop_assert!(m1 < m0);
            }
        }
    }
}
