//! Binary images: rasterizing trajectories, thinning to skeletons, skeleton
//! graphs and snapping points onto a skeleton.

mod graph;
mod pgm;
mod thin;

pub use graph::{
    build_skeleton_graph, EdgeId, NodeId, NodeKind, PixelOwner, SkeletonEdge, SkeletonGraph, SkeletonNode,
};
pub use pgm::{read_pgm, write_pgm};
pub use thin::{extend_endpoints, remove_redundant_pixels, skeletonize, zhang_suen_thin};

use crate::trajectory::{PenTrajectory, Point};
use thiserror::Error;

/// Image side length used by the recognition pipeline.
pub const IMAGE_SIZE: usize = 64;
/// Default number of 3×3 dilation rounds applied after drawing.
pub const DEFAULT_THICKNESS: usize = 1;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image has no foreground pixels")]
    EmptyImage,
    #[error("image is not thin: pixel ({0}, {1}) has a full 3x3 neighborhood")]
    NotThin(usize, usize),
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-neighborhood offsets in clockwise order starting north.
pub(crate) const NEIGHBORS8: [(isize, isize); 8] =
    [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Binary image, row-major, `true` is foreground.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "RasterImage {}x{}", self.width, self.height)?;
        for y in 0..self.height {
            let row: String = (0..self.width)
                .map(|x| if self.get(x, y) { '#' } else { '.' })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self, RasterError> {
        if pixels.len() != width * height {
            return Err(RasterError::BadDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    /// Parses rows of `#`/`.` characters; handy for fixtures.
    pub fn from_ascii(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut img = Self::new(width, height);
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    img.set(x, y, true);
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.pixels[y * self.width + x]
    }

    /// Signed lookup; anything outside the image is background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = value;
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|p| **p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|p| *p)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS8
            .iter()
            .filter(|(dx, dy)| self.get_signed(x as isize + dx, y as isize + dy))
            .count()
    }

    /// One round of dilation with a 3×3 square structuring element.
    pub fn dilate(&self) -> Self {
        let mut out = self.clone();
        for (x, y) in self.foreground() {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx >= 0 && ny >= 0 {
                        out.set(nx as usize, ny as usize, true);
                    }
                }
            }
        }
        out
    }

    /// Labels 8-connected foreground components; returns per-pixel labels
    /// (`usize::MAX` for background) and the component count.
    pub fn label_components(&self) -> (Vec<usize>, usize) {
        let mut labels = vec![usize::MAX; self.pixels.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.pixels.len() {
            if !self.pixels[start] || labels[start] != usize::MAX {
                continue;
            }
            labels[start] = count;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % self.width) as isize, (i / self.width) as isize);
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x + dx, y + dy);
                    if self.get_signed(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if labels[j] == usize::MAX {
                            labels[j] = count;
                            stack.push(j);
                        }
                    }
                }
            }
            count += 1;
        }
        (labels, count)
    }

    pub fn component_count(&self) -> usize {
        self.label_components().1
    }

    /// True when no foreground pixel has an all-foreground 3×3 neighborhood.
    pub fn first_thick_pixel(&self) -> Option<(usize, usize)> {
        self.foreground().find(|&(x, y)| {
            NEIGHBORS8
                .iter()
                .all(|(dx, dy)| self.get_signed(x as isize + dx, y as isize + dy))
        })
    }
}

/// Pixel whose center is nearest to `p` (round half up).
pub fn pixel_of(p: Point) -> (isize, isize) {
    ((p.x + 0.5).floor() as isize, (p.y + 0.5).floor() as isize)
}

/// Calls `plot` for every pixel on the Bresenham line from `a` to `b`,
/// both ends included.
pub fn bresenham(a: (isize, isize), b: (isize, isize), mut plot: impl FnMut(isize, isize)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws consecutive points with Bresenham lines on a 64×64 canvas, then
/// applies `thickness` rounds of 3×3 dilation.
pub fn rasterize(traj: &PenTrajectory, thickness: usize) -> RasterImage {
    rasterize_sized(traj, thickness, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn rasterize_sized(traj: &PenTrajectory, thickness: usize, width: usize, height: usize) -> RasterImage {
    let mut img = RasterImage::new(width, height);
    let mut plot = |x: isize, y: isize| {
        if x >= 0 && y >= 0 {
            img.set(x as usize, y as usize, true);
        }
    };
    let pts = traj.points();
    for w in pts.windows(2) {
        bresenham(pixel_of(w[0]), pixel_of(w[1]), &mut plot);
    }
    for _ in 0..thickness {
        img = img.dilate();
    }
    img
}

/// Replaces every point with the center of its Euclidean-nearest skeleton
/// pixel. Ties go to the smaller `y`, then the smaller `x`.
pub fn snap_to_skeleton(points: &PenTrajectory, skel: &RasterImage) -> Result<PenTrajectory, RasterError> {
    let pixels: Vec<(usize, usize)> = skel.foreground().collect();
    if pixels.is_empty() {
        return Err(RasterError::EmptyImage);
    }
    let snapped = points
        .points()
        .iter()
        .map(|p| {
            let (x, y) = nearest_pixel(&pixels, *p);
            Point::new(x as f64, y as f64)
        })
        .collect::<Vec<_>>();
    let snapped = if points.is_normalized() {
        PenTrajectory::new_normalized(snapped.clone()).or_else(|_| PenTrajectory::new(snapped))
    } else {
        PenTrajectory::new(snapped)
    };
    Ok(snapped.expect("snapped points are finite and as many as the input"))
}

/// `pixels` must be in row-major order so the first strict minimum wins ties.
pub(crate) fn nearest_pixel(pixels: &[(usize, usize)], p: Point) -> (usize, usize) {
    let mut best = pixels[0];
    let mut best_d = f64::INFINITY;
    for &(x, y) in pixels {
        let dx = x as f64 - p.x;
        let dy = y as f64 - p.y;
        let d = dx * dx + dy * dy;
        if d < best_d {
            best_d = d;
            best = (x, y);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(pairs: &[(f64, f64)]) -> PenTrajectory {
        PenTrajectory::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn rasterize_single_point() {
        let t = traj(&[(5.0, 5.0), (5.0, 5.0)]);
        let img = rasterize(&t, 0);
        assert_eq!(img.foreground().collect::<Vec<_>>(), vec![(5, 5)]);
        let thick = rasterize(&t, 1);
        let mut expected = Vec::new();
        for y in 4..=6 {
            for x in 4..=6 {
                expected.push((x, y));
            }
        }
        assert_eq!(thick.foreground().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn rasterize_horizontal_segment() {
        let img = rasterize(&traj(&[(2.0, 10.0), (12.0, 10.0)]), 0);
        assert_eq!(img.count(), 11);
        assert!((2..=12).all(|x| img.get(x, 10)));
    }

    #[test]
    fn bresenham_is_8_connected_and_symmetric_in_count() {
        let mut fwd = Vec::new();
        bresenham((3, 7), (20, 12), |x, y| fwd.push((x, y)));
        let mut back = Vec::new();
        bresenham((20, 12), (3, 7), |x, y| back.push((x, y)));
        assert_eq!(fwd.len(), 18);
        assert_eq!(back.len(), 18);
        for w in fwd.windows(2) {
            assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }

    #[test]
    fn snap_examples() {
        let mut skel = RasterImage::new(10, 10);
        skel.set(5, 6, true);
        skel.set(0, 0, true);
        let s = snap_to_skeleton(&traj(&[(5.4, 5.6), (0.0, 0.0)]), &skel).unwrap();
        assert_eq!(s.points(), &[Point::new(5.0, 6.0), Point::new(0.0, 0.0)]);

        let mut skel = RasterImage::new(10, 10);
        skel.set(3, 3, true);
        skel.set(3, 4, true);
        let s = snap_to_skeleton(&traj(&[(3.0, 3.5), (3.0, 3.5)]), &skel).unwrap();
        assert_eq!(s.first(), Point::new(3.0, 3.0));
    }

    #[test]
    fn snap_empty_errors() {
        let skel = RasterImage::new(4, 4);
        assert!(matches!(
            snap_to_skeleton(&traj(&[(1.0, 1.0), (2.0, 2.0)]), &skel),
            Err(RasterError::EmptyImage)
        ));
    }

    #[test]
    fn component_labels() {
        let img = RasterImage::from_ascii(&["#..#", ".#..", "...#"]);
        assert_eq!(img.component_count(), 3);
    }
}
