//! Synthetic dental arches: a U-shaped gum ridge built as a height field,
//! with raised tooth blocks whose bases form concave crease loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geom::Vec3;
use crate::mesh_io::{FaceLabels, TriangleMesh};

/// Grid cells across the ridge.
const CELLS_ACROSS: usize = 12;
/// First and last across-ridge grid lines covered by a tooth.
const TOOTH_ACROSS: (usize, usize) = (4, 8);
/// Ridge width relative to the arch radius.
const RIDGE_WIDTH: f64 = 0.3;
const GUM_HEIGHT: f64 = 0.01;
const TOOTH_HEIGHT: f64 = 0.1;
/// Flat gum cells kept at each end of the arch.
const END_CELLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub teeth: usize,
    /// 1-based tooth positions left flat.
    #[serde(default)]
    pub missing: Vec<u32>,
    pub max_faces: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticArch {
    pub mesh: TriangleMesh,
    pub labels: FaceLabels,
    /// Per tooth position, the faces inside its base loop (empty when
    /// missing).
    pub tooth_faces: Vec<Vec<usize>>,
}

/// Grid-aligned tooth footprint in vertex indices, inclusive.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    s: (usize, usize),
    r: (usize, usize),
    height: f64,
}

impl Footprint {
    fn contains_vertex(&self, i: usize, j: usize) -> bool {
        (self.s.0..=self.s.1).contains(&i) && (self.r.0..=self.r.1).contains(&j)
    }

    fn strictly_inside(&self, i: usize, j: usize) -> bool {
        i > self.s.0 && i < self.s.1 && j > self.r.0 && j < self.r.1
    }

    /// For a quad in a footprint corner, whether the diagonal from `(i, j)`
    /// to `(i + 1, j + 1)` passes through the corner's raised vertex.
    fn corner_diagonal(&self, i: usize, j: usize) -> Option<bool> {
        let s_end = i == self.s.0 || i + 1 == self.s.1;
        let r_end = j == self.r.0 || j + 1 == self.r.1;
        if !(s_end && r_end && self.contains_vertex(i, j) && self.contains_vertex(i + 1, j + 1)) {
            return None;
        }
        Some((i == self.s.0) == (j == self.r.0))
    }

    /// Raise of an interior vertex: `H * (1 - 0.3 q^2)` with `q` the
    /// normalized offset from the footprint centre.
    fn raise(&self, i: usize, j: usize) -> f64 {
        let half_s = (self.s.1 - self.s.0) as f64 / 2.0;
        let half_r = (self.r.1 - self.r.0) as f64 / 2.0;
        let u = (i as f64 - self.s.0 as f64 - half_s) / half_s;
        let v = (j as f64 - self.r.0 as f64 - half_r) / half_r;
        self.height * (1.0 - 0.3 * (u * u + v * v))
    }
}

/// Builds one arch. Faces inside a tooth's base loop carry its 1-based
/// position as label; everything else is gingiva (0). The label space is
/// `teeth + 1` classes whether or not a tooth is missing.
pub fn generate_synthetic_arch(spec: &ArchSpec) -> Result<SyntheticArch, HarnessError> {
    if spec.teeth == 0 {
        return Err(HarnessError::InvalidSpec(
            "an arch needs at least one tooth".into(),
        ));
    }
    if let Some(&p) = spec
        .missing
        .iter()
        .find(|&&p| p == 0 || p as usize > spec.teeth)
    {
        return Err(HarnessError::InvalidSpec(format!(
            "missing position {p} is outside 1..={}",
            spec.teeth
        )));
    }
    let cells_along = spec.max_faces / (2 * CELLS_ACROSS);
    let needed = 4 * spec.teeth + 2 * END_CELLS;
    if spec.max_faces < 200 || cells_along < needed {
        return Err(HarnessError::InvalidSpec(format!(
            "{} faces cannot hold {} teeth; need at least {}",
            spec.max_faces,
            spec.teeth,
            (2 * CELLS_ACROSS * needed).max(200)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = rng.random_range(0.95..1.05);
    let opening = rng.random_range(0.9..1.0) * std::f64::consts::PI;

    // split the interior cells into one slot per tooth, then shrink each
    // slot by a gap that varies with the seed
    let usable = cells_along - 2 * END_CELLS;
    let mut footprints = Vec::with_capacity(spec.teeth);
    for t in 0..spec.teeth {
        let lo = END_CELLS + usable * t / spec.teeth;
        let hi = END_CELLS + usable * (t + 1) / spec.teeth;
        let room = hi - lo;
        let gap_lo = 1 + rng.random_range(0..=(room - 3) / 3);
        let gap_hi = rng.random_range(0..=(room - 3) / 3);
        footprints.push(Footprint {
            s: (lo + gap_lo, hi - gap_hi),
            r: TOOTH_ACROSS,
            height: TOOTH_HEIGHT * rng.random_range(0.8..1.2),
        });
    }
    let present: Vec<bool> = (1..=spec.teeth as u32)
        .map(|p| !spec.missing.contains(&p))
        .collect();

    let (ns, nr) = (cells_along + 1, CELLS_ACROSS + 1);
    let mut vertices: Vec<Vec3> = Vec::with_capacity(ns * nr);
    for i in 0..ns {
        let theta = -opening / 2.0 + opening * i as f64 / cells_along as f64;
        for j in 0..nr {
            let r = 2.0 * j as f64 / CELLS_ACROSS as f64 - 1.0;
            let rho = radius * (1.0 + r * RIDGE_WIDTH / 2.0);
            let mut z = GUM_HEIGHT * (1.0 - r * r);
            for (fp, _) in footprints.iter().zip(&present).filter(|(_, &p)| p) {
                if fp.strictly_inside(i, j) {
                    z += fp.raise(i, j);
                }
            }
            vertices.push([rho * theta.sin(), -rho * theta.cos(), z]);
        }
    }

    let vid = |i: usize, j: usize| i * nr + j;
    let mut faces = Vec::with_capacity(2 * cells_along * CELLS_ACROSS);
    let mut labels = Vec::with_capacity(faces.capacity());
    let mut tooth_faces = vec![Vec::new(); spec.teeth];
    for i in 0..cells_along {
        for j in 0..CELLS_ACROSS {
            let owner = footprints.iter().enumerate().find(|(t, fp)| {
                present[*t] && fp.contains_vertex(i, j) && fp.contains_vertex(i + 1, j + 1)
            });
            let label = owner.map_or(0, |(t, _)| t as u32 + 1);
            // alternate the diagonal so the field has no directional bias,
            // except at footprint corners where it must run through the
            // raised vertex; wound so that normals point up
            let rising = footprints.iter().find_map(|fp| fp.corner_diagonal(i, j));
            let quad = if rising.unwrap_or((i + j) % 2 == 0) {
                [
                    [vid(i, j), vid(i + 1, j + 1), vid(i + 1, j)],
                    [vid(i, j), vid(i, j + 1), vid(i + 1, j + 1)],
                ]
            } else {
                [
                    [vid(i, j), vid(i, j + 1), vid(i + 1, j)],
                    [vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)],
                ]
            };
            for f in quad {
                if let Some((t, _)) = owner {
                    tooth_faces[t].push(faces.len());
                }
                faces.push(f);
                labels.push(label);
            }
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    let labels = FaceLabels::new(labels, spec.teeth as u32 + 1)?;
    Ok(SyntheticArch {
        mesh,
        labels,
        tooth_faces,
    })
}

/// Two unit squares meeting at a right-angle crease along the x axis, each
/// split into a `cells x cells` grid. Faces `0..2 cells^2` form the floor,
/// the rest the wall. With `convex` the wall hangs below the floor.
pub fn crease_plates(cells: usize, convex: bool) -> Result<TriangleMesh, HarnessError> {
    if cells == 0 {
        return Err(HarnessError::InvalidSpec(
            "crease plates need at least one cell".into(),
        ));
    }
    let n = cells + 1;
    let step = 1.0 / cells as f64;
    let down = if convex { -1.0 } else { 1.0 };
    let mut vertices = Vec::with_capacity(2 * n * n);
    // floor: (x, y, 0) with y >= 0; wall: (x, 0, z)
    for i in 0..n {
        for j in 0..n {
            vertices.push([i as f64 * step, j as f64 * step, 0.0]);
        }
    }
    for i in 0..n {
        for j in 1..n {
            vertices.push([i as f64 * step, 0.0, down * j as f64 * step]);
        }
    }
    let floor = |i: usize, j: usize| i * n + j;
    let wall = |i: usize, j: usize| {
        if j == 0 {
            floor(i, 0)
        } else {
            n * n + i * (n - 1) + (j - 1)
        }
    };
    let mut faces = Vec::with_capacity(4 * cells * cells);
    for i in 0..cells {
        for j in 0..cells {
            faces.push([floor(i, j), floor(i + 1, j), floor(i + 1, j + 1)]);
            faces.push([floor(i, j), floor(i + 1, j + 1), floor(i, j + 1)]);
        }
    }
    for i in 0..cells {
        for j in 0..cells {
            let quad = [
                wall(i, j),
                wall(i + 1, j),
                wall(i + 1, j + 1),
                wall(i, j + 1),
            ];
            // reverses the shared crease edge relative to the floor, so the
            // orientation stays consistent for either fold direction
            faces.push([quad[0], quad[2], quad[1]]);
            faces.push([quad[0], quad[3], quad[2]]);
        }
    }
    Ok(TriangleMesh::new(vertices, faces)?)
}
