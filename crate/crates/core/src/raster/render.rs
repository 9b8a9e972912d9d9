//! Edge-function triangle rasterization with pixel-center sampling.
//!
//! A pixel `(x, y)` is covered when its center `(x + 0.5, y + 0.5)` is inside
//! the projected triangle. Every edge function is evaluated from a canonical
//! endpoint order, so two triangles sharing an edge compute exactly negated
//! values and the top-left rule assigns each boundary pixel to exactly one of
//! them. Row spans are located analytically and then snapped with the exact
//! per-pixel predicate, so span filling and per-pixel testing agree bit for bit.

use nalgebra::Vector3;

use super::{BinaryMask, DepthMap, LabelMap, RasterError};
use crate::geometry::{CameraIntrinsics, RigidTransform, TriangleMesh};

/// Triangles are clipped against this camera-space plane (meters).
pub const NEAR_PLANE: f64 = 1e-4;

/// A triangle in pixel coordinates with per-vertex inverse depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenTriangle {
    pub xy: [[f64; 2]; 3],
    pub inv_z: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    px: f64,
    py: f64,
    dx: f64,
    dy: f64,
    sign: f64,
    owned: bool,
}

impl Edge {
    fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        let d = [b[0] - a[0], b[1] - a[1]];
        let owned = d[1] < 0.0 || (d[1] == 0.0 && d[0] > 0.0);
        let (p, q, sign) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b, 1.0) } else { (b, a, -1.0) };
        Edge {
            px: p[0],
            py: p[1],
            dx: q[0] - p[0],
            dy: q[1] - p[1],
            sign,
            owned,
        }
    }

    #[inline]
    fn value(&self, qx: f64, qy: f64) -> f64 {
        self.sign * (self.dx * (qy - self.py) - self.dy * (qx - self.px))
    }

    #[inline]
    fn inside(&self, qx: f64, qy: f64) -> bool {
        let v = self.value(qx, qy);
        v > 0.0 || (v == 0.0 && self.owned)
    }
}

/// Rasterization setup of one triangle, positively oriented.
#[derive(Clone, Copy, Debug)]
pub struct TriangleSetup {
    edges: [Edge; 3],
    tri: ScreenTriangle,
    area: f64,
    rows: (i64, i64),
    cols: (i64, i64),
}

fn pixel_range(lo: f64, hi: f64, limit: u32) -> (i64, i64) {
    // Pixels whose centers lie in [lo, hi].
    let a = (lo - 0.5).ceil().clamp(-1.0, limit as f64) as i64;
    let b = (hi - 0.5).floor().clamp(-1.0, limit as f64) as i64;
    (a.max(0), b.min(limit as i64 - 1))
}

impl TriangleSetup {
    pub fn new(tri: &ScreenTriangle, width: u32, height: u32) -> Option<Self> {
        let [a, mut b, mut c] = tri.xy;
        let mut inv_z = tri.inv_z;
        if !a.iter().chain(b.iter()).chain(c.iter()).all(|v| v.is_finite()) {
            return None;
        }
        let area = Edge::new(a, b).value(c[0], c[1]);
        if area == 0.0 {
            return None;
        }
        if area < 0.0 {
            std::mem::swap(&mut b, &mut c);
            inv_z.swap(1, 2);
        }
        let edges = [Edge::new(b, c), Edge::new(c, a), Edge::new(a, b)];
        let area = edges[2].value(c[0], c[1]);
        if area <= 0.0 {
            return None;
        }
        let xs = [a[0], b[0], c[0]];
        let ys = [a[1], b[1], c[1]];
        let rows = pixel_range(
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            height,
        );
        let cols = pixel_range(
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            width,
        );
        if rows.0 > rows.1 || cols.0 > cols.1 {
            return None;
        }
        Some(Self {
            edges,
            tri: ScreenTriangle { xy: [a, b, c], inv_z },
            area,
            rows,
            cols,
        })
    }

    /// Exact coverage predicate for pixel `(x, y)`.
    #[inline]
    pub fn covers(&self, x: i64, y: i64) -> bool {
        let (qx, qy) = (x as f64 + 0.5, y as f64 + 0.5);
        self.edges.iter().all(|e| e.inside(qx, qy))
    }

    /// Calls `f(y, x0, x1)` for each covered inclusive row span.
    pub fn for_each_span(&self, mut f: impl FnMut(u32, u32, u32)) {
        for y in self.rows.0..=self.rows.1 {
            let qy = y as f64 + 0.5;
            let (mut lo, mut hi) = self.cols;
            for e in &self.edges {
                let inside = |x: i64| e.inside(x as f64 + 0.5, qy);
                let slope = -e.sign * e.dy;
                if slope == 0.0 {
                    if !inside(lo) {
                        hi = lo - 1;
                        break;
                    }
                    continue;
                }
                let root = e.px + e.dx * (qy - e.py) / e.dy;
                if slope > 0.0 {
                    // inside for x >= threshold
                    let mut i = ((root - 0.5).ceil().clamp((lo - 1) as f64, (hi + 1) as f64)) as i64;
                    i = i.clamp(lo, hi + 1);
                    while i > lo && inside(i - 1) {
                        i -= 1;
                    }
                    while i <= hi && !inside(i) {
                        i += 1;
                    }
                    lo = i;
                } else {
                    let mut i = ((root - 0.5).floor().clamp((lo - 1) as f64, (hi + 1) as f64)) as i64;
                    i = i.clamp(lo - 1, hi);
                    while i < hi && inside(i + 1) {
                        i += 1;
                    }
                    while i >= lo && !inside(i) {
                        i -= 1;
                    }
                    hi = i;
                }
                if lo > hi {
                    break;
                }
            }
            if lo <= hi {
                f(y as u32, lo as u32, hi as u32);
            }
        }
    }

    /// Perspective-correct camera-space depth at pixel center `(x, y)`.
    #[inline]
    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        let (qx, qy) = (x as f64 + 0.5, y as f64 + 0.5);
        let [a, b, c] = self.tri.xy;
        let w0 = (c[0] - b[0]) * (qy - b[1]) - (c[1] - b[1]) * (qx - b[0]);
        let w1 = (a[0] - c[0]) * (qy - c[1]) - (a[1] - c[1]) * (qx - c[0]);
        let w2 = (b[0] - a[0]) * (qy - a[1]) - (b[1] - a[1]) * (qx - a[0]);
        let sum = w0 + w1 + w2;
        let inv = (w0 * self.tri.inv_z[0] + w1 * self.tri.inv_z[1] + w2 * self.tri.inv_z[2]) / sum;
        1.0 / inv
    }

    pub fn area(&self) -> f64 {
        self.area
    }
}

/// Reusable buffers for projecting a mesh into screen triangles.
#[derive(Default)]
pub struct Projector {
    cam: Vec<Vector3<f64>>,
    screen: Vec<[f64; 2]>,
    tris: Vec<ScreenTriangle>,
}

impl Projector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Projects `mesh` posed by `obj_to_cam`, clipping at [`NEAR_PLANE`].
    pub fn project(&mut self, mesh: &TriangleMesh, obj_to_cam: &RigidTransform, k: &CameraIntrinsics) -> &[ScreenTriangle] {
        let rot = obj_to_cam.rotation_matrix();
        let t = *obj_to_cam.translation();
        self.cam.clear();
        self.screen.clear();
        self.tris.clear();
        for v in mesh.vertices() {
            let p = rot * v + t;
            self.cam.push(p);
            self.screen.push([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy]);
        }
        for tri in mesh.triangles() {
            let idx = [tri[0] as usize, tri[1] as usize, tri[2] as usize];
            let front = idx.map(|i| self.cam[i].z >= NEAR_PLANE);
            if front.iter().all(|&f| f) {
                self.tris.push(ScreenTriangle {
                    xy: idx.map(|i| self.screen[i]),
                    inv_z: idx.map(|i| 1.0 / self.cam[i].z),
                });
                continue;
            }
            if !front.iter().any(|&f| f) {
                continue;
            }
            // Sutherland-Hodgman against z = NEAR_PLANE. Crossing points are
            // computed from the lower-index endpoint so neighbors agree exactly.
            let mut poly: Vec<([f64; 2], f64)> = Vec::with_capacity(4);
            for e in 0..3 {
                let (i, j) = (idx[e], idx[(e + 1) % 3]);
                let (fi, fj) = (front[e], front[(e + 1) % 3]);
                if fi {
                    poly.push((self.screen[i], 1.0 / self.cam[i].z));
                }
                if fi != fj {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    let (pa, pb) = (self.cam[lo], self.cam[hi]);
                    let s = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
                    let p = pa + (pb - pa) * s;
                    let z = NEAR_PLANE;
                    poly.push(([k.fx * p.x / z + k.cx, k.fy * p.y / z + k.cy], 1.0 / z));
                }
            }
            for f in 1..poly.len().saturating_sub(1) {
                self.tris.push(ScreenTriangle {
                    xy: [poly[0].0, poly[f].0, poly[f + 1].0],
                    inv_z: [poly[0].1, poly[f].1, poly[f + 1].1],
                });
            }
        }
        &self.tris
    }
}

/// Object-to-camera transform from world poses.
pub fn object_to_camera(pose_world: &RigidTransform, cam_to_world: &RigidTransform) -> RigidTransform {
    cam_to_world.inverse().compose(pose_world)
}

/// Rasterizes `mesh` into `mask` (pixels are OR-ed in) and returns the covered
/// row range, if any.
pub fn rasterize_silhouette_into(
    projector: &mut Projector,
    mask: &mut BinaryMask,
    mesh: &TriangleMesh,
    obj_to_cam: &RigidTransform,
    k: &CameraIntrinsics,
) -> Option<(u32, u32)> {
    let (w, h) = mask.dimensions();
    let mut rows: Option<(u32, u32)> = None;
    for tri in projector.project(mesh, obj_to_cam, k) {
        if let Some(setup) = TriangleSetup::new(tri, w, h) {
            setup.for_each_span(|y, x0, x1| {
                mask.fill_span(y, x0, x1);
                rows = Some(match rows {
                    None => (y, y),
                    Some((a, b)) => (a.min(y), b.max(y)),
                });
            });
        }
    }
    rows
}

/// Silhouette of `mesh` at `pose_world` seen by the camera at `cam_to_world`.
/// No face culling: every triangle contributes.
pub fn render_silhouette(
    mesh: &TriangleMesh,
    pose_world: &RigidTransform,
    cam_to_world: &RigidTransform,
    k: &CameraIntrinsics,
) -> BinaryMask {
    let mut mask = BinaryMask::new(k.width, k.height);
    let mut projector = Projector::new();
    rasterize_silhouette_into(&mut projector, &mut mask, mesh, &object_to_camera(pose_world, cam_to_world), k);
    mask
}

fn rasterize_depth(
    projector: &mut Projector,
    mesh: &TriangleMesh,
    obj_to_cam: &RigidTransform,
    k: &CameraIntrinsics,
    mut write: impl FnMut(usize, f32),
) {
    let (w, h) = (k.width, k.height);
    for tri in projector.project(mesh, obj_to_cam, k) {
        if let Some(setup) = TriangleSetup::new(tri, w, h) {
            setup.for_each_span(|y, x0, x1| {
                let row = y as usize * w as usize;
                for x in x0..=x1 {
                    write(row + x as usize, setup.depth_at(x, y) as f32);
                }
            });
        }
    }
}

/// Nearest camera-space z per pixel; invalid where the mesh does not cover.
pub fn render_depth(
    mesh: &TriangleMesh,
    pose_world: &RigidTransform,
    cam_to_world: &RigidTransform,
    k: &CameraIntrinsics,
) -> DepthMap {
    let mut depth = DepthMap::new(k.width, k.height);
    let mut projector = Projector::new();
    let buf = depth.raw_mut();
    rasterize_depth(&mut projector, mesh, &object_to_camera(pose_world, cam_to_world), k, |i, z| {
        if z < buf[i] {
            buf[i] = z;
        }
    });
    depth
}

/// Flat-shaded grayscale render for feature comparisons: each face gets
/// `ambient + (255 - ambient) · |cos|` of the angle between its normal and the
/// view ray through its centroid; background is 0. Faces crossing the near
/// plane are skipped.
pub fn render_shaded(
    mesh: &TriangleMesh,
    pose_world: &RigidTransform,
    cam_to_world: &RigidTransform,
    k: &CameraIntrinsics,
    ambient: u8,
) -> image::GrayImage {
    let (w, h) = (k.width, k.height);
    let obj_to_cam = object_to_camera(pose_world, cam_to_world);
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| obj_to_cam.apply_point(v)).collect();
    let mut zbuf = vec![f64::INFINITY; k.pixel_count()];
    let mut img = image::GrayImage::new(w, h);
    for t in mesh.triangles() {
        let p = t.map(|i| cam[i as usize]);
        if p.iter().any(|v| v.z < NEAR_PLANE) {
            continue;
        }
        let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let c = (p[0] + p[1] + p[2]) / 3.0;
        let cos = if n.norm() > 0.0 && c.norm() > 0.0 { n.dot(&c).abs() / (n.norm() * c.norm()) } else { 0.0 };
        let shade = (ambient as f64 + (255 - ambient) as f64 * cos).round().clamp(0.0, 255.0) as u8;
        let tri = ScreenTriangle {
            xy: p.map(|v| [k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy]),
            inv_z: p.map(|v| 1.0 / v.z),
        };
        if let Some(setup) = TriangleSetup::new(&tri, w, h) {
            setup.for_each_span(|y, x0, x1| {
                for x in x0..=x1 {
                    let i = y as usize * w as usize + x as usize;
                    let z = setup.depth_at(x, y);
                    if z < zbuf[i] {
                        zbuf[i] = z;
                        img.put_pixel(x, y, image::Luma([shade]));
                    }
                }
            });
        }
    }
    img
}

/// An object to draw into a label map.
#[derive(Clone, Copy, Debug)]
pub struct LabelledObject<'a> {
    pub id: u16,
    pub mesh: &'a TriangleMesh,
    pub pose_world: RigidTransform,
}

/// Occlusion-aware id map: each pixel takes the id of the nearest covering
/// object, depth ties going to the smaller id.
pub fn render_label_map(
    objects: &[LabelledObject<'_>],
    cam_to_world: &RigidTransform,
    k: &CameraIntrinsics,
) -> Result<LabelMap, RasterError> {
    let mut order: Vec<&LabelledObject> = objects.iter().collect();
    order.sort_by_key(|o| o.id);
    for pair in order.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(RasterError::DuplicateObjectId(pair[0].id));
        }
    }
    if let Some(o) = order.iter().find(|o| o.id == 0) {
        return Err(RasterError::ReservedObjectId(o.id));
    }
    let mut labels = LabelMap::new(k.width, k.height);
    let mut zbuf = vec![f32::INFINITY; k.pixel_count()];
    let mut projector = Projector::new();
    let cam_inv = cam_to_world.inverse();
    for obj in order {
        let obj_to_cam = cam_inv.compose(&obj.pose_world);
        let ids = labels.ids_mut();
        rasterize_depth(&mut projector, obj.mesh, &obj_to_cam, k, |i, z| {
            // Ascending id order: a strict test keeps the smaller id on ties.
            if z < zbuf[i] {
                zbuf[i] = z;
                ids[i] = obj.id;
            }
        });
    }
    Ok(labels)
}
