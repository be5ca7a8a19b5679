//! Geometric forward-camera simulator.
//!
//! Vehicles are rectangles with numberplates centered on both bumpers. For
//! one ego camera the pipeline is:
//!
//! 1. rebuild each neighbour's rectangle from its front-bumper pose,
//! 2. move it into the camera frame and drop vehicles with no corner inside
//!    the field of view,
//! 3. flip vehicles facing the camera by pi so the plate in use is always
//!    on the edge that faces the camera, then reduce each vehicle to angular
//!    intervals for its box and its plate,
//! 4. resolve occlusion nearest-first ([`get_visible_lines`]),
//! 5. drop plates rotated too far to be read.

mod occlusion;

pub use occlusion::{get_visible_lines, visible_mask, Span};

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use thiserror::Error;

use crate::cpm::PerceivedObject;
use crate::geometry::{normalize_angle, Point, Pose};
use crate::trace::{Tick, VehicleId, VehicleState};

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("vehicle {0} box contains the camera origin")]
    Degenerate(VehicleId),
    #[error("candidates are not sorted by rear-bumper distance at position {0}")]
    Unsorted(usize),
    #[error("invalid perception config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionConfig {
    /// Half of the horizontal field of view, radians.
    pub fov_half_angle: f64,
    /// Corners farther than this from the camera are out of view, meters.
    pub max_range: f64,
    /// Plates rotated more than this relative to the camera are unreadable.
    pub max_plate_angle: f64,
    pub plate_width: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            fov_half_angle: 45f64.to_radians(),
            max_range: 100.0,
            max_plate_angle: 60f64.to_radians(),
            plate_width: 0.52,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.fov_half_angle) && self.fov_half_angle <= FRAC_PI_2) {
            return Err(PerceptionError::Config(format!(
                "fov_half_angle must be in (0, pi/2], got {}",
                self.fov_half_angle
            )));
        }
        for (name, v) in [
            ("max_range", self.max_range),
            ("max_plate_angle", self.max_plate_angle),
            ("plate_width", self.plate_width),
        ] {
            if !ok(v) {
                return Err(PerceptionError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Camera position and heading in the world frame. The camera sits on the
/// ego's front bumper and looks along its heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub x0: f64,
    pub y0: f64,
    pub beta0: f64,
}

impl CameraPose {
    pub fn new(x0: f64, y0: f64, beta0: f64) -> Self {
        CameraPose { x0, y0, beta0: normalize_angle(beta0) }
    }

    pub fn of(ego: &VehicleState) -> Self {
        CameraPose::new(ego.x, ego.y, ego.heading)
    }
}

/// World pose to camera frame: translate to the camera, rotate by
/// `-beta0`, and renormalize the heading.
pub fn to_camera_frame(cam: CameraPose, p: Pose) -> Pose {
    let (s, c) = cam.beta0.sin_cos();
    let dx = p.x - cam.x0;
    let dy = p.y - cam.y0;
    Pose::new(c * dx + s * dy, -s * dx + c * dy, normalize_angle(p.heading - cam.beta0))
}

/// Inverse of [`to_camera_frame`].
pub fn from_camera_frame(cam: CameraPose, p: Pose) -> Pose {
    let (s, c) = cam.beta0.sin_cos();
    Pose::new(cam.x0 + c * p.x - s * p.y, cam.y0 + s * p.x + c * p.y, normalize_angle(p.heading + cam.beta0))
}

/// A vehicle rectangle with its labelled points.
///
/// `a`/`b` are the front corners (left, right), `c`/`d` the rear ones
/// (right, left), `m`/`n` the plate ends on the rear edge, `g` the rear
/// bumper center and `f` the front bumper center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub a: Point,
    pub b: Point,
    pub c: Point,
    pub d: Point,
    pub m: Point,
    pub n: Point,
    pub g: Point,
    pub f: Point,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub plate_width: f64,
}

impl BoundingBox {
    /// Rectangle whose front edge is centered on `pose`, in whatever frame
    /// `pose` is expressed in.
    pub fn from_pose(pose: Pose, length: f64, width: f64, plate_width: f64) -> Self {
        let f = pose.position();
        let fwd = Point::from_angle(pose.heading);
        let left = fwd.perp();
        let half_w = left * (width / 2.0);
        let half_p = left * (plate_width.min(width) / 2.0);
        let g = f - fwd * length;
        BoundingBox {
            a: f + half_w,
            b: f - half_w,
            c: g - half_w,
            d: g + half_w,
            m: g + half_p,
            n: g - half_p,
            g,
            f,
            heading: pose.heading,
            length,
            width,
            plate_width,
        }
    }

    pub fn corners(&self) -> [Point; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn center(&self) -> Point {
        (self.f + self.g) * 0.5
    }

    /// Whether `p` lies inside or on the rectangle.
    pub fn contains(&self, p: Point) -> bool {
        let fwd = Point::from_angle(self.heading);
        let d = p - self.center();
        d.dot(fwd).abs() <= self.length / 2.0 && d.dot(fwd.perp()).abs() <= self.width / 2.0
    }
}

pub fn reconstruct_box(state: &VehicleState, plate_width: f64) -> BoundingBox {
    BoundingBox::from_pose(state.pose(), state.length, state.width, plate_width)
}

/// At least one corner inside the (closed) field of view and within range.
pub fn fov_relevant(corners: &[Point; 4], cfg: &PerceptionConfig) -> bool {
    corners.iter().any(|c| c.arg().abs() <= cfg.fov_half_angle && c.norm() <= cfg.max_range)
}

/// Rotates a camera-frame box by pi about its center when it faces the
/// camera, so that `m`, `n` and `g` describe the edge the camera sees.
pub fn normalize_heading(bx: BoundingBox) -> BoundingBox {
    if bx.heading.abs() <= FRAC_PI_2 {
        return bx;
    }
    let flipped = Pose::new(bx.g.x, bx.g.y, normalize_angle(bx.heading + PI));
    BoundingBox::from_pose(flipped, bx.length, bx.width, bx.plate_width)
}

pub fn heading_visible(heading_cam: f64, cfg: &PerceptionConfig) -> bool {
    heading_cam.abs() <= cfg.max_plate_angle
}

/// One candidate reduced to angular intervals as seen from the camera.
///
/// `[delta1, delta2]` is the box interval and `[rho1, rho2]` the plate
/// interval, with `delta1 <= rho1 <= rho2 <= delta2`. Angles live in
/// `[-pi, pi]`, except for a box straddling the camera's rear axis: then
/// `delta2` (and possibly the plate) run past `pi` and the interval wraps;
/// [`ProjectionView::box_spans`] splits such views on the flattened line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionView {
    pub vehicle_id: VehicleId,
    pub delta1: f64,
    pub delta2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub dist_g: f64,
    /// Camera-frame heading after [`normalize_heading`].
    pub heading: f64,
}

impl ProjectionView {
    /// Closed box interval(s) on `[-pi, pi]`.
    pub fn box_spans(&self) -> ([Span; 2], usize) {
        let (lo, hi) = (self.delta1, self.delta2);
        if hi <= PI {
            ([Span::closed(lo, hi), Span::EMPTY], 1)
        } else {
            ([Span::closed(lo, PI), Span::closed(-PI, hi - TAU)], 2)
        }
    }

    /// Open plate interval(s) on `[-pi, pi]`. Only the true ends are open;
    /// a cut at the seam keeps the seam point. A zero-width plate is kept
    /// as a single closed point.
    pub fn plate_spans(&self) -> ([Span; 2], usize) {
        let (mut lo, mut hi) = (self.rho1, self.rho2);
        if lo >= PI && hi > PI {
            lo -= TAU;
            hi -= TAU;
        }
        if lo == hi {
            return ([Span::closed(lo, hi), Span::EMPTY], 1);
        }
        if hi <= PI {
            ([Span::open(lo, hi), Span::EMPTY], 1)
        } else {
            (
                [
                    Span { lo, hi: PI, lo_open: true, hi_open: false },
                    Span { lo: -PI, hi: hi - TAU, lo_open: false, hi_open: true },
                ],
                2,
            )
        }
    }
}

/// Angular intervals of a camera-frame box that has already been passed
/// through [`normalize_heading`].
pub fn projection_angles(id: VehicleId, bx: &BoundingBox) -> Result<ProjectionView, PerceptionError> {
    if bx.contains(Point::ORIGIN) {
        return Err(PerceptionError::Degenerate(id));
    }
    let args = bx.corners().map(Point::arg);
    let mut lo = args.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = args.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // A convex box away from the origin subtends less than pi, so a wider
    // min/max span means the box wraps through the rear axis.
    let wraps = hi - lo > PI;
    let unwrap = |a: f64, base: f64| if wraps && a < base { a + TAU } else { a };
    if wraps {
        let smallest_upper = args.iter().copied().filter(|&a| a >= 0.0).fold(f64::INFINITY, f64::min);
        let largest_lower = args.iter().copied().filter(|&a| a < 0.0).fold(f64::NEG_INFINITY, f64::max);
        lo = smallest_upper;
        hi = largest_lower + TAU;
    }
    let pm = unwrap(bx.m.arg(), lo);
    let pn = unwrap(bx.n.arg(), lo);
    let rho1 = pm.min(pn).clamp(lo, hi);
    let rho2 = pm.max(pn).clamp(lo, hi);
    Ok(ProjectionView { vehicle_id: id, delta1: lo, delta2: hi, rho1, rho2, dist_g: bx.g.norm(), heading: bx.heading })
}

/// A neighbour that survived the field-of-view filter, with its view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub view: ProjectionView,
    pub state: VehicleState,
}

/// Steps 1-3: reconstruct, transform, filter by FOV, normalize, project,
/// and sort by rear-bumper distance (ties by id). Boxes enclosing the camera
/// are skipped.
pub fn project_candidates(ego: &VehicleState, neighbors: &[VehicleState], cfg: &PerceptionConfig) -> Vec<Candidate> {
    let cam = CameraPose::of(ego);
    let mut out: Vec<Candidate> = neighbors
        .iter()
        .filter(|n| n.id != ego.id)
        .filter_map(|n| {
            let pose = to_camera_frame(cam, n.pose());
            let bx = BoundingBox::from_pose(pose, n.length, n.width, cfg.plate_width);
            if !fov_relevant(&bx.corners(), cfg) {
                return None;
            }
            let view = projection_angles(n.id, &normalize_heading(bx)).ok()?;
            Some(Candidate { view, state: *n })
        })
        .collect();
    out.sort_by(|a, b| a.view.dist_g.total_cmp(&b.view.dist_g).then(a.view.vehicle_id.cmp(&b.view.vehicle_id)));
    out
}

/// Full pipeline: the vehicles whose plates the ego camera can read, with
/// their ground-truth poses, nearest first.
pub fn perceive(
    ego: &VehicleState,
    neighbors: &[VehicleState],
    cfg: &PerceptionConfig,
    tick: Tick,
) -> Vec<PerceivedObject> {
    let candidates = project_candidates(ego, neighbors, cfg);
    let views: Vec<ProjectionView> = candidates.iter().map(|c| c.view).collect();
    let mask = visible_mask(&views).expect("candidates are sorted");
    candidates
        .iter()
        .zip(mask)
        .filter(|(c, visible)| *visible && heading_visible(c.view.heading, cfg))
        .map(|(c, _)| PerceivedObject {
            plate: c.state.id,
            x: c.state.x,
            y: c.state.y,
            heading: c.state.heading,
            observed_tick: tick,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    fn close(a: Point, b: Point) -> bool {
        (a.x - b.x).abs() < EPS && (a.y - b.y).abs() < EPS
    }

    fn vs(id: u32, x: f64, y: f64, heading: f64) -> VehicleState {
        VehicleState { id: VehicleId(id), x, y, heading, length: 4.0, width: 2.0 }
    }

    #[test]
    fn reconstruct_axis_aligned() {
        let bx = reconstruct_box(&vs(0, 0.0, 0.0, 0.0), 0.52);
        assert!(close(bx.a, Point::new(0.0, 1.0)));
        assert!(close(bx.b, Point::new(0.0, -1.0)));
        assert!(close(bx.c, Point::new(-4.0, -1.0)));
        assert!(close(bx.d, Point::new(-4.0, 1.0)));
        assert!(close(bx.g, Point::new(-4.0, 0.0)));
        assert!(close(bx.m, Point::new(-4.0, 0.26)));
        assert!(close(bx.n, Point::new(-4.0, -0.26)));
    }

    #[test]
    fn reconstruct_rotates_about_front_bumper() {
        let base = reconstruct_box(&vs(0, 3.0, -2.0, 0.0), 0.52);
        let rot = reconstruct_box(&vs(0, 3.0, -2.0, FRAC_PI_2), 0.52);
        let f = Point::new(3.0, -2.0);
        for (p, q) in base.corners().iter().zip(rot.corners()) {
            let d = *p - f;
            assert!(close(f + d.perp(), q));
        }
    }

    #[test]
    fn camera_transform_examples() {
        let p = to_camera_frame(CameraPose::new(0.0, 0.0, 0.0), Pose::new(3.0, 4.0, 1.0));
        assert_eq!(p, Pose::new(3.0, 4.0, 1.0));
        let q = to_camera_frame(CameraPose::new(0.0, 0.0, FRAC_PI_2), Pose::new(0.0, 1.0, FRAC_PI_2));
        assert!((q.x - 1.0).abs() < EPS && q.y.abs() < EPS && q.heading.abs() < EPS);
        let cam = CameraPose::new(5.0, -3.0, 2.5);
        let w = Pose::new(-7.0, 11.0, -2.9);
        let back = from_camera_frame(cam, to_camera_frame(cam, w));
        assert!((back.x - w.x).abs() < 1e-9 && (back.y - w.y).abs() < 1e-9);
        assert!((normalize_angle(back.heading - w.heading)).abs() < 1e-9);
    }

    #[test]
    fn fov_examples() {
        let cfg = PerceptionConfig { fov_half_angle: PI / 4.0, ..Default::default() };
        let behind = [Point::new(-1.0, 0.0), Point::new(-2.0, 1.0), Point::new(-3.0, -1.0), Point::new(-0.5, 0.1)];
        assert!(!fov_relevant(&behind, &cfg));
        let on_axis = [Point::new(1.0, 0.0), Point::new(-2.0, 1.0), Point::new(-3.0, -1.0), Point::new(-0.5, 0.1)];
        assert!(fov_relevant(&on_axis, &cfg));
        let on_ray = [Point::new(10.0, 10.0), Point::new(-2.0, 1.0), Point::new(-3.0, -1.0), Point::new(-0.5, 0.1)];
        assert!(on_ray[0].arg() <= cfg.fov_half_angle);
        assert!(fov_relevant(&on_ray, &cfg));
        let far = [Point::new(200.0, 0.0); 4];
        assert!(!fov_relevant(&far, &cfg));
    }

    #[test]
    fn normalize_heading_examples() {
        let bx = BoundingBox::from_pose(Pose::new(10.0, 0.0, 0.0), 4.0, 2.0, 0.52);
        assert_eq!(normalize_heading(bx), bx);

        let facing = BoundingBox::from_pose(Pose::new(10.0, 0.0, PI), 4.0, 2.0, 0.52);
        let n = normalize_heading(facing);
        assert!(n.heading.abs() < EPS);
        // plate now on the formerly-front edge (x = 10), the edge facing us
        assert!(close(n.g, Point::new(10.0, 0.0)));
        assert!(close(n.f, facing.g));
        let same =
            |p: &BoundingBox, q: &BoundingBox| p.corners().iter().all(|c| q.corners().iter().any(|d| close(*c, *d)));
        assert!(same(&n, &facing));

        let slanted = BoundingBox::from_pose(Pose::new(10.0, 0.0, 0.6 * PI), 4.0, 2.0, 0.52);
        let n = normalize_heading(slanted);
        assert!((n.heading.abs() - 0.4 * PI).abs() < EPS);
        assert!(same(&n, &slanted));
    }

    #[test]
    fn projection_symmetric_box() {
        // corners (2,1),(4,1),(4,-1),(2,-1): heading pi flips to a box tailing us
        let bx = normalize_heading(BoundingBox::from_pose(Pose::new(2.0, 0.0, PI), 2.0, 2.0, 0.52));
        let v = projection_angles(VehicleId(1), &bx).unwrap();
        assert!((v.delta1 + 1f64.atan2(2.0)).abs() < EPS);
        assert!((v.delta2 - 1f64.atan2(2.0)).abs() < EPS);
        assert!((v.delta1 + v.delta2).abs() < EPS);
        assert!(v.delta1 < v.rho1 && v.rho1 < v.rho2 && v.rho2 < v.delta2);
        assert!((v.dist_g - 2.0).abs() < EPS);
    }

    #[test]
    fn projection_rejects_box_around_camera() {
        let bx = BoundingBox::from_pose(Pose::new(2.0, 0.0, 0.0), 4.0, 2.0, 0.52);
        assert_eq!(projection_angles(VehicleId(3), &bx), Err(PerceptionError::Degenerate(VehicleId(3))));
    }

    #[test]
    fn projection_wrapping_box() {
        // box behind the camera straddling its rear axis
        let bx = BoundingBox::from_pose(Pose::new(-5.0, -2.0, -FRAC_PI_2), 4.0, 1.0, 0.4);
        let v = projection_angles(VehicleId(0), &bx).unwrap();
        assert!(v.delta2 > PI && v.delta1 < PI);
        assert!(v.delta2 - v.delta1 < PI);
        assert!(v.delta1 <= v.rho1 && v.rho1 <= v.rho2 && v.rho2 <= v.delta2);
        let (spans, n) = v.box_spans();
        assert_eq!(n, 2);
        assert_eq!(spans[0].hi, PI);
        assert_eq!(spans[1].lo, -PI);
    }

    #[test]
    fn heading_filter() {
        let cfg = PerceptionConfig { max_plate_angle: PI / 3.0, ..Default::default() };
        assert!(heading_visible(0.0, &cfg));
        assert!(heading_visible(PI / 3.0, &cfg));
        assert!(heading_visible(-PI / 3.0, &cfg));
        assert!(!heading_visible(FRAC_PI_2, &cfg));
    }

    #[test]
    fn perceive_examples() {
        let cfg = PerceptionConfig::default();
        let ego = vs(0, 0.0, 0.0, 0.0);
        assert!(perceive(&ego, &[], &cfg, 0).is_empty());

        let ahead = vs(1, 20.0, 0.0, 0.0);
        let seen = perceive(&ego, &[ahead], &cfg, 4);
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].plate, VehicleId(1));
        assert_eq!((seen[0].x, seen[0].y, seen[0].observed_tick), (20.0, 0.0, 4));

        let further = vs(2, 40.0, 0.0, 0.0);
        let seen = perceive(&ego, &[further, ahead], &cfg, 0);
        assert_eq!(seen.iter().map(|o| o.plate).collect::<Vec<_>>(), vec![VehicleId(1)]);
    }

    #[test]
    fn oncoming_vehicle_shows_front_plate() {
        let cfg = PerceptionConfig::default();
        let ego = vs(0, 0.0, 0.0, 0.0);
        let oncoming = vs(1, 30.0, 0.0, PI);
        let seen = perceive(&ego, &[oncoming], &cfg, 0);
        assert_eq!(seen.len(), 1);
        let c = project_candidates(&ego, &[oncoming], &cfg);
        assert!((c[0].view.dist_g - 30.0).abs() < EPS);
    }

    #[test]
    fn config_validation() {
        assert!(PerceptionConfig::default().validate().is_ok());
        assert!(PerceptionConfig { fov_half_angle: 2.0, ..Default::default() }.validate().is_err());
        assert!(PerceptionConfig { plate_width: 0.0, ..Default::default() }.validate().is_err());
    }
}
