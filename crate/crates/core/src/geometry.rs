//! Court coordinate frame, microphone array and named planar surfaces.
//!
//! Frame convention: origin sits in the corner where the front wall, the
//! floor and the left wall meet. The x axis runs across the front wall
//! (0..width), y runs from the front wall toward the back glass (0..depth),
//! z runs up from the floor (0..height). All five court surfaces are then
//! axis-aligned planes whose unit normals point into the court volume.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use thiserror::Error;

/// 3-vector in court coordinates, meters unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance_to(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

/// Identifiers for the five court surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceId {
    FrontWall,
    Floor,
    LeftWall,
    RightWall,
    BackGlass,
}

impl SurfaceId {
    pub const ALL: [SurfaceId; 5] = [
        SurfaceId::FrontWall,
        SurfaceId::Floor,
        SurfaceId::LeftWall,
        SurfaceId::RightWall,
        SurfaceId::BackGlass,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceId::FrontWall => "front_wall",
            SurfaceId::Floor => "floor",
            SurfaceId::LeftWall => "left_wall",
            SurfaceId::RightWall => "right_wall",
            SurfaceId::BackGlass => "back_glass",
        }
    }
}

impl fmt::Display for SurfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Infinite plane identified by a court surface name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NamedPlane {
    pub name: SurfaceId,
    pub point: Vec3,
    pub unit_normal: Vec3,
}

impl NamedPlane {
    /// Signed offset of `pos` from the plane, positive on the normal's side.
    pub fn offset(&self, pos: Vec3) -> f64 {
        (pos - self.point).dot(self.unit_normal)
    }

    /// Orthogonal projection of `pos` onto the plane.
    pub fn project(&self, pos: Vec3) -> Vec3 {
        pos - self.unit_normal * self.offset(pos)
    }
}

/// Signed distance of `pos` from `plane` along its unit normal.
pub fn plane_offset(pos: Vec3, plane: &NamedPlane) -> f64 {
    plane.offset(pos)
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("court dimensions must be positive, got {width} x {depth} x {height}")]
    InvalidDimensions { width: f64, depth: f64, height: f64 },
    #[error("microphone {id}: {reason}")]
    InvalidMicrophone { id: usize, reason: String },
    #[error("microphone array: {0}")]
    InvalidArray(String),
}

/// Axis-aligned court box with its five named boundary planes.
///
/// The back glass closes the box at y = depth; the ceiling is intentionally
/// not a named surface (nothing is classified against it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CourtDims", into = "CourtDims")]
pub struct CourtGeometry {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    surfaces: Vec<NamedPlane>,
}

/// Wire form of `CourtGeometry`: the dimensions alone. The surface planes
/// are derived, so they never appear in serialized form.
#[derive(Serialize, Deserialize)]
struct CourtDims {
    width: f64,
    depth: f64,
    height: f64,
}

impl TryFrom<CourtDims> for CourtGeometry {
    type Error = GeometryError;

    fn try_from(d: CourtDims) -> Result<Self, GeometryError> {
        CourtGeometry::new(d.width, d.depth, d.height)
    }
}

impl From<CourtGeometry> for CourtDims {
    fn from(g: CourtGeometry) -> Self {
        CourtDims { width: g.width, depth: g.depth, height: g.height }
    }
}

impl CourtGeometry {
    pub fn new(width: f64, depth: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0 && depth > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidDimensions { width, depth, height });
        }
        let surfaces = vec![
            NamedPlane {
                name: SurfaceId::FrontWall,
                point: Vec3::ZERO,
                unit_normal: Vec3::new(0.0, 1.0, 0.0),
            },
            NamedPlane {
                name: SurfaceId::Floor,
                point: Vec3::ZERO,
                unit_normal: Vec3::new(0.0, 0.0, 1.0),
            },
            NamedPlane {
                name: SurfaceId::LeftWall,
                point: Vec3::ZERO,
                unit_normal: Vec3::new(1.0, 0.0, 0.0),
            },
            NamedPlane {
                name: SurfaceId::RightWall,
                point: Vec3::new(width, 0.0, 0.0),
                unit_normal: Vec3::new(-1.0, 0.0, 0.0),
            },
            NamedPlane {
                name: SurfaceId::BackGlass,
                point: Vec3::new(0.0, depth, 0.0),
                unit_normal: Vec3::new(0.0, -1.0, 0.0),
            },
        ];
        Ok(CourtGeometry { width, depth, height, surfaces })
    }

    /// Standard singles court: 6.4 m wide, 9.75 m deep, 4.57 m of usable
    /// front-wall height.
    pub fn standard() -> Self {
        CourtGeometry::new(6.4, 9.75, 4.57).expect("standard dimensions are positive")
    }

    pub fn surfaces(&self) -> &[NamedPlane] {
        &self.surfaces
    }

    pub fn surface(&self, name: SurfaceId) -> &NamedPlane {
        self.surfaces
            .iter()
            .find(|p| p.name == name)
            .expect("all five surfaces exist by construction")
    }

    pub fn centroid(&self) -> Vec3 {
        Vec3::new(self.width / 2.0, self.depth / 2.0, self.height / 2.0)
    }

    /// Centroid of a named surface rectangle.
    pub fn surface_centroid(&self, name: SurfaceId) -> Vec3 {
        let c = self.centroid();
        let plane = self.surface(name);
        plane.project(c)
    }

    /// True when `pos` lies inside the box inflated by `margin` on all sides.
    pub fn contains(&self, pos: Vec3, margin: f64) -> bool {
        pos.x >= -margin
            && pos.x <= self.width + margin
            && pos.y >= -margin
            && pos.y <= self.depth + margin
            && pos.z >= -margin
            && pos.z <= self.height + margin
    }
}

/// Microphone directivity. Carried as metadata only; the timing model treats
/// all sensors identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicKind {
    Omnidirectional,
    Cardioid,
}

/// A single sensor: channel index, position, and the standard deviation of
/// its detection-time error in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microphone {
    pub id: usize,
    pub position: Vec3,
    #[serde(default = "default_mic_kind")]
    pub kind: MicKind,
    pub sigma: f64,
}

fn default_mic_kind() -> MicKind {
    MicKind::Omnidirectional
}

/// Euclidean distance from a court position to a microphone.
pub fn distance(pos: Vec3, mic: &Microphone) -> f64 {
    pos.distance_to(mic.position)
}

/// Ordered, synchronized microphone set plus the shared acoustic constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    pub mics: Vec<Microphone>,
    pub speed_of_sound: f64,
    pub sample_rate: f64,
}

impl MicArray {
    /// Default six-channel layout for a court box: three floor-level sensors
    /// (left-wall corners, right-wall midpoint) and three ceiling sensors
    /// mirrored across the court (right-wall corners, left-wall midpoint).
    /// The opposed diagonals keep the time-difference inversion well
    /// conditioned everywhere in the volume.
    ///
    /// `sigma` here is ten sample periods at 96 kHz, the nominal spread of
    /// detection-time error.
    pub fn default_for(geometry: &CourtGeometry) -> Self {
        let (w, d, h) = (geometry.width, geometry.depth, geometry.height);
        let sample_rate = 96_000.0;
        let sigma = 10.0 / sample_rate;
        let positions = [
            Vec3::new(0.05, 0.05, 0.05),
            Vec3::new(0.05, d - 0.05, 0.05),
            Vec3::new(w - 0.05, d / 2.0, 0.05),
            Vec3::new(w - 0.05, 0.05, h - 0.05),
            Vec3::new(w - 0.05, d - 0.05, h - 0.05),
            Vec3::new(0.05, d / 2.0, h - 0.05),
        ];
        let mics = positions
            .iter()
            .enumerate()
            .map(|(id, &position)| Microphone {
                id,
                position,
                kind: MicKind::Omnidirectional,
                sigma,
            })
            .collect();
        MicArray { mics, speed_of_sound: 343.0, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.mics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mics.is_empty()
    }

    pub fn mic(&self, id: usize) -> Option<&Microphone> {
        self.mics.get(id).filter(|m| m.id == id)
    }

    /// Checks array invariants; `geometry` bounds the admissible positions.
    pub fn validate(&self, geometry: &CourtGeometry) -> Result<(), GeometryError> {
        if self.speed_of_sound <= 0.0 {
            return Err(GeometryError::InvalidArray(format!(
                "speed of sound must be positive, got {}",
                self.speed_of_sound
            )));
        }
        if self.sample_rate <= 0.0 {
            return Err(GeometryError::InvalidArray(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.mics.len() < 3 {
            return Err(GeometryError::InvalidArray(format!(
                "need at least 3 microphones, got {}",
                self.mics.len()
            )));
        }
        for (slot, mic) in self.mics.iter().enumerate() {
            if mic.id != slot {
                return Err(GeometryError::InvalidArray(format!(
                    "channel ids must be contiguous from 0; slot {slot} holds id {}",
                    mic.id
                )));
            }
            if !(mic.sigma > 0.0) {
                return Err(GeometryError::InvalidMicrophone {
                    id: mic.id,
                    reason: format!("sigma must be positive, got {}", mic.sigma),
                });
            }
            if !geometry.contains(mic.position, 0.0) {
                return Err(GeometryError::InvalidMicrophone {
                    id: mic.id,
                    reason: format!("position {} outside the court box", mic.position),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mic_at(p: Vec3) -> Microphone {
        Microphone { id: 0, position: p, kind: MicKind::Omnidirectional, sigma: 1e-4 }
    }

    #[test]
    fn distance_matches_hand_values() {
        let m = mic_at(Vec3::ZERO);
        assert_eq!(distance(Vec3::new(3.0, 4.0, 0.0), &m), 5.0);
        assert_eq!(distance(Vec3::ZERO, &m), 0.0);
        assert_eq!(distance(Vec3::new(1.0, 2.0, 2.0), &m), 3.0);
    }

    #[test]
    fn plane_offset_sign_convention() {
        let geo = CourtGeometry::standard();
        let fw = geo.surface(SurfaceId::FrontWall);
        let on_plane = Vec3::new(3.2, 0.0, 1.0);
        assert_eq!(plane_offset(on_plane, fw), 0.0);
        assert_relative_eq!(
            plane_offset(on_plane + fw.unit_normal * 0.02, fw),
            0.02,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            plane_offset(on_plane - fw.unit_normal * 0.02, fw),
            -0.02,
            max_relative = 1e-12
        );
    }

    #[test]
    fn all_five_surfaces_present_with_unit_inward_normals() {
        let geo = CourtGeometry::standard();
        assert_eq!(geo.surfaces().len(), 5);
        let c = geo.centroid();
        for name in SurfaceId::ALL {
            let p = geo.surface(name);
            assert_eq!(p.name, name);
            assert!((p.unit_normal.norm() - 1.0).abs() < 1e-12);
            // Inward normal: the centroid sits on the positive side.
            assert!(p.offset(c) > 0.0, "{name} normal does not face the court");
        }
    }

    #[test]
    fn surface_centroid_lies_on_surface() {
        let geo = CourtGeometry::standard();
        for name in SurfaceId::ALL {
            let sc = geo.surface_centroid(name);
            assert!(geo.surface(name).offset(sc).abs() < 1e-12);
            assert!(geo.contains(sc, 0.0));
        }
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(CourtGeometry::new(0.0, 9.75, 4.57).is_err());
        assert!(CourtGeometry::new(6.4, -1.0, 4.57).is_err());
    }

    #[test]
    fn default_array_validates_and_is_well_spread() {
        let geo = CourtGeometry::standard();
        let array = MicArray::default_for(&geo);
        array.validate(&geo).unwrap();
        assert_eq!(array.len(), 6);
        // Sensors must not be coplanar in any axis: each coordinate spans a range.
        for axis in 0..3 {
            let vals: Vec<f64> = array
                .mics
                .iter()
                .map(|m| [m.position.x, m.position.y, m.position.z][axis])
                .collect();
            let span = vals.iter().cloned().fold(f64::MIN, f64::max)
                - vals.iter().cloned().fold(f64::MAX, f64::min);
            assert!(span > 1.0, "axis {axis} span {span} too small");
        }
    }

    #[test]
    fn validate_rejects_bad_arrays() {
        let geo = CourtGeometry::standard();
        let mut array = MicArray::default_for(&geo);
        array.mics[2].id = 5;
        assert!(array.validate(&geo).is_err());

        let mut array = MicArray::default_for(&geo);
        array.mics[0].sigma = 0.0;
        assert!(array.validate(&geo).is_err());

        let mut array = MicArray::default_for(&geo);
        array.mics[1].position = Vec3::new(-1.0, 0.0, 0.0);
        assert!(array.validate(&geo).is_err());

        let mut array = MicArray::default_for(&geo);
        array.speed_of_sound = 0.0;
        assert!(array.validate(&geo).is_err());
    }

    #[test]
    fn vec3_serde_uses_flat_arrays() {
        let v = Vec3::new(1.0, 2.5, -3.0);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[1.0,2.5,-3.0]");
        let back: Vec3 = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_triangle(
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
            c in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let (a, b, c) = (Vec3::from(a), Vec3::from(b), Vec3::from(c));
            let mb = mic_at(b);
            let ma = mic_at(a);
            prop_assert!((distance(a, &mb) - distance(b, &ma)).abs() < 1e-12);
            prop_assert!(a.distance_to(c) <= a.distance_to(b) + b.distance_to(c) + 1e-12);
        }

        #[test]
        fn plane_offset_linear_along_normal_invariant_across(
            s in -5.0f64..5.0,
            t in -5.0f64..5.0,
        ) {
            let geo = CourtGeometry::standard();
            let plane = geo.surface(SurfaceId::RightWall);
            // Any in-plane direction is orthogonal to the normal.
            let in_plane = Vec3::new(0.0, 1.0, 0.0);
            let base = plane.point + in_plane * t;
            let moved = base + plane.unit_normal * s;
            prop_assert!((plane_offset(moved, plane) - s).abs() < 1e-9);
        }
    }
}
