//! Shared identifier and planar-geometry types.
//!
//! All distances are meters. Powers are dBm and gains/losses are dB
//! throughout the crate; those stay plain `f64` with `_dbm`/`_db` naming.

use serde::{Deserialize, Serialize};

/// Identifier of a cell site (macro, pico or femto).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct CellId(pub u32);

/// Identifier of a user terminal.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct UserId(pub u32);

/// Identifier of a building.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct BuildingId(pub u32);

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cell{}", self.0)
    }
}

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "user{}", self.0)
    }
}

/// A point in the scenario plane, meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x_m: f64,
    pub y_m: f64,
}

impl Point {
    pub fn new(x_m: f64, y_m: f64) -> Self {
        Self { x_m, y_m }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        (dx * dx + dy * dy).sqrt()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point { x_m: v[0], y_m: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x_m, p.y_m]
    }
}

/// Axis-aligned rectangle, corner plus size, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_m: f64,
    pub y_m: f64,
    pub w_m: f64,
    pub h_m: f64,
}

impl Rect {
    pub fn new(x_m: f64, y_m: f64, w_m: f64, h_m: f64) -> Self {
        Self { x_m, y_m, w_m, h_m }
    }

    /// Containment test, boundary inclusive.
    pub fn contains(&self, p: &Point) -> bool {
        p.x_m >= self.x_m
            && p.x_m <= self.x_m + self.w_m
            && p.y_m >= self.y_m
            && p.y_m <= self.y_m + self.h_m
    }

    pub fn center(&self) -> Point {
        Point::new(self.x_m + self.w_m / 2.0, self.y_m + self.h_m / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_contains_is_boundary_inclusive() {
        let r = Rect::new(1.0, 2.0, 3.0, 4.0);
        assert!(r.contains(&Point::new(1.0, 2.0)));
        assert!(r.contains(&Point::new(4.0, 6.0)));
        assert!(r.contains(&Point::new(2.5, 3.0)));
        assert!(!r.contains(&Point::new(4.0001, 6.0)));
    }

    #[test]
    fn point_roundtrips_through_array_form() {
        let p = Point::new(1.5, -2.5);
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(j, "[1.5,-2.5]");
        let back: Point = serde_json::from_str(&j).unwrap();
        assert_eq!(back, p);
    }
}
