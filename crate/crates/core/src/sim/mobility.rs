//! Random-waypoint mobility.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(rng.gen_range(0.0..=self.width), rng.gen_range(0.0..=self.height))
    }
}

/// Speed range in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

impl SpeedRange {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub position: Point,
    pub waypoint: Point,
    /// m/s for the current leg
    pub speed: f64,
}

impl Motion {
    pub fn spawn<R: Rng + ?Sized>(rng: &mut R, bounds: Bounds, speeds: SpeedRange) -> Self {
        let position = bounds.random_point(rng);
        let waypoint = bounds.random_point(rng);
        Self { position, waypoint, speed: speeds.draw(rng) }
    }
}

/// One step of random waypoint. A node sitting on its waypoint draws a new
/// waypoint and speed and stays put for this step; otherwise it moves
/// `speed * dt` toward the waypoint, stopping on it if closer than that.
pub fn move_node<R: Rng + ?Sized>(motion: &mut Motion, rng: &mut R, bounds: Bounds, speeds: SpeedRange, dt: f64) {
    let remaining = motion.position.distance(motion.waypoint);
    if remaining <= f64::EPSILON {
        motion.waypoint = bounds.random_point(rng);
        motion.speed = speeds.draw(rng);
        return;
    }
    let step = motion.speed * dt;
    if step >= remaining {
        motion.position = motion.waypoint;
    } else {
        let f = step / remaining;
        motion.position.x += (motion.waypoint.x - motion.position.x) * f;
        motion.position.y += (motion.waypoint.y - motion.position.y) * f;
    }
}
