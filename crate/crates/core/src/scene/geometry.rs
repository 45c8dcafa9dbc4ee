//! Planar helpers: distances and arclength-parameterised paths.

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Polyline with cumulative arclength for interpolation.
#[derive(Debug, Clone)]
pub struct Path {
    pts: Vec<Point>,
    cum: Vec<f64>,
}

impl Path {
    /// Consecutive duplicate points are dropped. Needs at least two distinct points.
    pub fn new(points: &[Point]) -> Option<Self> {
        let mut pts: Vec<Point> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().is_none_or(|&q| dist(p, q) > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + dist(w[0], w[1]));
        }
        Some(Self { pts, cum })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    fn segment(&self, s: f64) -> usize {
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        }
    }

    /// Position and tangent heading at arclength `s`. Beyond either end the
    /// path continues along the end tangent.
    pub fn pose_at(&self, s: f64) -> (Point, f64) {
        let i = self.segment(s);
        let a = self.pts[i];
        let b = self.pts[i + 1];
        let seg = self.cum[i + 1] - self.cum[i];
        let u = (s - self.cum[i]) / seg;
        let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
        (p, (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Unit normal pointing left of the direction of travel at `s`.
    pub fn left_normal(&self, s: f64) -> Point {
        let (_, h) = self.pose_at(s);
        [-h.sin(), h.cos()]
    }

    /// Arclength of the point on the path closest to `p`.
    pub fn project(&self, p: Point) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let u = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + u * d[0], a[1] + u * d[1]];
            let dd = dist(p, q);
            if dd < best.0 {
                best = (dd, self.cum[i] + u * len2.sqrt());
            }
        }
        best.1
    }
}

/// Incremental builder for lane geometry made of straights and circular arcs.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    pts: Vec<Point>,
    heading: f64,
    step: f64,
}

impl PathBuilder {
    pub fn new(start: Point, heading: f64, step: f64) -> Self {
        Self { pts: vec![start], heading, step }
    }

    fn cursor(&self) -> Point {
        *self.pts.last().unwrap()
    }

    pub fn straight(mut self, len: f64) -> Self {
        let n = (len / self.step).ceil().max(1.0) as usize;
        let p0 = self.cursor();
        let (s, c) = self.heading.sin_cos();
        for k in 1..=n {
            let d = len * k as f64 / n as f64;
            self.pts.push([p0[0] + c * d, p0[1] + s * d]);
        }
        self
    }

    /// Circular arc; positive `angle` turns left.
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        let p0 = self.cursor();
        let side = angle.signum();
        let (s, c) = self.heading.sin_cos();
        let center = [p0[0] - side * s * radius, p0[1] + side * c * radius];
        let start = (p0[1] - center[1]).atan2(p0[0] - center[0]);
        let n = ((radius * angle.abs()) / self.step).ceil().max(2.0) as usize;
        for k in 1..=n {
            let a = start + angle * k as f64 / n as f64;
            self.pts.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        }
        self.heading += angle;
        self
    }

    pub fn end(&self) -> (Point, f64) {
        (self.cursor(), self.heading)
    }

    pub fn build(self) -> Vec<Point> {
        self.pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn left_turn_ends_where_expected() {
        let pts = PathBuilder::new([1.75, -8.0], FRAC_PI_2, 0.5).arc(9.75, FRAC_PI_2).build();
        let end = *pts.last().unwrap();
        assert!(dist(end, [-8.0, 1.75]) < 1e-9);
    }

    #[test]
    fn pose_interpolates_and_extrapolates() {
        let p = Path::new(&[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]).unwrap();
        assert_eq!(p.length(), 20.0);
        let (q, h) = p.pose_at(15.0);
        assert!(dist(q, [10.0, 5.0]) < 1e-12 && (h - FRAC_PI_2).abs() < 1e-12);
        let (q, _) = p.pose_at(-2.0);
        assert!(dist(q, [-2.0, 0.0]) < 1e-12);
        let (q, _) = p.pose_at(23.0);
        assert!(dist(q, [10.0, 13.0]) < 1e-12);
        assert!((p.project([4.0, 1.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_paths_rejected() {
        assert!(Path::new(&[[1.0, 1.0], [1.0, 1.0]]).is_none());
    }
}
