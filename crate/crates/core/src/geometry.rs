//! Planar polygon helpers in level-0 pixel coordinates.

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn square(x: f64, y: f64, side: f64) -> Self {
        Self::new(x, y, x + side, y + side)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        )
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersect(other).area() > 0.0
    }
}

/// Signed shoelace area (positive for counter-clockwise in a y-up frame).
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

pub fn area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

pub fn bounding_box(poly: &[Point]) -> Rect {
    let mut r = Rect::new(
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for &[x, y] in poly {
        r.x0 = r.x0.min(x);
        r.y0 = r.y0.min(y);
        r.x1 = r.x1.max(x);
        r.y1 = r.y1.max(y);
    }
    r
}

/// Sutherland–Hodgman clip of an arbitrary polygon against a rectangle.
///
/// The clip window is convex, so the shoelace area of the output equals the
/// area of `poly ∩ rect` even when `poly` is concave (the output may then
/// contain zero-width bridges along the window boundary).
pub fn clip_to_rect(poly: &[Point], rect: &Rect) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }

    fn inside(p: Point, e: Edge) -> bool {
        match e {
            Edge::Left(x) => p[0] >= x,
            Edge::Right(x) => p[0] <= x,
            Edge::Bottom(y) => p[1] >= y,
            Edge::Top(y) => p[1] <= y,
        }
    }

    fn crossing(a: Point, b: Point, e: Edge) -> Point {
        match e {
            Edge::Left(x) | Edge::Right(x) => {
                let t = (x - a[0]) / (b[0] - a[0]);
                [x, a[1] + t * (b[1] - a[1])]
            }
            Edge::Bottom(y) | Edge::Top(y) => {
                let t = (y - a[1]) / (b[1] - a[1]);
                [a[0] + t * (b[0] - a[0]), y]
            }
        }
    }

    let mut output: Vec<Point> = poly.to_vec();
    for edge in [
        Edge::Left(rect.x0),
        Edge::Right(rect.x1),
        Edge::Bottom(rect.y0),
        Edge::Top(rect.y1),
    ] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(cur, edge), inside(prev, edge)) {
                (true, true) => output.push(cur),
                (true, false) => {
                    output.push(crossing(prev, cur, edge));
                    output.push(cur);
                }
                (false, true) => output.push(crossing(prev, cur, edge)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    output
}

/// Area of `poly ∩ rect`.
pub fn clipped_area(poly: &[Point], rect: &Rect) -> f64 {
    let bb = bounding_box(poly);
    if !bb.overlaps(rect) {
        return 0.0;
    }
    if bb.x0 >= rect.x0 && bb.x1 <= rect.x1 && bb.y0 >= rect.y0 && bb.y1 <= rect.y1 {
        return area(poly);
    }
    area(&clip_to_rect(poly, rect))
}

/// Even-odd point-in-polygon test.
pub fn contains_point(poly: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// True when no two non-adjacent edges touch. Quadratic in the vertex count.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Largest distance between two vertices.
pub fn max_vertex_distance(poly: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in poly.iter().enumerate() {
        for b in &poly[i + 1..] {
            best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
        }
    }
    best
}

/// Sorted x-coordinates where the horizontal line `y` crosses the polygon
/// boundary. Consecutive pairs bound the interior (even-odd rule).
pub fn scanline_crossings(poly: &[Point], y: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) {
            out.push(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
        }
        j = i;
    }
    out.sort_by(|p, q| p.total_cmp(q));
}
