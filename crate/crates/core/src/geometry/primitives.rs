//! Exact point/segment/triangle distance kernels used for pair
//! classification, embedding checks and `dist_to_set`.

use nalgebra::Vector3;

pub type Point = Vector3<f64>;

/// Closest point parameter of `p` on segment `[a, b]`, clamped to [0, 1].
pub fn segment_param(p: &Point, a: &Point, b: &Point) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let t = segment_param(p, a, b);
    (p - (a + (b - a) * t)).norm()
}

/// Minimum distance between segments [p1,q1] and [p2,q2].
/// Standard clamped closest-point computation (Ericson, Real-Time Collision
/// Detection, 5.1.9).
pub fn segment_segment_distance(p1: &Point, q1: &Point, p2: &Point, q2: &Point) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t);
    if a == 0.0 && e == 0.0 {
        return (p1 - p2).norm();
    }
    if a == 0.0 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e == 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut sv = if denom != 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut tv = (b * sv + f) / e;
            if tv < 0.0 {
                tv = 0.0;
                sv = (-c / a).clamp(0.0, 1.0);
            } else if tv > 1.0 {
                tv = 1.0;
                sv = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = sv;
            t = tv;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Closest point on triangle (a, b, c) to `p` (Ericson 5.1.5).
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_distance(p: &Point, a: &Point, b: &Point, c: &Point) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// True if segment [p, q] pierces the (closed) triangle.
fn segment_pierces_triangle(p: &Point, q: &Point, a: &Point, b: &Point, c: &Point) -> bool {
    let n = (b - a).cross(&(c - a));
    let dp = (p - a).dot(&n);
    let dq = (q - a).dot(&n);
    if dp * dq > 0.0 {
        return false;
    }
    let denom = dp - dq;
    if denom == 0.0 {
        // Coplanar; covered by the edge-distance terms.
        return false;
    }
    let t = dp / denom;
    let x = p + (q - p) * t;
    // Barycentric containment.
    let v0 = b - a;
    let v1 = c - a;
    let v2 = x - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    if den == 0.0 {
        return false;
    }
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    v >= 0.0 && w >= 0.0 && v + w <= 1.0
}

pub fn segment_triangle_distance(p: &Point, q: &Point, a: &Point, b: &Point, c: &Point) -> f64 {
    if segment_pierces_triangle(p, q, a, b, c) {
        return 0.0;
    }
    let mut d = point_triangle_distance(p, a, b, c).min(point_triangle_distance(q, a, b, c));
    for (u, v) in [(a, b), (b, c), (c, a)] {
        d = d.min(segment_segment_distance(p, q, u, v));
    }
    d
}

pub fn triangle_triangle_distance(t1: &[Point; 3], t2: &[Point; 3]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..3 {
        let j = (i + 1) % 3;
        d = d.min(segment_triangle_distance(
            &t1[i], &t1[j], &t2[0], &t2[1], &t2[2],
        ));
        d = d.min(segment_triangle_distance(
            &t2[i], &t2[j], &t1[0], &t1[1], &t1[2],
        ));
    }
    d
}

pub fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z)
    }

    #[test]
    fn point_segment_basic() {
        let d = point_segment_distance(&pt(0.5, 1.0, 0.0), &pt(0.0, 0.0, 0.0), &pt(1.0, 0.0, 0.0));
        assert_relative_eq!(d, 1.0);
        let d = point_segment_distance(&pt(2.0, 0.0, 0.0), &pt(0.0, 0.0, 0.0), &pt(1.0, 0.0, 0.0));
        assert_relative_eq!(d, 1.0);
    }

    #[test]
    fn segment_segment_crossing_and_parallel() {
        let d = segment_segment_distance(
            &pt(-1.0, 0.0, 0.0),
            &pt(1.0, 0.0, 0.0),
            &pt(0.0, -1.0, 1.0),
            &pt(0.0, 1.0, 1.0),
        );
        assert_relative_eq!(d, 1.0);
        let d = segment_segment_distance(
            &pt(0.0, 0.0, 0.0),
            &pt(1.0, 0.0, 0.0),
            &pt(0.0, 2.0, 0.0),
            &pt(1.0, 2.0, 0.0),
        );
        assert_relative_eq!(d, 2.0);
    }

    #[test]
    fn segment_piercing_triangle_gives_zero() {
        let d = segment_triangle_distance(
            &pt(0.2, 0.2, -1.0),
            &pt(0.2, 0.2, 1.0),
            &pt(0.0, 0.0, 0.0),
            &pt(1.0, 0.0, 0.0),
            &pt(0.0, 1.0, 0.0),
        );
        assert_relative_eq!(d, 0.0);
    }

    #[test]
    fn triangle_triangle_parallel_planes() {
        let t1 = [pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0), pt(0.0, 1.0, 0.0)];
        let t2 = [pt(0.0, 0.0, 0.5), pt(1.0, 0.0, 0.5), pt(0.0, 1.0, 0.5)];
        assert_relative_eq!(triangle_triangle_distance(&t1, &t2), 0.5);
    }
}
