//! Adaptive Gauss–Kronrod (7/15) quadrature on finite and half-infinite
//! intervals, plus nested 2- and 3-dimensional rules.

#![allow(clippy::excessive_precision)]

use std::collections::BinaryHeap;
use std::cmp::Ordering;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, bisecting the worst segment until the
/// summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    const MAX_SEGMENTS: usize = 2000;
    let mut heap = BinaryHeap::new();
    let (v, e) = gk15(&mut f, a, b);
    heap.push(Segment { a, b, value: v, error: e });
    let (mut total, mut err) = (v, e);
    let mut evaluations = 15;
    while err > abs_tol.max(rel_tol * total.abs()) && heap.len() < MAX_SEGMENTS {
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        evaluations += 30;
        total += v1 + v2 - seg.value;
        err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Quadrature { value, error, evaluations }
}

/// Integrates over `[a, ∞)` through the map `x = a + t/(1 − t)`.
pub fn integrate_semi_infinite(mut f: impl FnMut(f64) -> f64, a: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    integrate(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s);
            if v == 0.0 {
                0.0
            } else {
                v / (s * s)
            }
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

/// Nested 2-dimensional integral `∫_{a}^{b} ∫_{lo(x)}^{hi(x)} f(x, y) dy dx`.
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> f64,
    (a, b): (f64, f64),
    lo: impl Fn(f64) -> f64,
    hi: impl Fn(f64) -> f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let mut inner_evals = 0;
    let mut q = integrate(
        |x| {
            let inner = integrate(|y| f(x, y), lo(x), hi(x), abs_tol * 0.1, rel_tol * 0.1);
            inner_evals += inner.evaluations;
            inner.value
        },
        a,
        b,
        abs_tol,
        rel_tol,
    );
    q.evaluations += inner_evals;
    q
}

/// Nested 3-dimensional integral over a box.
pub fn integrate_box_3d(
    f: impl Fn(f64, f64, f64) -> f64,
    bounds: [(f64, f64); 3],
    abs_tol: f64,
    rel_tol: f64,
) -> Quadrature {
    let [bx, by, bz] = bounds;
    integrate(
        |x| {
            integrate_2d(|y, z| f(x, y, z), by, |_| bz.0, |_| bz.1, abs_tol * 0.1, rel_tol * 0.1).value
        },
        bx.0,
        bx.1,
        abs_tol,
        rel_tol,
    )
}
