//! Uniform cubic B-spline basis on one axis.

use nalgebra::DMatrix;

use crate::scalar::Real;

/// One axis of a uniform cubic B-spline: `count` basis functions whose
/// `count - 3` polynomial spans tile `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Axis<T> {
    pub lo: T,
    pub hi: T,
    pub count: usize,
}

/// Values (or a derivative of given order) of the four basis functions that
/// are nonzero on a span, at local coordinate `t ∈ [0, 1]`, in units of the
/// local coordinate.
pub(crate) fn span_basis<T: Real>(t: T, order: usize) -> [T; 4] {
    let six = T::lit(6.0);
    let one = T::one();
    let s = one - t;
    match order {
        0 => [
            s * s * s / six,
            (T::lit(3.0) * t * t * t - six * t * t + T::lit(4.0)) / six,
            (-T::lit(3.0) * t * t * t + T::lit(3.0) * t * t + T::lit(3.0) * t + one) / six,
            t * t * t / six,
        ],
        1 => [
            -s * s * T::lit(0.5),
            T::lit(1.5) * t * t - T::lit(2.0) * t,
            -T::lit(1.5) * t * t + t + T::lit(0.5),
            t * t * T::lit(0.5),
        ],
        2 => [s, T::lit(3.0) * t - T::lit(2.0), one - T::lit(3.0) * t, t],
        _ => panic!("basis derivative order {order} not supported"),
    }
}

impl<T: Real> Axis<T> {
    pub fn spans(&self) -> usize {
        self.count - 3
    }

    pub fn spacing(&self) -> T {
        (self.hi - self.lo) / T::from_count(self.spans())
    }

    /// Full knot vector, `count + 4` entries; the valid domain is
    /// `[knots[3], knots[count]]`.
    pub fn knots(&self) -> Vec<T> {
        let h = self.spacing();
        (0..self.count + 4)
            .map(|k| {
                if k == 3 {
                    self.lo
                } else if k == self.count {
                    self.hi
                } else {
                    self.lo + h * (T::from_count(k) - T::lit(3.0))
                }
            })
            .collect()
    }

    /// First basis index of the span containing `x`, and the local coordinate.
    pub fn locate(&self, x: T) -> (usize, T) {
        let scaled = (x - self.lo) / self.spacing();
        let last = self.spans() - 1;
        let span = scaled.floor().to_f64().map_or(0, |f| f.max(0.0) as usize).min(last);
        (span, scaled - T::from_count(span))
    }

    /// Nonzero basis values at `x` with derivative `order` taken with
    /// respect to `x`.
    pub fn eval(&self, x: T, order: usize) -> (usize, [T; 4]) {
        let (span, t) = self.locate(x);
        let mut b = span_basis(t, order);
        let scale = self.spacing().powi(-(order as i32));
        for v in &mut b {
            *v *= scale;
        }
        (span, b)
    }

    /// Gram matrix `G[i][k] = ∫ Bᵢ⁽ᵃ⁾ B_k⁽ᵇ⁾ dx` over the axis, exact by
    /// four-point Gauss–Legendre quadrature per span.
    pub fn gram(&self, a: usize, b: usize) -> DMatrix<T> {
        let nodes = [
            (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
            (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        ];
        let h = self.spacing();
        let mut g = DMatrix::zeros(self.count, self.count);
        for span in 0..self.spans() {
            for &(x, w) in &nodes {
                let t = T::lit(0.5 * (x + 1.0));
                let w = T::lit(0.5 * w) * h;
                let ba = span_basis(t, a);
                let bb = span_basis(t, b);
                let sa = h.powi(-(a as i32));
                let sb = h.powi(-(b as i32));
                for p in 0..4 {
                    for q in 0..4 {
                        g[(span + p, span + q)] += w * ba[p] * sa * bb[q] * sb;
                    }
                }
            }
        }
        g
    }
}
