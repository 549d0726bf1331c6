//! Symmetric quadrature rules on triangles with strictly interior nodes and
//! positive weights.
//!
//! Rules are stored in barycentric coordinates and normalized so the weights
//! sum to one; a rule therefore returns the *mean* of the integrand, and the
//! integral over a physical element is the mean times the element area.

use nalgebra::Point2;

use crate::mesh::Pt2;

/// A quadrature rule on the reference triangle, stored barycentrically.
#[derive(Debug, Clone)]
pub struct SimplexQuadrature {
    /// Barycentric node coordinates, each summing to one.
    pub nodes: Vec<[f64; 3]>,
    /// Positive weights summing to one.
    pub weights: Vec<f64>,
    /// Largest polynomial degree integrated exactly.
    pub degree: u32,
}

impl SimplexQuadrature {
    /// Three-point rule of degree 2 with strictly interior nodes (the
    /// midpoint rule uses boundary nodes, which the element-wise kernels
    /// must avoid).
    pub fn degree2() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        SimplexQuadrature {
            nodes: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Sixteen-point symmetric rule of degree 8. The constants solve the
    /// moment equations of the symmetry orbits to machine precision (they
    /// were refined far beyond f64 and rounded once).
    pub fn degree8() -> Self {
        const W0: f64 = 0.14431560767778717;
        const W1: f64 = 0.095091634267284625;
        const A1: f64 = 0.081414823414553688;
        const W2: f64 = 0.10321737053471825;
        const A2: f64 = 0.65886138449647959;
        const W3: f64 = 0.032458497623198080;
        const A3: f64 = 0.89890554336593805;
        const W4: f64 = 0.027230314174434994;
        const A4: f64 = 0.0083947774099576053;
        const B4: f64 = 0.26311282963463811;

        let mut nodes = vec![[1.0 / 3.0; 3]];
        let mut weights = vec![W0];
        for (w, a) in [(W1, A1), (W2, A2), (W3, A3)] {
            let b = 0.5 * (1.0 - a);
            for node in [[a, b, b], [b, a, b], [b, b, a]] {
                nodes.push(node);
                weights.push(w);
            }
        }
        let c4 = 1.0 - A4 - B4;
        for node in [
            [A4, B4, c4],
            [A4, c4, B4],
            [B4, A4, c4],
            [B4, c4, A4],
            [c4, A4, B4],
            [c4, B4, A4],
        ] {
            nodes.push(node);
            weights.push(W4);
        }
        SimplexQuadrature { nodes, weights, degree: 8 }
    }

    /// Number of quadrature nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// True if the rule has no nodes.
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Physical node positions on the triangle with vertices `p`.
    pub fn physical_nodes(&self, p: &[Pt2; 3]) -> Vec<Pt2> {
        self.nodes
            .iter()
            .map(|&[l0, l1, l2]| {
                Point2::new(
                    l0 * p[0].x + l1 * p[1].x + l2 * p[2].x,
                    l0 * p[0].y + l1 * p[1].y + l2 * p[2].y,
                )
            })
            .collect()
    }

    /// Mean of `f` over the triangle with vertices `p`; multiply by the
    /// element area to integrate.
    pub fn mean(&self, p: &[Pt2; 3], mut f: impl FnMut(Pt2) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&[l0, l1, l2], &w)| {
                let x = Point2::new(
                    l0 * p[0].x + l1 * p[1].x + l2 * p[2].x,
                    l0 * p[0].y + l1 * p[1].y + l2 * p[2].y,
                );
                w * f(x)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact mean of `x^i y^j` over the reference triangle (0,0),(1,0),(0,1):
    /// the integral is `i! j! / (i + j + 2)!` and the area is 1/2.
    fn monomial_mean(i: u32, j: u32) -> f64 {
        let fact = |n: u32| (1..=n as u64).product::<u64>() as f64;
        2.0 * fact(i) * fact(j) / fact(i + j + 2)
    }

    fn reference_triangle() -> [Pt2; 3] {
        [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ]
    }

    fn check_monomial_exactness(rule: &SimplexQuadrature) {
        let p = reference_triangle();
        for i in 0..=rule.degree {
            for j in 0..=(rule.degree - i) {
                let approx = rule.mean(&p, |x| x.x.powi(i as i32) * x.y.powi(j as i32));
                let exact = monomial_mean(i, j);
                assert!(
                    (approx - exact).abs() <= 1e-15 + 1e-14 * exact.abs(),
                    "x^{i} y^{j}: rule gives {approx}, exact {exact}"
                );
            }
        }
    }

    #[test]
    fn degree2_rule_is_exact_interior_and_positive() {
        let rule = SimplexQuadrature::degree2();
        assert_eq!(rule.len(), 3);
        check_monomial_exactness(&rule);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        for node in &rule.nodes {
            assert!(node.iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn degree8_rule_is_exact_interior_and_positive() {
        let rule = SimplexQuadrature::degree8();
        assert_eq!(rule.len(), 16);
        check_monomial_exactness(&rule);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        for node in &rule.nodes {
            assert!(node.iter().all(|&l| l > 1e-3), "node {node:?} too near the boundary");
            let s: f64 = node.iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degree8_rule_is_not_degree9() {
        // Guards against silently over-promising: the rule must fail some
        // degree-9 monomial, otherwise the stored degree is wrong.
        let rule = SimplexQuadrature::degree8();
        let p = reference_triangle();
        let worst = (0..=9u32)
            .map(|i| {
                let j = 9 - i;
                let approx = rule.mean(&p, |x| x.x.powi(i as i32) * x.y.powi(j as i32));
                (approx - monomial_mean(i, j)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst > 1e-9);
    }

    #[test]
    fn mean_is_affine_invariant() {
        let rule = SimplexQuadrature::degree8();
        // Integrate x^2 + y over a shifted, skewed triangle and compare with
        // the closed form obtained by mapping from the reference triangle.
        let p = [
            Point2::new(1.0, 2.0),
            Point2::new(3.0, 2.5),
            Point2::new(1.5, 4.0),
        ];
        let approx = rule.mean(&p, |x| x.x * x.x + x.y);
        // Map (u, v) -> p0 + u (p1 - p0) + v (p2 - p0) and integrate exactly.
        let exact_mean = {
            let rule_hi = SimplexQuadrature::degree8();
            let r = reference_triangle();
            rule_hi.mean(&r, |u| {
                let x = 1.0 + 2.0 * u.x + 0.5 * u.y;
                let y = 2.0 + 0.5 * u.x + 2.0 * u.y;
                x * x + y
            })
        };
        assert!((approx - exact_mean).abs() < 1e-13);
    }

    #[test]
    fn physical_nodes_stay_inside() {
        let rule = SimplexQuadrature::degree8();
        let p = [
            Point2::new(-1.0, -1.0),
            Point2::new(0.0, -1.0),
            Point2::new(-1.0, 0.0),
        ];
        for x in rule.physical_nodes(&p) {
            // Strictly inside the triangle: positive barycentrics.
            let det = 0.5;
            let l1 = ((x.x - p[0].x) * (p[2].y - p[0].y) - (x.y - p[0].y) * (p[2].x - p[0].x)) / (2.0 * det);
            let l2 = ((p[1].x - p[0].x) * (x.y - p[0].y) - (p[1].y - p[0].y) * (x.x - p[0].x)) / (2.0 * det);
            let l0 = 1.0 - l1 - l2;
            assert!(l0 > 0.0 && l1 > 0.0 && l2 > 0.0);
        }
    }
}
