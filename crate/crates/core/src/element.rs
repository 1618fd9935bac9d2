//! Bilinear (Q1) reference element on a square fine cell with 2×2 Gauss
//! quadrature.
//!
//! Local node order is tensor order: `(0,0), (1,0), (0,1), (1,1)`.
//! Quadrature point `q = qy * 2 + qx`.

pub const QUAD_PER_CELL: usize = 4;

const G0: f64 = 0.5 - 0.288_675_134_594_812_9; // 0.5 - 1/(2√3)
const G1: f64 = 0.5 + 0.288_675_134_594_812_9;

/// Reference coordinates of the quadrature points on `[0,1]²`.
pub const QUAD_POINTS: [(f64, f64); 4] = [(G0, G0), (G1, G0), (G0, G1), (G1, G1)];

/// Reference weights (sum to 1, the area of the reference square).
pub const QUAD_WEIGHT: f64 = 0.25;

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta]
}

/// Reference gradients `[dN/dξ, dN/dη]` of the four shape functions.
pub fn shape_grad(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [-eta, 1.0 - xi],
        [eta, xi],
    ]
}

/// Physical coordinates of quadrature point `q` in fine cell `(cx, cy)`.
pub fn quad_point_coords(cx: usize, cy: usize, q: usize, h: f64) -> (f64, f64) {
    let (xi, eta) = QUAD_POINTS[q];
    ((cx as f64 + xi) * h, (cy as f64 + eta) * h)
}

pub type ElementMatrix = [[f64; 4]; 4];

/// `∫ κ ∇N_b · ∇N_a` on a cell of side `h` (independent of `h` in 2D).
pub fn stiffness(kappa: &[f64; 4]) -> ElementMatrix {
    let mut ke = [[0.0; 4]; 4];
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let g = shape_grad(xi, eta);
        let w = QUAD_WEIGHT * kappa[q];
        for a in 0..4 {
            for b in 0..4 {
                ke[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    ke
}

/// `∫ N_a (b · ∇N_b)`; row `a` is the test function, column `b` the trial.
pub fn convection(velocity: &[[f64; 2]; 4], h: f64) -> ElementMatrix {
    let mut ne = [[0.0; 4]; 4];
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let n = shape(xi, eta);
        let g = shape_grad(xi, eta);
        let b = velocity[q];
        let w = QUAD_WEIGHT * h;
        for a in 0..4 {
            for c in 0..4 {
                ne[a][c] += w * n[a] * (b[0] * g[c][0] + b[1] * g[c][1]);
            }
        }
    }
    ne
}

/// Weighted mass `∫ ρ N_a N_b`.
pub fn mass(weight: &[f64; 4], h: f64) -> ElementMatrix {
    let mut me = [[0.0; 4]; 4];
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let n = shape(xi, eta);
        let w = QUAD_WEIGHT * h * h * weight[q];
        for a in 0..4 {
            for b in 0..4 {
                me[a][b] += w * n[a] * n[b];
            }
        }
    }
    me
}

/// Load `∫ f N_a`.
pub fn load(f: &[f64; 4], h: f64) -> [f64; 4] {
    let mut fe = [0.0; 4];
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let n = shape(xi, eta);
        for a in 0..4 {
            fe[a] += QUAD_WEIGHT * h * h * f[q] * n[a];
        }
    }
    fe
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_stiffness_by_hand() {
        // ∫∫ of bilinear shape gradient products on the unit square:
        // diagonal 2/3, edge neighbours -1/6, opposite corner -1/3.
        let ke = stiffness(&[1.0; 4]);
        let expected = [
            [2.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0],
            [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 6.0, -1.0 / 3.0, 2.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 2.0 / 3.0],
        ];
        for a in 0..4 {
            let row_sum: f64 = ke[a].iter().sum();
            assert!(row_sum.abs() < 1e-15);
            for b in 0..4 {
                assert!((ke[a][b] - expected[a][b]).abs() < 1e-15, "{a} {b}");
            }
        }
    }

    #[test]
    fn unit_mass_by_hand() {
        // ∫ N_a N_b on the unit square: 1/9 diagonal, 1/18 edge, 1/36 opposite.
        let me = mass(&[1.0; 4], 1.0);
        assert!((me[0][0] - 1.0 / 9.0).abs() < 1e-15);
        assert!((me[0][1] - 1.0 / 18.0).abs() < 1e-15);
        assert!((me[0][3] - 1.0 / 36.0).abs() < 1e-15);
        let total: f64 = me.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_convection_annihilates_constants() {
        let ne = convection(&[[0.7, -0.3]; 4], 0.1);
        for row in ne {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn load_integrates_constant() {
        let fe = load(&[2.0; 4], 0.5);
        assert!((fe.iter().sum::<f64>() - 0.5).abs() < 1e-15);
    }
}
