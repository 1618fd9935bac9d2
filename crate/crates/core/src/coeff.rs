//! Diffusion and velocity fields sampled at fine-grid quadrature points.
//!
//! Analytic fields come from closed-form expressions; the high-contrast
//! permeability of the Darcy example is a cellwise raster, either loaded from
//! a text file or produced by a seeded generator, and the velocity is obtained
//! from a pressure solve.

use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::Triplet;
use faer::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::{self, QUAD_PER_CELL};
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::sparse::{self, Csc};

use std::f64::consts::PI;

/// A closed-form coefficient pair `(κ, b)`.
pub trait AnalyticField: Sync {
    fn kappa(&self, x: f64, y: f64) -> f64;
    fn velocity(&self, x: f64, y: f64) -> [f64; 2];
    /// `∂ₓb₁ + ∂ᵧb₂`, evaluated from the analytic derivatives.
    fn divergence(&self, x: f64, y: f64) -> f64;
}

/// Constant diffusion `1/200` with a cellular flow of wavenumber `18π`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Example1;

impl AnalyticField for Example1 {
    fn kappa(&self, _x: f64, _y: f64) -> f64 {
        1.0 / 200.0
    }

    fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        let w = 18.0 * PI;
        [(w * y).cos() * (w * x).sin(), -(w * x).cos() * (w * y).sin()]
    }

    fn divergence(&self, x: f64, y: f64) -> f64 {
        let w = 18.0 * PI;
        let d1 = w * (w * y).cos() * (w * x).cos();
        let d2 = -w * (w * x).cos() * (w * y).cos();
        d1 + d2
    }
}

/// Diffusion `1/2000`; velocity from the stream function
/// `H = sin(5πx) sin(6πy) / (60π) + 0.005 (x + y)` as `b = (-∂ᵧH, ∂ₓH)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Example2;

impl Example2 {
    pub fn stream(x: f64, y: f64) -> f64 {
        (5.0 * PI * x).sin() * (6.0 * PI * y).sin() / (60.0 * PI) + 0.005 * (x + y)
    }
}

impl AnalyticField for Example2 {
    fn kappa(&self, _x: f64, _y: f64) -> f64 {
        1.0 / 2000.0
    }

    fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        let hx = 5.0 * PI * (5.0 * PI * x).cos() * (6.0 * PI * y).sin() / (60.0 * PI) + 0.005;
        let hy = 6.0 * PI * (5.0 * PI * x).sin() * (6.0 * PI * y).cos() / (60.0 * PI) + 0.005;
        [-hy, hx]
    }

    fn divergence(&self, x: f64, y: f64) -> f64 {
        // ∂ₓ(-∂ᵧH) + ∂ᵧ(∂ₓH), each mixed partial written out
        let hxy = 30.0 * PI * PI * (5.0 * PI * x).cos() * (6.0 * PI * y).cos() / (60.0 * PI);
        let hyx = 30.0 * PI * PI * (5.0 * PI * x).cos() * (6.0 * PI * y).cos() / (60.0 * PI);
        -hyx + hxy
    }
}

pub fn field_example1() -> Example1 {
    Example1
}

pub fn field_example2() -> Example2 {
    Example2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Analytic,
    Raster,
    Darcy,
}

/// `κ` and `b` per fine quadrature point, indexed `fine_cell * 4 + q`.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    n_fine: usize,
    kappa: Vec<f64>,
    velocity: Vec<[f64; 2]>,
    source: FieldSource,
    kappa_min: f64,
    kappa_max: f64,
}

impl CoefficientField {
    pub fn new(mesh: &MeshHierarchy, kappa: Vec<f64>, velocity: Vec<[f64; 2]>, source: FieldSource) -> Result<Self> {
        let nq = mesh.n_fine_cells() * QUAD_PER_CELL;
        if kappa.len() != nq || velocity.len() != nq {
            return Err(Error::DimensionMismatch(format!(
                "expected {nq} quadrature samples, got kappa {} / velocity {}",
                kappa.len(),
                velocity.len()
            )));
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &k in &kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidParameter(format!("kappa must be positive, got {k}")));
            }
            lo = lo.min(k);
            hi = hi.max(k);
        }
        Ok(Self {
            n_fine: mesh.n_fine(),
            kappa,
            velocity,
            source,
            kappa_min: lo,
            kappa_max: hi,
        })
    }

    pub fn from_analytic(mesh: &MeshHierarchy, field: &dyn AnalyticField) -> Self {
        let points = quadrature_points(mesh);
        let kappa = points.iter().map(|&(x, y)| field.kappa(x, y)).collect();
        let velocity = points.iter().map(|&(x, y)| field.velocity(x, y)).collect();
        Self::new(mesh, kappa, velocity, FieldSource::Analytic).expect("analytic field is valid")
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn velocity(&self) -> &[[f64; 2]] {
        &self.velocity
    }

    pub fn source(&self) -> FieldSource {
        self.source
    }

    pub fn kappa_bounds(&self) -> (f64, f64) {
        (self.kappa_min, self.kappa_max)
    }

    pub fn contrast(&self) -> f64 {
        self.kappa_max / self.kappa_min
    }

    pub fn check_mesh(&self, mesh: &MeshHierarchy) -> Result<()> {
        if mesh.n_fine() != self.n_fine {
            return Err(Error::DimensionMismatch(format!(
                "field sampled on {}² fine cells, mesh has {}²",
                self.n_fine,
                mesh.n_fine()
            )));
        }
        Ok(())
    }

    /// `max |b| h / κ` over quadrature points.
    pub fn max_cell_peclet(&self, h: f64) -> f64 {
        self.kappa
            .iter()
            .zip(&self.velocity)
            .map(|(k, b)| (b[0] * b[0] + b[1] * b[1]).sqrt() * h / k)
            .fold(0.0, f64::max)
    }

    pub fn with_velocity(mut self, velocity: Vec<[f64; 2]>, source: FieldSource) -> Result<Self> {
        if velocity.len() != self.velocity.len() {
            return Err(Error::DimensionMismatch("velocity length".into()));
        }
        self.velocity = velocity;
        self.source = source;
        Ok(self)
    }
}

/// Physical coordinates of every quadrature point, `fine_cell * 4 + q`.
pub fn quadrature_points(mesh: &MeshHierarchy) -> Vec<(f64, f64)> {
    let n = mesh.n_fine();
    let h = mesh.h();
    let mut out = Vec::with_capacity(n * n * QUAD_PER_CELL);
    for cy in 0..n {
        for cx in 0..n {
            for q in 0..QUAD_PER_CELL {
                out.push(element::quad_point_coords(cx, cy, q, h));
            }
        }
    }
    out
}

/// Axis-aligned box `[x0,x1] × [y0,y1]` carrying a constant value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxTerm {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub value: f64,
}

/// Piecewise-constant scalar field: a constant plus box indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub constant: f64,
    pub boxes: Vec<BoxTerm>,
}

impl Source {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            boxes: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Unit load on `[0, 0.1]²`.
    pub fn example3_load() -> Self {
        Self {
            constant: 0.0,
            boxes: vec![BoxTerm {
                lo: [0.0, 0.0],
                hi: [0.1, 0.1],
                value: 1.0,
            }],
        }
    }

    /// Injection `+1` on `[0, 0.1]²`, extraction `-1` on `[0.9, 1]²`.
    pub fn example3_darcy_source() -> Self {
        Self {
            constant: 0.0,
            boxes: vec![
                BoxTerm {
                    lo: [0.0, 0.0],
                    hi: [0.1, 0.1],
                    value: 1.0,
                },
                BoxTerm {
                    lo: [0.9, 0.9],
                    hi: [1.0, 1.0],
                    value: -1.0,
                },
            ],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            constant: self.constant * factor,
            boxes: self
                .boxes
                .iter()
                .map(|b| BoxTerm {
                    value: b.value * factor,
                    ..*b
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = self.constant;
        for b in &self.boxes {
            if x >= b.lo[0] && x <= b.hi[0] && y >= b.lo[1] && y <= b.hi[1] {
                v += b.value;
            }
        }
        v
    }

    pub fn sample(&self, mesh: &MeshHierarchy) -> Vec<f64> {
        quadrature_points(mesh)
            .into_iter()
            .map(|(x, y)| self.eval(x, y))
            .collect()
    }

    /// Quadrature integral over Ω.
    pub fn integral(&self, mesh: &MeshHierarchy) -> f64 {
        let h = mesh.h();
        self.sample(mesh).iter().sum::<f64>() * element::QUAD_WEIGHT * h * h
    }
}

/// Positive cellwise raster, `rows × cols`, row-major. Row 0 is the bottom
/// (`y` near 0), column 0 the left edge.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RasterField {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "raster {rows}x{cols} with {} values",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "raster value must be positive, got {bad}"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn uniform(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Nearest-neighbour value for each fine cell, `cy * n_fine + cx`.
    pub fn sample_fine_cells(&self, mesh: &MeshHierarchy) -> Vec<f64> {
        let n = mesh.n_fine();
        let mut out = Vec::with_capacity(n * n);
        for cy in 0..n {
            let row = ((cy as f64 + 0.5) / n as f64 * self.rows as f64) as usize;
            for cx in 0..n {
                let col = ((cx as f64 + 0.5) / n as f64 * self.cols as f64) as usize;
                out.push(self.get(row.min(self.rows - 1), col.min(self.cols - 1)));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::RasterParse {
            line: 1,
            detail: "empty file".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::RasterParse {
                line: hline + 1,
                detail: e.to_string(),
            })?;
        if dims.len() != 2 {
            return Err(Error::RasterParse {
                line: hline + 1,
                detail: "expected `n_rows n_cols`".into(),
            });
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1]);
        for (ln, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::RasterParse {
                    line: ln + 1,
                    detail: format!("bad number `{tok}`"),
                })?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::RasterParse {
                        line: ln + 1,
                        detail: format!("value must be positive, got {tok}"),
                    });
                }
                values.push(v);
            }
        }
        if values.len() != dims[0] * dims[1] {
            return Err(Error::RasterParse {
                line: 0,
                detail: format!("expected {} values, found {}", dims[0] * dims[1], values.len()),
            });
        }
        Self::new(dims[0], dims[1], values)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows, self.cols);
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| format!("{:.17e}", self.get(r, c))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub const DEFAULT_RASTER_SIZE: usize = 200;

/// Seeded high-contrast permeability on a 200×200 raster: background 1 with
/// meandering channels and rectangular inclusions at `contrast`.
pub fn generate_channelized_k(seed: u64, contrast: f64) -> Result<RasterField> {
    generate_channelized_k_sized(seed, contrast, DEFAULT_RASTER_SIZE)
}

pub fn generate_channelized_k_sized(seed: u64, contrast: f64, n: usize) -> Result<RasterField> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "contrast must be >= 1, got {contrast}"
        )));
    }
    if n < 10 {
        return Err(Error::InvalidParameter(format!("raster size {n} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![1.0; n * n];
    let scale = |frac: f64| ((frac * n as f64).round() as usize).max(1);

    let n_channels = rng.random_range(3..=5);
    for _ in 0..n_channels {
        let width = scale(rng.random_range(0.01..0.025));
        let mut y = rng.random_range(scale(0.1)..n - scale(0.1)) as i64;
        for x in 0..n {
            if x % scale(0.02) == 0 {
                y += rng.random_range(-(scale(0.015) as i64)..=scale(0.015) as i64);
                y = y.clamp(0, (n - width) as i64);
            }
            for dy in 0..width {
                values[(y as usize + dy) * n + x] = contrast;
            }
        }
    }

    let n_inclusions = rng.random_range(6..=10);
    for _ in 0..n_inclusions {
        let w = rng.random_range(scale(0.02)..=scale(0.06));
        let hgt = rng.random_range(scale(0.02)..=scale(0.06));
        let x0 = rng.random_range(0..n - w);
        let y0 = rng.random_range(0..n - hgt);
        for yy in y0..y0 + hgt {
            for xx in x0..x0 + w {
                values[yy * n + xx] = contrast;
            }
        }
    }
    RasterField::new(n, n, values)
}

/// Velocity `b = -K ∇p` of the Darcy system `K⁻¹ b = -∇p`, `∇·b = q` with
/// no-flux boundary and zero-mean pressure, evaluated at quadrature points.
pub fn darcy_velocity(mesh: &MeshHierarchy, k: &RasterField, q: &Source) -> Result<Vec<[f64; 2]>> {
    Ok(darcy_solve(mesh, k, q)?.velocity)
}

/// Pressure (per fine vertex) and velocity (per quadrature point).
pub struct DarcySolution {
    pub pressure: Vec<f64>,
    pub velocity: Vec<[f64; 2]>,
}

pub fn darcy_solve(mesh: &MeshHierarchy, k: &RasterField, q: &Source) -> Result<DarcySolution> {
    let integral = q.integral(mesh);
    if integral.abs() > 1e-12 {
        return Err(Error::IncompatibleSource { integral });
    }
    let n = mesh.n_fine();
    let h = mesh.h();
    let nv = mesh.n_fine_vertices();
    let k_cells = k.sample_fine_cells(mesh);
    let q_samples = q.sample(mesh);
    let unit = element::stiffness(&[1.0; 4]);

    // vertex 0 is pinned; unknown index = vertex - 1
    let mut trip = Vec::with_capacity(n * n * 16);
    let mut rhs = vec![0.0; nv - 1];
    for cy in 0..n {
        for cx in 0..n {
            let fc = mesh.fine_cell_index(cx, cy);
            let verts = mesh.fine_cell_vertices(cx, cy);
            let kc = k_cells[fc];
            let mut fq = [0.0; 4];
            fq.copy_from_slice(&q_samples[fc * 4..fc * 4 + 4]);
            let fe = element::load(&fq, h);
            for a in 0..4 {
                if verts[a] == 0 {
                    continue;
                }
                rhs[verts[a] - 1] += fe[a];
                for b in 0..4 {
                    if verts[b] == 0 {
                        continue;
                    }
                    trip.push(Triplet::new(verts[a] - 1, verts[b] - 1, kc * unit[a][b]));
                }
            }
        }
    }
    let mat: Csc = sparse::from_triplets(nv - 1, nv - 1, &trip);
    let llt = mat.sp_cholesky(Side::Lower).map_err(|e| Error::Factorization {
        context: "darcy pressure".into(),
        detail: format!("{e:?}"),
    })?;
    let mut x = faer::Mat::from_fn(nv - 1, 1, |i, _| rhs[i]);
    llt.solve_in_place(x.as_mut());
    let reduced: Vec<f64> = (0..nv - 1).map(|i| x[(i, 0)]).collect();
    let residual = sparse::norm(
        &sparse::matvec(&mat, &reduced)
            .iter()
            .zip(&rhs)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let scale = sparse::norm(&rhs).max(f64::MIN_POSITIVE);
    if residual > 1e-8 * scale {
        return Err(Error::Residual {
            context: "darcy pressure".into(),
            residual: residual / scale,
        });
    }

    let mut pressure = Vec::with_capacity(nv);
    pressure.push(0.0);
    pressure.extend_from_slice(&reduced);

    // zero mean: ∫p = Σ over cells of the bilinear average
    let mut mean = 0.0;
    for cy in 0..n {
        for cx in 0..n {
            let verts = mesh.fine_cell_vertices(cx, cy);
            mean += verts.iter().map(|&v| pressure[v]).sum::<f64>() * 0.25 * h * h;
        }
    }
    for p in &mut pressure {
        *p -= mean;
    }

    let mut velocity = Vec::with_capacity(n * n * QUAD_PER_CELL);
    for cy in 0..n {
        for cx in 0..n {
            let fc = mesh.fine_cell_index(cx, cy);
            let verts = mesh.fine_cell_vertices(cx, cy);
            for &(xi, eta) in &element::QUAD_POINTS {
                let g = element::shape_grad(xi, eta);
                let mut grad = [0.0; 2];
                for a in 0..4 {
                    grad[0] += pressure[verts[a]] * g[a][0] / h;
                    grad[1] += pressure[verts[a]] * g[a][1] / h;
                }
                velocity.push([-k_cells[fc] * grad[0], -k_cells[fc] * grad[1]]);
            }
        }
    }
    Ok(DarcySolution { pressure, velocity })
}

/// Example-3 coefficients: `κ = 1/20` with the Darcy velocity through `k`.
pub fn field_example3(mesh: &MeshHierarchy, k: &RasterField) -> Result<CoefficientField> {
    let velocity = darcy_velocity(mesh, k, &Source::example3_darcy_source())?;
    let nq = mesh.n_fine_cells() * QUAD_PER_CELL;
    CoefficientField::new(mesh, vec![1.0 / 20.0; nq], velocity, FieldSource::Darcy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_points(count: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..count).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
    }

    #[test]
    fn example1_values() {
        let f = field_example1();
        assert_eq!(f.kappa(0.25, 0.25), 0.005);
        let b = f.velocity(1.0 / 36.0, 0.0);
        assert!((b[0] - 1.0).abs() < 1e-15 && b[1].abs() < 1e-15);
    }

    #[test]
    fn example2_values() {
        let f = field_example2();
        assert_eq!(f.kappa(0.3, 0.9), 5e-4);
        let b = f.velocity(0.0, 0.0);
        assert!((b[0] + 0.005).abs() < 1e-15);
    }

    #[test]
    fn analytic_divergence_vanishes() {
        for (x, y) in rng_points(1000) {
            assert!(field_example1().divergence(x, y).abs() <= 1e-12);
            assert!(field_example2().divergence(x, y).abs() <= 1e-12);
        }
    }

    #[test]
    fn analytic_divergence_matches_finite_differences() {
        // central differences of the sampled velocity agree with the zero divergence
        let eps = 1e-6;
        for f in [&Example1 as &dyn AnalyticField, &Example2] {
            for (x, y) in rng_points(50) {
                let dx = (f.velocity(x + eps, y)[0] - f.velocity(x - eps, y)[0]) / (2.0 * eps);
                let dy = (f.velocity(x, y + eps)[1] - f.velocity(x, y - eps)[1]) / (2.0 * eps);
                assert!((dx + dy).abs() < 1e-5, "{}", dx + dy);
            }
        }
    }

    #[test]
    fn example3_sources() {
        let mesh = MeshHierarchy::new(10, 4).unwrap();
        assert!(Source::example3_darcy_source().integral(&mesh).abs() < 1e-15);
        assert!((Source::example3_load().integral(&mesh) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn generator_degenerate_and_deterministic() {
        let ones = generate_channelized_k(0, 1.0).unwrap();
        assert!(ones.values().iter().all(|&v| v == 1.0));
        let a = generate_channelized_k(42, 1e4).unwrap();
        let b = generate_channelized_k(42, 1e4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max() / a.min(), 1e4);
        assert!(generate_channelized_k(1, 0.5).is_err());
    }

    #[test]
    fn raster_text_roundtrip() {
        let r = generate_channelized_k_sized(3, 10.0, 20).unwrap();
        let back = RasterField::parse(&r.to_text()).unwrap();
        assert_eq!(r, back);
        assert!(RasterField::parse("2 2\n1 2 3\n").is_err());
        assert!(RasterField::parse("1 2\n1 -2\n").is_err());
    }

    #[test]
    fn darcy_zero_source_gives_zero_velocity() {
        let mesh = MeshHierarchy::new(4, 4).unwrap();
        let k = RasterField::uniform(8, 8, 1.0).unwrap();
        let b = darcy_velocity(&mesh, &k, &Source::zero()).unwrap();
        assert!(b.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn darcy_rejects_incompatible_source() {
        let mesh = MeshHierarchy::new(4, 4).unwrap();
        let k = RasterField::uniform(8, 8, 1.0).unwrap();
        assert!(matches!(
            darcy_velocity(&mesh, &k, &Source::constant(1.0)),
            Err(Error::IncompatibleSource { .. })
        ));
    }

    #[test]
    fn darcy_weak_divergence_identity() {
        // ∫ b·∇v = -∫ q v for every fine hat v
        let mesh = MeshHierarchy::new(10, 4).unwrap();
        let k = generate_channelized_k_sized(5, 1e4, 40).unwrap();
        let q = Source::example3_darcy_source();
        let b = darcy_velocity(&mesh, &k, &q).unwrap();
        let qs = q.sample(&mesh);
        let h = mesh.h();
        let mut lhs = vec![0.0; mesh.n_fine_vertices()];
        let mut rhs = vec![0.0; mesh.n_fine_vertices()];
        for cy in 0..mesh.n_fine() {
            for cx in 0..mesh.n_fine() {
                let fc = mesh.fine_cell_index(cx, cy);
                let verts = mesh.fine_cell_vertices(cx, cy);
                for (qi, &(xi, eta)) in element::QUAD_POINTS.iter().enumerate() {
                    let g = element::shape_grad(xi, eta);
                    let nn = element::shape(xi, eta);
                    let bq = b[fc * 4 + qi];
                    for a in 0..4 {
                        lhs[verts[a]] += 0.25 * h * (bq[0] * g[a][0] + bq[1] * g[a][1]);
                        rhs[verts[a]] -= 0.25 * h * h * qs[fc * 4 + qi] * nn[a];
                    }
                }
            }
        }
        let scale = sparse::norm(&rhs);
        let err: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(sparse::norm(&err) <= 1e-8 * scale, "{}", sparse::norm(&err) / scale);
    }
}
