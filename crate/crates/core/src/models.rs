//! Built-in test systems and the name-addressable model registry.
//!
//! Registry names: `chua`, `scalar_decay`, `random_linear:n=40:seed=7`,
//! `const_linear:nx=4:np=3:seed=1`. Random entries come from `ChaCha8Rng`
//! seeded with `seed_from_u64(seed)`, so matrices depend on the seed and on
//! nothing else.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{mat_exp, solve_linear, DenseMatrix};
use crate::ode::OdeSystem;

// ---------------------------------------------------------------------------
// Systems
// ---------------------------------------------------------------------------

/// `ẋ = A x + p² + u` with `A = -BᵀB`, `u ≡ 1`.
#[derive(Debug, Clone)]
pub struct RandomLinear {
    pub a: DenseMatrix,
    name: String,
}

impl OdeSystem for RandomLinear {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_x(&self) -> usize {
        self.a.rows()
    }
    fn n_u(&self) -> usize {
        self.a.rows()
    }
    fn n_p(&self) -> usize {
        self.a.rows()
    }
    fn rhs(&self, x: &[f64], u: &[f64], p: &[f64], dx: &mut [f64]) {
        let n = self.a.rows();
        let a = self.a.as_slice();
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dx[i] = ax + p[i] * p[i] + u[i];
        }
    }
    fn jac_x(&self, _x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        self.a.clone()
    }
    fn jac_p(&self, _x: &[f64], _u: &[f64], p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&p.iter().map(|v| 2.0 * v).collect::<Vec<_>>())
    }
    fn input(&self, _t: f64) -> Vec<f64> {
        vec![1.0; self.a.rows()]
    }
}

/// Draws `B` (row-major) then `p`, all entries uniform on `[0, 1)`.
pub fn make_random_linear(n: usize, seed: u64) -> Result<(RandomLinear, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Config("random_linear dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DenseMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
    let p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let a = -&(&b.transpose() * &b);
    Ok((
        RandomLinear {
            a,
            name: format!("random_linear:n={n}:seed={seed}"),
        },
        p,
    ))
}

/// Chua's circuit with the cubic nonlinearity `g(x₁) = -8/7 x₁ + 4/63 x₁³`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Chua;

impl Chua {
    fn g(x1: f64) -> f64 {
        -8.0 / 7.0 * x1 + 4.0 / 63.0 * x1.powi(3)
    }

    fn dg(x1: f64) -> f64 {
        -8.0 / 7.0 + 12.0 / 63.0 * x1 * x1
    }
}

impl OdeSystem for Chua {
    fn name(&self) -> &str {
        "chua"
    }
    fn n_x(&self) -> usize {
        3
    }
    fn n_u(&self) -> usize {
        0
    }
    fn n_p(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], _u: &[f64], p: &[f64], dx: &mut [f64]) {
        dx[0] = p[0] * (x[1] - x[0] - Self::g(x[0]));
        dx[1] = x[0] - x[1] + x[2];
        dx[2] = -p[1] * x[1];
    }
    fn jac_x(&self, x: &[f64], _u: &[f64], p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[
            &[p[0] * (-1.0 - Self::dg(x[0])), p[0], 0.0],
            &[1.0, -1.0, 1.0],
            &[0.0, -p[1], 0.0],
        ])
    }
    fn jac_p(&self, x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[x[1] - x[0] - Self::g(x[0]), 0.0], &[0.0, 0.0], &[0.0, -x[1]]])
    }
}

pub const CHUA_P: [f64; 2] = [7.0, 15.0];
pub const CHUA_X0: [f64; 3] = [0.0, 0.0, -0.1];
pub const CHUA_TSPAN: (f64, f64) = (0.0, 10.0);

pub fn make_chua() -> (Chua, Vec<f64>, Vec<f64>, (f64, f64)) {
    (Chua, CHUA_P.to_vec(), CHUA_X0.to_vec(), CHUA_TSPAN)
}

/// `ẋ = -p x`; sensitivity `S(t) = -t x₀ e^{-pt}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarDecay;

impl OdeSystem for ScalarDecay {
    fn name(&self) -> &str {
        "scalar_decay"
    }
    fn n_x(&self) -> usize {
        1
    }
    fn n_u(&self) -> usize {
        0
    }
    fn n_p(&self) -> usize {
        1
    }
    fn rhs(&self, x: &[f64], _u: &[f64], p: &[f64], dx: &mut [f64]) {
        dx[0] = -p[0] * x[0];
    }
    fn jac_x(&self, _x: &[f64], _u: &[f64], p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[-p[0]]])
    }
    fn jac_p(&self, x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(&[&[-x[0]]])
    }
}

impl ScalarDecay {
    pub fn exact_sensitivity(t: f64, x0: f64, p: f64) -> f64 {
        -t * x0 * (-p * t).exp()
    }
}

/// `ẋ = A x + B p` with stable `A = -MᵀM - 0.1 I`.
#[derive(Debug, Clone)]
pub struct ConstLinear {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    name: String,
}

impl OdeSystem for ConstLinear {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_x(&self) -> usize {
        self.a.rows()
    }
    fn n_u(&self) -> usize {
        0
    }
    fn n_p(&self) -> usize {
        self.b.cols()
    }
    fn rhs(&self, x: &[f64], _u: &[f64], p: &[f64], dx: &mut [f64]) {
        let ax = self.a.mul_vec(x);
        let bp = self.b.mul_vec(p);
        for ((d, a), b) in dx.iter_mut().zip(ax).zip(bp) {
            *d = a + b;
        }
    }
    fn jac_x(&self, _x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        self.a.clone()
    }
    fn jac_p(&self, _x: &[f64], _u: &[f64], _p: &[f64]) -> DenseMatrix {
        self.b.clone()
    }
}

impl ConstLinear {
    /// `S(t) = (e^{tA} - I) A⁻¹ B`, the solution of `Ṡ = A S + B` from `S(0) = 0`.
    pub fn exact_sensitivity(&self, t: f64) -> Result<DenseMatrix> {
        let mut e = mat_exp(&self.a.scale(t))?;
        e.add_diagonal(-1.0);
        Ok(&e * &solve_linear(&self.a, &self.b)?)
    }

    /// `-A⁻¹ B`, the limit of `S(t)` as `t → ∞`.
    pub fn steady_state_sensitivity(&self) -> Result<DenseMatrix> {
        Ok(-&solve_linear(&self.a, &self.b)?)
    }
}

pub fn make_const_linear(n_x: usize, n_p: usize, seed: u64) -> Result<ConstLinear> {
    if n_x == 0 || n_p == 0 {
        return Err(Error::Config("const_linear dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n_x as f64).sqrt();
    let m = DenseMatrix::from_fn(n_x, n_x, |_, _| rng.gen_range(-1.0..1.0) * scale);
    let mut a = -&(&m.transpose() * &m);
    a.add_diagonal(-0.1);
    let b = DenseMatrix::from_fn(n_x, n_p, |_, _| rng.gen_range(-1.0..1.0));
    Ok(ConstLinear {
        a,
        b,
        name: format!("const_linear:nx={n_x}:np={n_p}:seed={seed}"),
    })
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    RandomLinear,
    Chua,
    ScalarDecay,
    ConstLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Chua, ModelKind::ScalarDecay, ModelKind::RandomLinear, ModelKind::ConstLinear];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::RandomLinear => "random_linear",
            ModelKind::Chua => "chua",
            ModelKind::ScalarDecay => "scalar_decay",
            ModelKind::ConstLinear => "const_linear",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ModelKind::RandomLinear => "x' = A x + p^2 + u, A = -B^T B random; options n, seed",
            ModelKind::Chua => "Chua circuit, p = (7, 15), x0 = (0, 0, -0.1), t in [0, 10]",
            ModelKind::ScalarDecay => "x' = -p x, closed-form sensitivity -t x0 e^{-pt}",
            ModelKind::ConstLinear => "x' = A x + B p, stable random A; options nx, np, seed",
        }
    }
}

/// Parsed registry name such as `random_linear:n=40:seed=7`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub n_p: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        let (n, n_p) = match kind {
            ModelKind::RandomLinear => (10, 10),
            ModelKind::Chua => (3, 2),
            ModelKind::ScalarDecay => (1, 1),
            ModelKind::ConstLinear => (4, 3),
        };
        Self { kind, n, n_p, seed: 1 }
    }

    pub fn random_linear(n: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::RandomLinear,
            n,
            n_p: n,
            seed,
        }
    }

    pub fn const_linear(n_x: usize, n_p: usize, seed: u64) -> Self {
        Self {
            kind: ModelKind::ConstLinear,
            n: n_x,
            n_p,
            seed,
        }
    }

    pub fn build(&self) -> Result<Model> {
        Model::from_spec(self)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModelKind::Chua | ModelKind::ScalarDecay => f.write_str(self.kind.as_str()),
            ModelKind::RandomLinear => write!(f, "random_linear:n={}:seed={}", self.n, self.seed),
            ModelKind::ConstLinear => write!(f, "const_linear:nx={}:np={}:seed={}", self.n, self.n_p, self.seed),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let head = parts.next().unwrap_or_default();
        let kind = ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == head)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))?;
        let mut spec = ModelSpec::new(kind);
        for opt in parts {
            let (key, value) = opt
                .split_once('=')
                .ok_or_else(|| Error::UnknownModel(format!("{s} (option `{opt}` is not key=value)")))?;
            let bad = || Error::UnknownModel(format!("{s} (bad value in `{opt}`)"));
            match (kind, key) {
                (ModelKind::RandomLinear, "n") | (ModelKind::ConstLinear, "nx") => {
                    spec.n = value.parse().map_err(|_| bad())?;
                    if kind == ModelKind::RandomLinear {
                        spec.n_p = spec.n;
                    }
                }
                (ModelKind::ConstLinear, "np") => spec.n_p = value.parse().map_err(|_| bad())?,
                (ModelKind::RandomLinear | ModelKind::ConstLinear, "seed") => spec.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::UnknownModel(format!("{s} (unknown option `{key}`)"))),
            }
        }
        if spec.n == 0 || spec.n_p == 0 {
            return Err(Error::UnknownModel(format!("{s} (dimensions must be >= 1)")));
        }
        Ok(spec)
    }
}

/// Closed-form sensitivity available for verification.
#[derive(Debug, Clone)]
enum ClosedForm {
    ScalarDecay { x0: f64, p: f64 },
    ConstLinear(ConstLinear),
}

/// A constructed model with its default experiment settings.
pub struct Model {
    pub spec: ModelSpec,
    pub system: Box<dyn OdeSystem>,
    pub p: Vec<f64>,
    pub x0: Vec<f64>,
    pub tspan: (f64, f64),
    pub default_dt: f64,
    closed_form: Option<ClosedForm>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("p", &self.p)
            .field("x0", &self.x0)
            .field("tspan", &self.tspan)
            .field("default_dt", &self.default_dt)
            .finish()
    }
}

impl Model {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let model = match spec.kind {
            ModelKind::Chua => {
                let (sys, p, x0, tspan) = make_chua();
                Model {
                    spec: spec.clone(),
                    system: Box::new(sys),
                    p,
                    x0,
                    tspan,
                    default_dt: 0.05,
                    closed_form: None,
                }
            }
            ModelKind::ScalarDecay => Model {
                spec: spec.clone(),
                system: Box::new(ScalarDecay),
                p: vec![1.0],
                x0: vec![1.0],
                tspan: (0.0, 2.0),
                default_dt: 0.1,
                closed_form: Some(ClosedForm::ScalarDecay { x0: 1.0, p: 1.0 }),
            },
            ModelKind::RandomLinear => {
                let (sys, p) = make_random_linear(spec.n, spec.seed)?;
                Model {
                    spec: spec.clone(),
                    system: Box::new(sys),
                    p,
                    x0: vec![0.0; spec.n],
                    tspan: (0.0, 0.1),
                    default_dt: 0.01,
                    closed_form: None,
                }
            }
            ModelKind::ConstLinear => {
                let sys = make_const_linear(spec.n, spec.n_p, spec.seed)?;
                Model {
                    spec: spec.clone(),
                    closed_form: Some(ClosedForm::ConstLinear(sys.clone())),
                    system: Box::new(sys),
                    p: vec![1.0; spec.n_p],
                    x0: vec![0.0; spec.n],
                    tspan: (0.0, 2.0),
                    default_dt: 0.1,
                }
            }
        };
        Ok(model)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        name.parse::<ModelSpec>()?.build()
    }

    pub fn name(&self) -> String {
        self.spec.to_string()
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// Exact `S(t)` at the default parameters and initial state, when known.
    ///
    /// `None` for models without a closed form, and for `scalar_decay` once
    /// `p` or `x0` differ from the values the closed form was built for.
    pub fn exact_sensitivity(&self, t: f64) -> Option<Result<DenseMatrix>> {
        match &self.closed_form {
            Some(ClosedForm::ScalarDecay { x0, p }) => {
                if self.x0 != [*x0] || self.p != [*p] {
                    return None;
                }
                Some(Ok(DenseMatrix::from_rows(&[&[ScalarDecay::exact_sensitivity(t - self.tspan.0, *x0, *p)]])))
            }
            Some(ClosedForm::ConstLinear(sys)) => Some(sys.exact_sensitivity(t - self.tspan.0)),
            None => None,
        }
    }
}

/// One line per registry entry, for `list-models`.
pub fn registry_listing() -> Vec<(String, &'static str)> {
    ModelKind::ALL
        .iter()
        .map(|k| (ModelSpec::new(*k).to_string(), k.description()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, uniform_grid};

    /// Central-difference Jacobian oracle, independent of the analytic forms.
    fn fd_jacobians(sys: &dyn OdeSystem, x: &[f64], u: &[f64], p: &[f64]) -> (DenseMatrix, DenseMatrix) {
        let n = sys.n_x();
        let col = |f: &dyn Fn(f64) -> Vec<f64>, v: f64| {
            let h = 1e-6 * v.abs().max(1.0);
            let (a, b) = (f(v + h), f(v - h));
            a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>()
        };
        let mut jx = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let c = col(
                &|v| {
                    let mut xx = x.to_vec();
                    xx[j] = v;
                    sys.f(&xx, u, p)
                },
                x[j],
            );
            for i in 0..n {
                jx[(i, j)] = c[i];
            }
        }
        let mut jp = DenseMatrix::zeros(n, sys.n_p());
        for j in 0..sys.n_p() {
            let c = col(
                &|v| {
                    let mut pp = p.to_vec();
                    pp[j] = v;
                    sys.f(x, u, &pp)
                },
                p[j],
            );
            for i in 0..n {
                jp[(i, j)] = c[i];
            }
        }
        (jx, jp)
    }

    fn assert_jacobians_consistent(model: &Model) {
        let sys = model.system.as_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let x: Vec<f64> = (0..sys.n_x()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p: Vec<f64> = model.p.iter().map(|v| v * rng.gen_range(0.5..1.5)).collect();
            let u = sys.input(rng.gen_range(0.0..1.0));
            let (jx_fd, jp_fd) = fd_jacobians(sys, &x, &u, &p);
            let jx = sys.jac_x(&x, &u, &p);
            let jp = sys.jac_p(&x, &u, &p);
            let ex = (&jx - &jx_fd).frobenius_norm() / jx.frobenius_norm().max(1.0);
            let ep = (&jp - &jp_fd).frobenius_norm() / jp.frobenius_norm().max(1.0);
            assert!(ex < 1e-5 && ep < 1e-5, "{}: {ex:e} {ep:e}", model.name());
        }
    }

    #[test]
    fn jacobians_match_finite_differences_for_all_models() {
        for name in ["chua", "scalar_decay", "random_linear:n=6:seed=3", "const_linear:nx=4:np=3:seed=1"] {
            assert_jacobians_consistent(&Model::by_name(name).unwrap());
        }
    }

    #[test]
    fn random_linear_structure() {
        let (sys, p) = make_random_linear(8, 7).unwrap();
        let a = &sys.a;
        assert_eq!(a, &a.transpose());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: f64 = x.iter().zip(a.mul_vec(&x)).map(|(a, b)| a * b).sum();
            assert!(q <= 1e-12);
        }
        assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        let (again, p2) = make_random_linear(8, 7).unwrap();
        assert_eq!(again.a, sys.a);
        assert_eq!(p2, p);
        let ones = vec![1.0; 8];
        assert_eq!(sys.jac_p(&ones, &ones, &ones), DenseMatrix::identity(8).scale(2.0));
        assert_eq!(sys.input(3.0), ones);
    }

    #[test]
    fn random_linear_stays_bounded() {
        let model = Model::by_name("random_linear:n=5:seed=2").unwrap();
        let grid = uniform_grid(0.0, 5.0, 0.1).unwrap();
        let traj = integrate(model.system.as_ref(), &model.p, &model.x0, &grid).unwrap();
        let norm = traj.final_state().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 10.0 * (0.0 + 5.0), "{norm}");
    }

    #[test]
    fn chua_defaults_and_jacobian() {
        let (sys, p, x0, tspan) = make_chua();
        assert_eq!(p, vec![7.0, 15.0]);
        assert_eq!(x0, vec![0.0, 0.0, -0.1]);
        assert_eq!(tspan, (0.0, 10.0));
        let j = sys.jac_x(&[0.0, 0.3, -1.0], &[], &p);
        assert!((j[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn chua_trajectory_is_bounded() {
        let model = Model::by_name("chua").unwrap();
        let grid = uniform_grid(0.0, 10.0, 0.05).unwrap();
        let traj = integrate(model.system.as_ref(), &model.p, &model.x0, &grid).unwrap();
        let max = traj.states.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 10.0, "{max}");
        assert!(max > 0.1);
    }

    #[test]
    fn scalar_decay_closed_form() {
        assert_eq!(ScalarDecay::exact_sensitivity(0.0, 1.0, 1.0), 0.0);
        assert!((ScalarDecay::exact_sensitivity(1.0, 1.0, 1.0) + 0.367_879_4).abs() < 1e-7);
        // extremum at t = 1/p
        let p = 2.5;
        let f = |t: f64| ScalarDecay::exact_sensitivity(t, 1.0, p);
        let h = 1e-5;
        let slope = (f(1.0 / p + h) - f(1.0 / p - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-8);
    }

    #[test]
    fn const_linear_closed_form() {
        let sys = make_const_linear(3, 2, 4).unwrap();
        assert_eq!(sys.exact_sensitivity(0.0).unwrap().max_abs(), 0.0);
        let far = sys.exact_sensitivity(400.0).unwrap();
        let lim = sys.steady_state_sensitivity().unwrap();
        assert!((&far - &lim).max_abs() < 1e-10);
        // second route: e^{tA}(0 + (I - e^{-tA}) A⁻¹ B)
        let t = 1.3;
        let e = mat_exp(&sys.a.scale(t)).unwrap();
        let mut i_minus = -&mat_exp(&sys.a.scale(-t)).unwrap();
        i_minus.add_diagonal(1.0);
        let alt = &e * &(&i_minus * &solve_linear(&sys.a, &sys.b).unwrap());
        assert!((&alt - &sys.exact_sensitivity(t).unwrap()).max_abs() < 1e-12);
    }

    #[test]
    fn registry_names_round_trip() {
        for name in ["chua", "scalar_decay", "random_linear:n=40:seed=7", "const_linear:nx=4:np=3:seed=1"] {
            let spec: ModelSpec = name.parse().unwrap();
            assert_eq!(spec.to_string(), name);
        }
        let spec: ModelSpec = "random_linear:seed=3".parse().unwrap();
        assert_eq!((spec.n, spec.seed), (10, 3));
        for bad in ["pka", "chua:n=3", "random_linear:n=0", "random_linear:n=x", "const_linear:nx"] {
            assert!(matches!(bad.parse::<ModelSpec>(), Err(Error::UnknownModel(_))), "{bad}");
        }
        assert_eq!(registry_listing().len(), 4);
    }
}
