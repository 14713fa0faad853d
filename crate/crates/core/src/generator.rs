//! Toy differentiable generators `G: latent → signal`.
//!
//! Weights are never stored: a [`Generator`] is rebuilt bit-for-bit from its
//! [`GeneratorSpec`], whose `weight_seed` is the source of truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{Matrix, Vector};

pub type LatentVector = Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            // ln(1 + e^x) without overflow for large x.
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    fn slope(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Spatially organized weight draw.
///
/// Every unit gets a position in the unit square (latents and hidden units on
/// a regular grid, output units at their pixel centres) and a band, coarse or
/// fine, in a checkerboard over its grid. Connection strengths decay as a
/// Gaussian of distance with width `radius`; connections across bands are
/// damped by `cross_band`. In the output layer, coarse units emit a signed
/// smooth bump of width `smooth_width`, fine units a signed pixel
/// checkerboard under the distance envelope.
/// Each unit's incoming weights are rescaled to ℓ2 norm `weight_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub radius: f64,
    pub cross_band: f64,
    pub smooth_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub latent_dim: usize,
    pub signal_shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden_widths: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    pub weight_seed: u64,
    pub weight_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSpec>,
}

impl GeneratorSpec {
    pub fn signal_len(&self) -> usize {
        self.signal_shape[0] * self.signal_shape[1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.signal_len();
        if self.latent_dim == 0 || n == 0 {
            return Err(Error::InvalidSpec("generator dimensions must be positive".into()));
        }
        if self.latent_dim > n {
            return Err(Error::InvalidSpec(format!(
                "latent_dim {} exceeds signal size {n}",
                self.latent_dim
            )));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return Err(Error::InvalidSpec("weight_scale must be positive".into()));
        }
        match self.kind {
            GeneratorKind::Linear => {
                if !self.hidden_widths.is_empty() {
                    return Err(Error::InvalidSpec(
                        "linear generator takes no hidden_widths".into(),
                    ));
                }
            }
            GeneratorKind::Mlp => {
                if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
                    return Err(Error::InvalidSpec(
                        "mlp generator needs positive hidden_widths".into(),
                    ));
                }
                if self.activation.is_none() {
                    return Err(Error::InvalidSpec("mlp generator needs an activation".into()));
                }
            }
        }
        if let Some(s) = &self.structure {
            if !(s.radius > 0.0 && s.smooth_width > 0.0 && (0.0..=1.0).contains(&s.cross_band)) {
                return Err(Error::InvalidSpec(
                    "structure needs radius > 0, smooth_width > 0, cross_band in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Layer widths from latent to signal, inclusive.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(&self.hidden_widths);
        w.push(self.signal_len());
        w
    }
}

/// Row-major `(H, W)` grid of finite values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignal")]
pub struct SignalTensor {
    values: Vec<f64>,
    shape: [usize; 2],
}

#[derive(Deserialize)]
struct RawSignal {
    values: Vec<f64>,
    shape: [usize; 2],
}

impl TryFrom<RawSignal> for SignalTensor {
    type Error = Error;
    fn try_from(r: RawSignal) -> Result<Self> {
        Self::new(r.values, r.shape)
    }
}

impl SignalTensor {
    pub fn new(values: Vec<f64>, shape: [usize; 2]) -> Result<Self> {
        check_len("SignalTensor::new", shape[0] * shape[1], values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SignalTensor::new"));
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self {
            values: vec![0.0; shape[0] * shape[1]],
            shape,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Clone, Debug)]
struct Layer {
    /// `out × in`.
    weights: Matrix,
}

/// Instantiated generator. Immutable; safe to share across threads.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    layers: Vec<Layer>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.weight_seed);
        let widths = spec.widths();
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let weights = match &spec.structure {
                None => {
                    let s = spec.weight_scale / (fan_in as f64).sqrt();
                    let mut w = Matrix::zeros(fan_out, fan_in);
                    for i in 0..fan_out {
                        for j in 0..fan_in {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            w[(i, j)] = s * xi;
                        }
                    }
                    w
                }
                Some(st) => structured_layer(
                    &mut rng,
                    st,
                    spec.weight_scale,
                    fan_in,
                    fan_out,
                    (l + 1 == n_layers).then_some(spec.signal_shape),
                ),
            };
            layers.push(Layer { weights });
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn signal_shape(&self) -> [usize; 2] {
        self.spec.signal_shape
    }

    pub fn signal_len(&self) -> usize {
        self.spec.signal_len()
    }

    /// Weight matrices, `out × in`, from the latent side.
    pub fn layer_weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().map(|l| &l.weights)
    }

    fn activation(&self) -> Activation {
        self.spec.activation.unwrap_or(Activation::Tanh)
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        check_len("generator latent", self.spec.latent_dim, z.len())
    }

    /// Forward pass returning the pre-activations of every hidden layer and
    /// the output.
    fn forward(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let act = self.activation();
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut h = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.weights.matvec(&h).expect("layer widths are consistent");
            if l == last {
                return (pre, a);
            }
            h = a.iter().map(|&v| act.eval(v)).collect();
            pre.push(a);
        }
        unreachable!("generator has at least one layer")
    }

    pub fn generate_raw(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let out = self.forward(z).1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Generator::generate"));
        }
        Ok(out)
    }

    pub fn generate(&self, z: &[f64]) -> Result<SignalTensor> {
        SignalTensor::new(self.generate_raw(z)?, self.spec.signal_shape)
    }

    /// Analytic Jacobian `∂G/∂z` (`n × n_z`) by forward-mode chain rule.
    pub fn jacobian(&self, z: &[f64]) -> Result<Matrix> {
        self.check_latent(z)?;
        let act = self.activation();
        let last = self.layers.len() - 1;
        let mut h = z.to_vec();
        let mut jac = Matrix::identity(z.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.weights.matvec(&h)?;
            jac = layer.weights.matmul(&jac)?;
            if l == last {
                break;
            }
            for (i, &ai) in a.iter().enumerate() {
                let s = act.slope(ai);
                for j in 0..jac.cols() {
                    jac[(i, j)] *= s;
                }
            }
            h = a.iter().map(|&v| act.eval(v)).collect();
        }
        Ok(jac)
    }

    /// Vector-Jacobian product `(∂G/∂z)ᵀ w` by reverse-mode chain rule.
    pub fn vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        check_len("generator vjp cotangent", self.signal_len(), cotangent.len())?;
        let act = self.activation();
        let (pre, _) = self.forward(z);
        let mut g = cotangent.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            g = layer.weights.t_matvec(&g)?;
            if l > 0 {
                for (gi, &ai) in g.iter_mut().zip(&pre[l - 1]) {
                    *gi *= act.slope(ai);
                }
            }
        }
        Ok(g)
    }
}

fn grid_layout(n: usize) -> Vec<([f64; 2], u8)> {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            (
                [(r as f64 + 0.5) / rows as f64, (c as f64 + 0.5) / cols as f64],
                ((r + c) % 2) as u8,
            )
        })
        .collect()
}

fn pixel_layout(shape: [usize; 2]) -> Vec<[f64; 2]> {
    let [h, w] = shape;
    (0..h * w)
        .map(|i| {
            [
                ((i / w) as f64 + 0.5) / h as f64,
                ((i % w) as f64 + 0.5) / w as f64,
            ]
        })
        .collect()
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn structured_layer(
    rng: &mut ChaCha8Rng,
    st: &StructureSpec,
    scale: f64,
    fan_in: usize,
    fan_out: usize,
    output_shape: Option<[usize; 2]>,
) -> Matrix {
    let src = grid_layout(fan_in);
    let mut w = Matrix::zeros(fan_out, fan_in);
    let local = |d2: f64| (-d2 / (2.0 * st.radius * st.radius)).exp();
    match output_shape {
        None => {
            let dst = grid_layout(fan_out);
            for (i, (pi, bi)) in dst.iter().enumerate() {
                for (j, (pj, bj)) in src.iter().enumerate() {
                    let xi: f64 = StandardNormal.sample(rng);
                    let band = if bi == bj { 1.0 } else { st.cross_band };
                    w[(i, j)] = xi * local(dist2(*pi, *pj)) * band;
                }
            }
        }
        Some(shape) => {
            let dst = pixel_layout(shape);
            let signs: Vec<f64> = (0..fan_in)
                .map(|_| {
                    let s: f64 = StandardNormal.sample(rng);
                    if s > 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            let smooth = |d2: f64| (-d2 / (2.0 * st.smooth_width * st.smooth_width)).exp();
            for (i, pi) in dst.iter().enumerate() {
                for (j, (pj, bj)) in src.iter().enumerate() {
                    let d2 = dist2(*pi, *pj);
                    let (r, c) = (i / shape[1], i % shape[1]);
                    let checker = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                    w[(i, j)] = if *bj == 0 {
                        signs[j] * smooth(d2)
                    } else {
                        signs[j] * checker * local(d2)
                    };
                }
            }
        }
    }
    for i in 0..fan_out {
        let n = crate::linalg::norm(w.row(i));
        if n > 0.0 {
            for j in 0..fan_in {
                w[(i, j)] *= scale / n;
            }
        }
    }
    w
}
