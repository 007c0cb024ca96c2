//! Residual neural operator: truncating encoder, sparse ReLU network,
//! zero-padding decoder and output base point, with a norm-product Lipschitz
//! certificate, budget enforcement and the architecture sizing formulas.
//!
//! Inputs are residual coordinates `x - x_ref`; the network output is added
//! to `y_base_coords`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::operator_core::{spectral_norm, Matrix};
use crate::scalar::Scalar;

/// Shape, budgets and base points of one operator class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct RnoArchitecture<S: Scalar> {
    pub n1: usize,
    pub n2: usize,
    /// Number of hidden ReLU layers `Delta`.
    pub depth: usize,
    /// `d_0 .. d_{Delta + 1}`.
    pub widths: Vec<usize>,
    pub connectivity_budget: usize,
    pub lipschitz_budget: S,
    #[serde(default)]
    pub max_width: Option<usize>,
    #[serde(default)]
    pub x_base_coords: Vec<S>,
    /// Output base point; its length is the output dimension (at least `n2`).
    pub y_base_coords: Vec<S>,
}

impl<S: Scalar> RnoArchitecture<S> {
    /// Uniform hidden width.
    pub fn uniform(n1: usize, n2: usize, depth: usize, width: usize, connectivity: usize, lipschitz: S) -> Self {
        let mut widths = vec![n1];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(n2);
        Self {
            n1,
            n2,
            depth,
            widths,
            connectivity_budget: connectivity,
            lipschitz_budget: lipschitz,
            max_width: None,
            x_base_coords: Vec::new(),
            y_base_coords: vec![S::zero(); n2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Invalid("depth must be at least 1".into()));
        }
        if self.widths.len() != self.depth + 2 {
            return Err(Error::Invalid(format!(
                "expected {} widths for depth {}, got {}",
                self.depth + 2,
                self.depth,
                self.widths.len()
            )));
        }
        if self.widths[0] != self.n1 || self.widths[self.depth + 1] != self.n2 {
            return Err(Error::Invalid("first width must equal n1 and last width n2".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Invalid("widths must be positive".into()));
        }
        if let Some(w) = self.max_width {
            if self.widths.iter().any(|&d| d > w) {
                return Err(Error::Invalid(format!("a width exceeds the declared maximum {w}")));
            }
        }
        if !(self.lipschitz_budget > S::zero()) || !self.lipschitz_budget.is_finite() {
            return Err(Error::Invalid("Lipschitz budget must be positive".into()));
        }
        if self.y_base_coords.len() < self.n2 {
            return Err(Error::Invalid("y_base_coords must have at least n2 entries".into()));
        }
        if self.y_base_coords.iter().chain(&self.x_base_coords).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("base points must be finite".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.y_base_coords.len()
    }

    /// Number of affine layers `Delta + 1`.
    pub fn n_layers(&self) -> usize {
        self.depth + 1
    }
}

/// One affine layer `x |-> A x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Layer<S: Scalar> {
    pub a: Matrix<S>,
    pub b: Vec<S>,
}

/// Weights and biases of every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct RnoWeights<S: Scalar> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> RnoWeights<S> {
    pub fn zeros(arch: &RnoArchitecture<S>) -> Self {
        let layers = (0..arch.n_layers())
            .map(|l| Layer { a: Matrix::zeros(arch.widths[l + 1], arch.widths[l]), b: vec![S::zero(); arch.widths[l + 1]] })
            .collect();
        Self { layers }
    }

    /// Checks the layer shapes against `arch`.
    pub fn check(&self, arch: &RnoArchitecture<S>) -> Result<()> {
        if self.layers.len() != arch.n_layers() {
            return dim_err(format!("expected {} layers, got {}", arch.n_layers(), self.layers.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.a.shape() != (arch.widths[l + 1], arch.widths[l]) || layer.b.len() != arch.widths[l + 1] {
                return dim_err(format!("layer {l} has the wrong shape"));
            }
        }
        Ok(())
    }

    /// Total number of weight and bias entries.
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.a.as_slice().len() + l.b.len()).sum()
    }

    /// `sum ||A_l||_0 + ||b_l||_0`.
    pub fn nonzeros(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.a.as_slice().iter().chain(&l.b).filter(|v| **v != S::zero()).count())
            .sum()
    }

    /// Parameters in flat order `A_0, b_0, A_1, b_1, ...`.
    pub fn flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.a.as_slice());
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Inverse of [`RnoWeights::flat`].
    pub fn set_flat(&mut self, x: &[S]) -> Result<()> {
        if x.len() != self.n_params() {
            return dim_err("flat parameter length mismatch");
        }
        let mut o = 0;
        for l in &mut self.layers {
            let na = l.a.as_slice().len();
            l.a.as_mut_slice().copy_from_slice(&x[o..o + na]);
            o += na;
            let nb = l.b.len();
            l.b.copy_from_slice(&x[o..o + nb]);
            o += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.a.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }
}

/// First `n1` input coordinates, zero-padded.
pub fn encode<S: Scalar>(n1: usize, x: &[S]) -> Vec<S> {
    (0..n1).map(|i| x.get(i).copied().unwrap_or_else(S::zero)).collect()
}

/// Pre-activations `z_l` and activations `x_l` of every layer.
pub struct ForwardTrace<S> {
    pub activations: Vec<Vec<S>>,
    pub preacts: Vec<Vec<S>>,
    pub output: Vec<S>,
}

/// Forward pass keeping intermediate values.
pub fn forward_trace<S: Scalar>(arch: &RnoArchitecture<S>, w: &RnoWeights<S>, x: &[S]) -> ForwardTrace<S> {
    let mut act = encode(arch.n1, x);
    let mut activations = Vec::with_capacity(w.layers.len());
    let mut preacts = Vec::with_capacity(w.layers.len());
    let last = w.layers.len() - 1;
    for (l, layer) in w.layers.iter().enumerate() {
        let mut z = layer.a.matvec(&act);
        for (zi, bi) in z.iter_mut().zip(&layer.b) {
            *zi += *bi;
        }
        activations.push(act);
        act = if l == last { z.clone() } else { z.iter().map(|v| v.max(S::zero())).collect() };
        preacts.push(z);
    }
    let mut output = arch.y_base_coords.clone();
    for (o, v) in output.iter_mut().zip(&act) {
        *o += *v;
    }
    ForwardTrace { activations, preacts, output }
}

/// `y_base + E(A_Delta x_Delta + b_Delta)` with `x_{l+1} = ReLU(A_l x_l + b_l)`.
pub fn forward<S: Scalar>(arch: &RnoArchitecture<S>, w: &RnoWeights<S>, x: &[S]) -> Vec<S> {
    forward_trace(arch, w, x).output
}

/// Product of the layer operator norms.
pub fn lipschitz_certificate<S: Scalar>(w: &RnoWeights<S>) -> S {
    w.layers.iter().map(|l| spectral_norm(&l.a)).fold(S::one(), |acc, n| acc * n)
}

/// Rescales every weight matrix by `(L / cert)^{1 / (Delta + 1)}` when the
/// certificate exceeds `L`; biases are untouched.
pub fn project_lipschitz<S: Scalar>(arch: &RnoArchitecture<S>, w: &RnoWeights<S>) -> RnoWeights<S> {
    let cert = lipschitz_certificate(w);
    if cert <= arch.lipschitz_budget {
        return w.clone();
    }
    let inv_layers = S::one() / S::of_usize(w.layers.len());
    let mut out = w.clone();
    let mut cert = cert;
    let mut shrink = S::one();
    // rounding can leave the product a few ulps above the budget
    while cert > arch.lipschitz_budget {
        let f = (arch.lipschitz_budget / cert).powf(inv_layers) * shrink;
        for l in &mut out.layers {
            l.a = l.a.scale(f);
        }
        cert = lipschitz_certificate(&out);
        shrink *= S::one() - S::of(4.0) * S::epsilon();
    }
    out
}

/// Zeroes the smallest-magnitude entries (ties by lowest flat index) until at
/// most `C` remain, then projects onto the Lipschitz budget.
pub fn prune_to_budget<S: Scalar>(arch: &RnoArchitecture<S>, w: &RnoWeights<S>) -> RnoWeights<S> {
    let mut flat = w.flat();
    let mut nz: Vec<usize> = (0..flat.len()).filter(|&i| flat[i] != S::zero()).collect();
    if nz.len() > arch.connectivity_budget {
        nz.sort_by(|&i, &j| {
            flat[i].abs().partial_cmp(&flat[j].abs()).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
        });
        let excess = nz.len() - arch.connectivity_budget;
        for &i in &nz[..excess] {
            flat[i] = S::zero();
        }
    }
    let mut out = w.clone();
    out.set_flat(&flat).expect("flat length is preserved");
    project_lipschitz(arch, &out)
}

/// Serialized weights with their class diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct RnoFile<S: Scalar> {
    pub arch: RnoArchitecture<S>,
    pub layers: Vec<Layer<S>>,
    pub meta: RnoMeta<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct RnoMeta<S: Scalar> {
    pub nonzeros: usize,
    pub certificate: S,
}

impl<S: Scalar> RnoFile<S> {
    pub fn new(arch: &RnoArchitecture<S>, w: &RnoWeights<S>) -> Self {
        Self {
            arch: arch.clone(),
            layers: w.layers.clone(),
            meta: RnoMeta { nonzeros: w.nonzeros(), certificate: lipschitz_certificate(w) },
        }
    }

    pub fn weights(&self) -> RnoWeights<S> {
        RnoWeights { layers: self.layers.clone() }
    }
}

/// Principal branch `W_0` by Halley iteration.
pub fn lambert_w0<S: Scalar>(z: S) -> Result<S> {
    let e = S::E();
    let branch = -e.recip();
    if !z.is_finite() || z < branch {
        return Err(Error::Domain(format!("Lambert W0 needs z >= -1/e, got {z}")));
    }
    if z == branch {
        return Ok(-S::one());
    }
    if z == S::zero() {
        return Ok(S::zero());
    }
    let mut w = if z < S::of(-0.25) {
        let p = (S::of(2.0) * (e * z + S::one())).max(S::zero()).sqrt();
        -S::one() + p - p * p / S::of(3.0) + S::of(11.0 / 72.0) * p * p * p
    } else if z < S::of(3.0) {
        z.ln_1p() * (S::one() - z.ln_1p() / (S::of(2.0) + z.ln_1p()))
    } else {
        let l = z.ln();
        l - l.ln()
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + S::one();
        if wp1 == S::zero() {
            break;
        }
        let denom = ew * wp1 - (w + S::of(2.0)) * f / (S::of(2.0) * wp1);
        let step = f / denom;
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= S::eps() * S::of(4.0) * (S::one() + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Sizing formulas of the approximation result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SizingReport<S: Scalar> {
    /// `ceil(ln((4L)^{1/(r alpha)} / r^{1/r}))`.
    pub c_ceiling: i64,
    /// `c_{r,alpha} = c_ceiling / alpha`.
    pub c_exponent: S,
    /// `eps^{-c} ln(1/eps)`.
    pub width_order: S,
    pub connectivity_order: S,
    pub depth_order: S,
    /// `ceil(ln(rho^{1/(alpha r)} (2L)^{1/(alpha r)} / (r^{1/r} eps^{1/(alpha r)})))`.
    pub latent_dim: i64,
    /// `1 / W_0((4L)^{-1/alpha})` when `0 < L < 4 e^alpha`.
    pub special_rate: Option<S>,
    /// `eps^{-1} ln(1/eps)` at the special rate.
    pub special_order: Option<S>,
}

/// Evaluates the sizing formulas with ellipsoid radius `rho`.
pub fn sizing_with_rho<S: Scalar>(l: S, r: S, alpha: S, epsilon: S, rho: S) -> Result<SizingReport<S>> {
    for (name, v) in [("L", l), ("r", r), ("alpha", alpha), ("epsilon", epsilon), ("rho", rho)] {
        if !(v > S::zero()) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive and finite")));
        }
    }
    if alpha > S::one() {
        return Err(Error::Domain("alpha must lie in (0, 1]".into()));
    }
    let four_l = S::of(4.0) * l;
    let arg = four_l.ln() / (r * alpha) - r.ln() / r;
    let c_ceiling = ceil_i64(arg)?;
    let c_exponent = S::of(c_ceiling as f64) / alpha;
    let log_inv = -epsilon.ln();
    let width_order = epsilon.powf(-c_exponent) * log_inv;
    let ar = alpha * r;
    let latent_arg = (rho.ln() + (S::of(2.0) * l).ln() - epsilon.ln()) / ar - r.ln() / r;
    let latent_dim = ceil_i64(latent_arg)?;
    let (special_rate, special_order) = if l < S::of(4.0) * alpha.exp() {
        let w = lambert_w0(four_l.powf(-alpha.recip()))?;
        (Some(w.recip()), Some(epsilon.recip() * log_inv))
    } else {
        (None, None)
    };
    Ok(SizingReport {
        c_ceiling,
        c_exponent,
        width_order,
        connectivity_order: width_order,
        depth_order: S::one(),
        latent_dim,
        special_rate,
        special_order,
    })
}

/// [`sizing_with_rho`] with `rho = 1`.
pub fn sizing<S: Scalar>(l: S, r: S, alpha: S, epsilon: S) -> Result<SizingReport<S>> {
    sizing_with_rho(l, r, alpha, epsilon, S::one())
}

fn ceil_i64<S: Scalar>(x: S) -> Result<i64> {
    // absorb roundoff so exact integers (e.g. ln 1 = 0) do not ceil upward
    let snapped = if (x - x.round()).abs() <= S::eps() * S::of(64.0) * (S::one() + x.abs()) { x.round() } else { x };
    snapped.ceil().to_i64().ok_or_else(|| Error::Domain(format!("sizing value {x} is out of range")))
}
