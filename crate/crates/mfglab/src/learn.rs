//! Datasets of rule perturbations and equilibrium controls, empirical risk
//! minimisation of the neural operator and the generalisation bound.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_err, Error, Result};
use crate::mfg_solver::{solve_equilibrium, ConsistencyOptions};
use crate::model::MfgModel;
use crate::noise::KeyedNormals;
use crate::operator_core::unflatten;
use crate::rno::{forward, forward_trace, lipschitz_certificate, project_lipschitz, prune_to_budget, RnoArchitecture, RnoWeights};
use crate::sampling::{ellipsoid_membership, sample_coords_from, EllipsoidSpec, KlSpec};
use crate::scalar::Scalar;

/// Softening inside the unsquared norm loss.
pub const LOSS_SOFTENING: f64 = 1e-12;

/// Time basis of the output coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct OutputBasisSpec<S: Scalar> {
    pub n_time: usize,
    pub d_u: usize,
    pub horizon: S,
}

impl<S: Scalar> OutputBasisSpec<S> {
    pub fn validate(&self) -> Result<()> {
        if self.n_time < 1 || self.d_u < 1 {
            return Err(Error::Invalid("output basis needs n_time >= 1 and d_u >= 1".into()));
        }
        if !(self.horizon > S::zero()) || !self.horizon.is_finite() {
            return Err(Error::Invalid("output basis horizon must be positive".into()));
        }
        Ok(())
    }

    /// Number of coefficients `n_time * d_u`.
    pub fn len(&self) -> usize {
        self.n_time * self.d_u
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Orthonormal shifted Legendre polynomials `psi_0 .. psi_{n-1}` at `t`.
pub fn shifted_legendre<S: Scalar>(n: usize, horizon: S, t: S) -> Vec<S> {
    let x = S::of(2.0) * t / horizon - S::one();
    let mut p = Vec::with_capacity(n);
    for k in 0..n {
        let v = match k {
            0 => S::one(),
            1 => x,
            _ => {
                let kf = S::of_usize(k);
                ((S::of(2.0) * kf - S::one()) * x * p[k - 1] - (kf - S::one()) * p[k - 2]) / kf
            }
        };
        p.push(v);
    }
    p.iter()
        .enumerate()
        .map(|(k, &v)| v * ((S::of(2.0) * S::of_usize(k) + S::one()) / horizon).sqrt())
        .collect()
}

/// `beta_{n,j} = int_0^T u_j(t) psi_n(t) dt` by composite trapezoid on the
/// uniform grid of `ubar`; index `n * d_u + j`.
pub fn target_coefficients<S: Scalar>(ubar: &[Vec<S>], basis: &OutputBasisSpec<S>) -> Result<Vec<S>> {
    basis.validate()?;
    if ubar.len() < 2 {
        return dim_err("control trajectory needs at least two grid points");
    }
    if ubar.iter().any(|u| u.len() != basis.d_u) {
        return dim_err(format!("control trajectory entries must have length {}", basis.d_u));
    }
    let steps = ubar.len() - 1;
    let h = basis.horizon / S::of_usize(steps);
    let mut beta = vec![S::zero(); basis.len()];
    for (i, u) in ubar.iter().enumerate() {
        let t = if i == steps { basis.horizon } else { h * S::of_usize(i) };
        let w = if i == 0 || i == steps { h * S::of(0.5) } else { h };
        for (n, psi) in shifted_legendre(basis.n_time, basis.horizon, t).into_iter().enumerate() {
            for (j, &uj) in u.iter().enumerate() {
                beta[n * basis.d_u + j] += w * uj * psi;
            }
        }
    }
    Ok(beta)
}

/// One input/target pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Record<S: Scalar> {
    pub input: Vec<S>,
    pub target: Vec<S>,
}

/// Provenance of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct DatasetMeta<S: Scalar> {
    pub kl_spec: KlSpec<S>,
    pub ellipsoid: Option<EllipsoidSpec<S>>,
    pub reference_hash: String,
    pub basis: OutputBasisSpec<S>,
    pub steps: usize,
    pub seed: u64,
    /// Target coefficients of the unperturbed reference game.
    pub reference_target: Vec<S>,
    pub solver_failures: usize,
    pub ellipsoid_rejections: usize,
    pub tail_mass: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Dataset<S: Scalar> {
    pub records: Vec<Record<S>>,
    pub meta: DatasetMeta<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.records.first() else {
            return Ok(());
        };
        let (ni, nt) = (first.input.len(), first.target.len());
        if self.records.iter().any(|r| r.input.len() != ni || r.target.len() != nt) {
            return dim_err("dataset records have inconsistent dimensions");
        }
        Ok(())
    }

    /// Deterministic split into `(train, test)` with `train_fraction` of the records.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.len() as f64) * train_fraction).round() as usize;
        let pick = |ids: &[usize]| Self {
            records: ids.iter().map(|&i| self.records[i].clone()).collect(),
            meta: self.meta.clone(),
        };
        (pick(&idx[..n_train.min(idx.len())]), pick(&idx[n_train.min(idx.len())..]))
    }

    /// Mean of `||target - reference_target||`.
    pub fn mean_target_residual(&self) -> S {
        if self.is_empty() {
            return S::zero();
        }
        let tot = self.records.iter().fold(S::zero(), |acc, r| {
            acc + crate::scalar::norm2(&crate::scalar::sub_vec(&r.target, &self.meta.reference_target))
        });
        tot / S::of_usize(self.len())
    }

    /// JSON-lines file (metadata record, then one record per line) plus a
    /// little-endian `f64` block of the targets next to it (`.bin`).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &self.meta)?;
        f.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        let mut b = std::io::BufWriter::new(std::fs::File::create(path.with_extension("bin"))?);
        let nt = self.records.first().map_or(0, |r| r.target.len());
        b.write_all(&(self.len() as u64).to_le_bytes())?;
        b.write_all(&(nt as u64).to_le_bytes())?;
        for r in &self.records {
            for v in &r.target {
                b.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        b.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let head = lines.next().ok_or_else(|| Error::Invalid("empty dataset file".into()))??;
        let meta = serde_json::from_str(&head)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let d = Self { records, meta };
        d.validate()?;
        Ok(d)
    }
}

/// Hex SHA-256 of the model's JSON encoding.
pub fn model_hash<S: Scalar>(model: &MfgModel<S>) -> Result<String> {
    let bytes = serde_json::to_vec(model)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Settings of dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "S: Scalar")]
pub struct GenOptions<S: Scalar> {
    pub steps: usize,
    pub consistency: ConsistencyOptions,
    pub ellipsoid: Option<EllipsoidSpec<S>>,
    /// Largest tolerated share of solver failures.
    pub max_failure_rate: f64,
}

impl<S: Scalar> Default for GenOptions<S> {
    fn default() -> Self {
        Self { steps: 200, consistency: ConsistencyOptions::default(), ellipsoid: None, max_failure_rate: 0.2 }
    }
}

enum Candidate<S: Scalar> {
    Accepted(Record<S>),
    Rejected,
    Failed(String),
}

/// Samples perturbations, solves every perturbed game and projects its mean
/// control onto the output basis. Candidate `j` is draw `j` of the sampler,
/// so the dataset is a deterministic function of the seed.
pub fn gen_dataset<S: Scalar>(
    reference: &MfgModel<S>,
    spec: &KlSpec<S>,
    basis: &OutputBasisSpec<S>,
    n: usize,
    seed: u64,
    opts: &GenOptions<S>,
) -> Result<Dataset<S>> {
    reference.validate()?;
    spec.validate()?;
    basis.validate()?;
    if basis.d_u != reference.dim_u() || basis.horizon != reference.horizon {
        return Err(Error::Invalid("output basis must match the model's d_U and horizon".into()));
    }
    if spec.enumeration.dims != reference.dims() {
        return Err(Error::Invalid("KL enumeration dimensions differ from the reference model".into()));
    }
    let ref_eq = solve_equilibrium(reference, opts.steps, &opts.consistency)?;
    let reference_target = target_coefficients(&ref_eq.ubar, basis)?;
    let mut records = Vec::with_capacity(n);
    let (mut failures, mut rejections, mut next) = (0usize, 0usize, 0usize);
    let max_candidates = 100 * n + 100;
    while records.len() < n {
        let batch = (n - records.len()).max(16);
        if next + batch > max_candidates {
            return Err(Error::Invalid(format!(
                "dataset generation examined {next} candidates for {n} records ({rejections} outside the ellipsoid)"
            )));
        }
        let xs = sample_coords_from(spec, next, batch, seed)?;
        let results: Vec<Candidate<S>> = xs
            .into_par_iter()
            .map(|x| {
                if let Some(ell) = &opts.ellipsoid {
                    if !ellipsoid_membership(&x, ell) {
                        return Candidate::Rejected;
                    }
                }
                let solved = unflatten(&x, &spec.enumeration)
                    .and_then(|p| reference.with_perturbation(&p))
                    .and_then(|m| solve_equilibrium(&m, opts.steps, &opts.consistency))
                    .and_then(|eq| target_coefficients(&eq.ubar, basis));
                match solved {
                    Ok(target) => Candidate::Accepted(Record { input: x, target }),
                    Err(e) => Candidate::Failed(e.to_string()),
                }
            })
            .collect();
        next += batch;
        for c in results {
            if records.len() == n {
                break;
            }
            match c {
                Candidate::Accepted(r) => records.push(r),
                Candidate::Rejected => rejections += 1,
                Candidate::Failed(msg) => {
                    failures += 1;
                    log::debug!("skipping candidate: {msg}");
                }
            }
        }
        let attempts = records.len() + failures;
        if attempts > 0 && failures as f64 > opts.max_failure_rate * attempts as f64 && failures >= 5 {
            return Err(Error::Invalid(format!(
                "{failures} of {attempts} perturbed games failed to solve; the model regime is unsuitable"
            )));
        }
    }
    if failures > 0 {
        log::info!("resampled {failures} candidates after solver failures");
    }
    Ok(Dataset {
        records,
        meta: DatasetMeta {
            kl_spec: spec.clone(),
            ellipsoid: opts.ellipsoid.clone(),
            reference_hash: model_hash(reference)?,
            basis: *basis,
            steps: opts.steps,
            seed,
            reference_target,
            solver_failures: failures,
            ellipsoid_rejections: rejections,
            tail_mass: spec.tail_mass(),
        },
    })
}

/// Settings of the training loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Keep every bias at zero so that the network maps 0 to the base point.
    pub bias_free: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 2000, batch: 32, seed: 0, bias_free: false }
    }
}

/// One learning-curve row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CurveRow<S: Scalar> {
    pub epoch: usize,
    pub train_risk: S,
    pub certificate: S,
    pub nonzeros: usize,
}

/// Trained network with its (base-point completed) architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<S: Scalar> {
    pub arch: RnoArchitecture<S>,
    pub weights: RnoWeights<S>,
    pub curve: Vec<CurveRow<S>>,
}

/// He-normal weights with zero biases, keyed on `(seed, layer, entry)`.
pub fn he_init<S: Scalar>(arch: &RnoArchitecture<S>, seed: u64) -> RnoWeights<S> {
    let mut w = RnoWeights::zeros(arch);
    for (l, layer) in w.layers.iter_mut().enumerate() {
        let std = (2.0 / arch.widths[l] as f64).sqrt();
        let mut g = KeyedNormals::new(seed, l as u64);
        for (k, v) in layer.a.as_mut_slice().iter_mut().enumerate() {
            *v = S::of(std * g.at(k as u64));
        }
    }
    w
}

/// Mean softened norm loss over `(inputs, targets)` and its gradient in the
/// flat parameter order of [`RnoWeights::flat`].
pub fn loss_and_grad<S: Scalar>(
    arch: &RnoArchitecture<S>,
    w: &RnoWeights<S>,
    inputs: &[&[S]],
    targets: &[&[S]],
) -> Result<(S, Vec<S>)> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return dim_err("loss needs matching nonempty inputs and targets");
    }
    let soft = S::of(LOSS_SOFTENING);
    let inv_n = S::one() / S::of_usize(inputs.len());
    let mut grads: Vec<(Vec<S>, Vec<S>)> =
        w.layers.iter().map(|l| (vec![S::zero(); l.a.as_slice().len()], vec![S::zero(); l.b.len()])).collect();
    let mut loss = S::zero();
    for (x, y) in inputs.iter().zip(targets) {
        if y.len() != arch.output_dim() {
            return dim_err(format!("target length {} differs from output dimension {}", y.len(), arch.output_dim()));
        }
        let tr = forward_trace(arch, w, x);
        let r: Vec<S> = tr.output.iter().zip(y.iter()).map(|(o, t)| *o - *t).collect();
        let nrm = (crate::scalar::dot(&r, &r) + soft).sqrt();
        loss += nrm * inv_n;
        // only the first n2 outputs depend on the parameters
        let mut gz: Vec<S> = r[..arch.n2].iter().map(|v| *v / nrm * inv_n).collect();
        for l in (0..w.layers.len()).rev() {
            let a = &w.layers[l].a;
            let act = &tr.activations[l];
            let (ga, gb) = &mut grads[l];
            let cols = a.cols();
            for (i, &g) in gz.iter().enumerate() {
                if g == S::zero() {
                    continue;
                }
                gb[i] += g;
                for (j, &aj) in act.iter().enumerate() {
                    ga[i * cols + j] += g * aj;
                }
            }
            if l > 0 {
                let back = a.tr_matvec(&gz);
                let z_prev = &tr.preacts[l - 1];
                gz = back.iter().zip(z_prev).map(|(b, z)| if *z > S::zero() { *b } else { S::zero() }).collect();
            }
        }
    }
    let mut flat = Vec::with_capacity(w.n_params());
    for (ga, gb) in grads {
        flat.extend(ga);
        flat.extend(gb);
    }
    Ok((loss, flat))
}

/// Mean and per-record unsquared output errors.
pub fn eval_risk<S: Scalar>(arch: &RnoArchitecture<S>, w: &RnoWeights<S>, data: &Dataset<S>) -> Result<(S, Vec<S>)> {
    w.check(arch)?;
    let per: Vec<S> = data
        .records
        .iter()
        .map(|r| {
            if r.target.len() != arch.output_dim() {
                return dim_err("target length differs from output dimension");
            }
            let out = forward(arch, w, &r.input);
            Ok(crate::scalar::norm2(&crate::scalar::sub_vec(&out, &r.target)))
        })
        .collect::<Result<_>>()?;
    let mean = if per.is_empty() {
        S::zero()
    } else {
        per.iter().fold(S::zero(), |a, &v| a + v) / S::of_usize(per.len())
    };
    Ok((mean, per))
}

/// Adam on the softened loss with a Lipschitz projection after every update
/// and pruning to the connectivity budget after every epoch.
pub fn train_erm<S: Scalar>(
    data: &Dataset<S>,
    arch: &RnoArchitecture<S>,
    opts: &TrainOptions,
) -> Result<TrainOutcome<S>> {
    if data.is_empty() {
        return Err(Error::Invalid("training needs a nonempty dataset".into()));
    }
    data.validate()?;
    if opts.batch == 0 || !(opts.lr > 0.0) {
        return Err(Error::Invalid("batch must be positive and lr positive".into()));
    }
    let nt = data.records[0].target.len();
    let mut arch = arch.clone();
    arch.y_base_coords = if data.meta.reference_target.len() == nt {
        data.meta.reference_target.clone()
    } else {
        let mut m = vec![S::zero(); nt];
        for r in &data.records {
            crate::scalar::axpy(S::one(), &r.target, &mut m);
        }
        m.into_iter().map(|v| v / S::of_usize(data.len())).collect()
    };
    arch.validate()?;
    let mut w = project_lipschitz(&arch, &he_init(&arch, opts.seed));
    let np = w.n_params();
    let bias_mask: Vec<bool> = w
        .layers
        .iter()
        .flat_map(|l| std::iter::repeat_n(false, l.a.as_slice().len()).chain(std::iter::repeat_n(true, l.b.len())))
        .collect();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut m1 = vec![0.0f64; np];
    let mut m2 = vec![0.0f64; np];
    let mut t = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch) {
            let xs: Vec<&[S]> = chunk.iter().map(|&i| data.records[i].input.as_slice()).collect();
            let ys: Vec<&[S]> = chunk.iter().map(|&i| data.records[i].target.as_slice()).collect();
            let (loss, g) = loss_and_grad(&arch, &w, &xs, &ys)?;
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: epoch });
            }
            t += 1;
            let mut p = w.flat();
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for k in 0..np {
                if opts.bias_free && bias_mask[k] {
                    continue;
                }
                let gk = g[k].to_f64_lossy();
                m1[k] = b1 * m1[k] + (1.0 - b1) * gk;
                m2[k] = b2 * m2[k] + (1.0 - b2) * gk * gk;
                let step = opts.lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                p[k] -= S::of(step);
            }
            w.set_flat(&p)?;
            w = project_lipschitz(&arch, &w);
        }
        w = prune_to_budget(&arch, &w);
        let (risk, _) = eval_risk(&arch, &w, data)?;
        if !risk.is_finite() {
            return Err(Error::NonFinite { step: epoch });
        }
        curve.push(CurveRow { epoch: epoch + 1, train_risk: risk, certificate: lipschitz_certificate(&w), nonzeros: w.nonzeros() });
    }
    w = prune_to_budget(&arch, &w);
    Ok(TrainOutcome { arch, weights: w, curve })
}

/// `eps + Lbar exp(-sqrt(2 r ln N)) + ln(2/delta)/N + sqrt(ln(2/delta)/N)`
/// with `Lbar = 2 max(L, 1)`.
pub fn pac_bound<S: Scalar>(epsilon: S, l: S, n: S, r: S, delta: S) -> Result<S> {
    if !(n >= S::one()) || !(delta > S::zero() && delta <= S::one()) || !(r > S::zero()) {
        return Err(Error::Domain("pac bound needs N >= 1, 0 < delta <= 1 and r > 0".into()));
    }
    if !(epsilon >= S::zero()) || !(l >= S::zero()) {
        return Err(Error::Domain("pac bound needs epsilon >= 0 and L >= 0".into()));
    }
    let lbar = S::of(2.0) * l.max(S::one());
    let log_term = (S::of(2.0) / delta).ln();
    Ok(epsilon + lbar * (-(S::of(2.0) * r * n.ln()).sqrt()).exp() + log_term / n + (log_term / n).sqrt())
}
