//! Karhunen-Loeve rule sampling, tempered variances, exponentially
//! ellipsoidal sets and the exact empirical 1-Wasserstein distance.
//!
//! Coordinate slot `s` of the flattened rule vector carries basis index
//! `i = s + 1`, so every decay factor is `exp(-r i)` with `i >= 1`.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::RulePerturbation;
use crate::noise::KeyedNormals;
use crate::operator_core::{unflatten, BasisEnumeration};
use crate::scalar::Scalar;

/// Stream offset separating rule samples from path noise under one seed.
const SAMPLE_STREAM_BASE: u64 = 1 << 62;

/// Law of the i.i.d. coefficients `Z_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZLaw {
    #[default]
    StandardNormal,
}

/// Truncated expansion `X = sum_{i <= I_max} sigma_i Z_i e_i`.
///
/// Without `tempered_delta`, `sigma_i = scale * exp(-rate * i)`; with it,
/// `sigma_i = scale * tempered_sigma_at(delta, rate, i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct KlSpec<S: Scalar> {
    pub rate: S,
    pub scale: S,
    pub trunc_dim: usize,
    pub enumeration: BasisEnumeration,
    #[serde(default)]
    pub z_law: ZLaw,
    #[serde(default)]
    pub tempered_delta: Option<S>,
}

impl<S: Scalar> KlSpec<S> {
    pub fn new(rate: S, scale: S, trunc_dim: usize, enumeration: BasisEnumeration) -> Result<Self> {
        let s = Self { rate, scale, trunc_dim, enumeration, z_law: ZLaw::StandardNormal, tempered_delta: None };
        s.validate()?;
        Ok(s)
    }

    /// Tempered variant for a sampling failure probability `delta_x`.
    pub fn tempered(delta_x: S, rate: S, trunc_dim: usize, enumeration: BasisEnumeration) -> Result<Self> {
        let s = Self {
            rate,
            scale: S::one(),
            trunc_dim,
            enumeration,
            z_law: ZLaw::StandardNormal,
            tempered_delta: Some(delta_x),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > S::zero()) || !self.rate.is_finite() {
            return Err(Error::Invalid("KL rate must be positive".into()));
        }
        if !(self.scale >= S::zero()) || !self.scale.is_finite() {
            return Err(Error::Invalid("KL scale must be nonnegative".into()));
        }
        if self.trunc_dim > self.enumeration.len() {
            return Err(Error::Invalid(format!(
                "truncation {} exceeds the {} available coordinates",
                self.trunc_dim,
                self.enumeration.len()
            )));
        }
        if let Some(d) = self.tempered_delta {
            if !(d > S::zero() && d <= S::one()) {
                return Err(Error::Domain("tempered delta_x must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    /// `sigma_1 .. sigma_{I_max}`.
    pub fn sigmas(&self) -> Vec<S> {
        match self.tempered_delta {
            Some(d) => tempered_sigma(d, self.rate, self.trunc_dim).into_iter().map(|v| v * self.scale).collect(),
            None => (1..=self.trunc_dim).map(|i| self.scale * (-self.rate * S::of_usize(i)).exp()).collect(),
        }
    }

    /// Bound `scale * exp(-rate I_max) / (exp(rate) - 1)` on the untruncated tail sum.
    pub fn tail_mass(&self) -> S {
        self.scale * (-self.rate * S::of_usize(self.trunc_dim)).exp() / self.rate.exp_m1()
    }
}

/// Coordinate box `|x_i - c_i| <= rho exp(-i rbar)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct EllipsoidSpec<S: Scalar> {
    pub rho: S,
    pub rate: S,
    #[serde(default)]
    pub center: Vec<S>,
}

impl<S: Scalar> EllipsoidSpec<S> {
    pub fn new(rho: S, rate: S) -> Result<Self> {
        let s = Self { rho, rate, center: Vec::new() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > S::zero()) || !(self.rate > S::zero()) || !self.rho.is_finite() || !self.rate.is_finite() {
            return Err(Error::Invalid("ellipsoid rho and rate must be positive".into()));
        }
        Ok(())
    }

    /// Half-width at slot `s`.
    pub fn radius(&self, slot: usize) -> S {
        self.rho * (-S::of_usize(slot + 1) * self.rate).exp()
    }
}

/// Whether `x` lies in the (closed) ellipsoid; missing center entries are 0.
pub fn ellipsoid_membership<S: Scalar>(x: &[S], ell: &EllipsoidSpec<S>) -> bool {
    x.iter().enumerate().all(|(s, &v)| {
        let c = ell.center.get(s).copied().unwrap_or_else(S::zero);
        (v - c).abs() <= ell.radius(s)
    })
}

/// Coordinate vectors of `n` draws; draw `j` uses its own noise stream.
pub fn sample_coords<S: Scalar>(spec: &KlSpec<S>, n: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    sample_coords_from(spec, 0, n, seed)
}

/// Draws `first .. first + n` of the sequence behind [`sample_coords`].
pub fn sample_coords_from<S: Scalar>(spec: &KlSpec<S>, first: usize, n: usize, seed: u64) -> Result<Vec<Vec<S>>> {
    spec.validate()?;
    let sig = spec.sigmas();
    let len = spec.enumeration.len();
    Ok((first..first + n)
        .into_par_iter()
        .map(|j| {
            let mut g = KeyedNormals::new(seed, SAMPLE_STREAM_BASE + j as u64);
            let mut x = vec![S::zero(); len];
            for (s, &sg) in sig.iter().enumerate() {
                if sg != S::zero() {
                    x[s] = sg * S::of(g.at(s as u64));
                }
            }
            x
        })
        .collect())
}

/// `n` i.i.d. rule perturbations from `spec`.
pub fn sample_rules<S: Scalar>(spec: &KlSpec<S>, n: usize, seed: u64) -> Result<Vec<RulePerturbation<S>>> {
    sample_coords(spec, n, seed)?.iter().map(|x| unflatten(x, &spec.enumeration)).collect()
}

/// `Delta = l / (2 + l)` with `l = ln(1 / (1 - delta_x))`; equals 1 at `delta_x = 1`.
pub fn tempered_base<S: Scalar>(delta_x: S) -> Result<S> {
    if !(delta_x > S::zero() && delta_x <= S::one()) {
        return Err(Error::Domain(format!("delta_x must lie in (0, 1], got {delta_x}")));
    }
    let l = -(-delta_x).ln_1p();
    if !l.is_finite() {
        return Ok(S::one());
    }
    Ok(l / (S::of(2.0) + l))
}

/// `exp(-r i) / sqrt(ln 2 - i ln Delta)` at index `i`.
pub fn tempered_sigma_at<S: Scalar>(delta_x: S, rate: S, i: usize) -> Result<S> {
    let big_delta = tempered_base(delta_x)?;
    let fi = S::of_usize(i);
    // at Delta = 1 the log term vanishes; ln(1) is exactly 0 so no NaN arises
    let denom = (S::LN_2() - fi * big_delta.ln()).sqrt();
    Ok((-rate * fi).exp() / denom)
}

/// `sigma_1 .. sigma_dims` at equality in the tempered bound.
pub fn tempered_sigma<S: Scalar>(delta_x: S, rate: S, dims: usize) -> Vec<S> {
    (1..=dims).map(|i| tempered_sigma_at(delta_x, rate, i).unwrap_or_else(|_| S::nan())).collect()
}

/// Fraction of `n` draws inside `ell`.
pub fn coverage_estimate<S: Scalar>(spec: &KlSpec<S>, ell: &EllipsoidSpec<S>, n: usize, seed: u64) -> Result<S> {
    if n == 0 {
        return Err(Error::Invalid("coverage needs at least one sample".into()));
    }
    ell.validate()?;
    let xs = sample_coords(spec, n, seed)?;
    let hits = xs.iter().filter(|x| ellipsoid_membership(x, ell)).count();
    Ok(S::of_usize(hits) / S::of_usize(n))
}

/// Minimum-cost perfect matching on a square cost matrix (row-major).
///
/// Shortest augmenting paths with potentials; returns `assign[row] = col`.
pub fn min_cost_assignment<S: Scalar>(n: usize, cost: &[S]) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return dim_err(format!("assignment expects {} costs, got {}", n * n, cost.len()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("assignment costs must be finite".into()));
    }
    // 1-based arrays with a virtual column 0
    let inf = S::infinity();
    let mut u = vec![S::zero(); n + 1];
    let mut v = vec![S::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// Exact `W_1` between the uniform empirical measures on `xs` and `ys`.
pub fn w1_empirical<S: Scalar>(xs: &[Vec<S>], ys: &[Vec<S>]) -> Result<S> {
    let n = xs.len();
    if n == 0 || ys.len() != n {
        return dim_err(format!("W1 needs two nonempty samples of equal size, got {} and {}", n, ys.len()));
    }
    let d = xs[0].len();
    if xs.iter().chain(ys).any(|v| v.len() != d) {
        return dim_err("W1 samples have inconsistent dimensions");
    }
    // fixed argument order makes the result exactly symmetric
    let lex = |a: &[Vec<S>], b: &[Vec<S>]| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(p, q)| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    let (xs, ys) = if lex(xs, ys).is_gt() { (ys, xs) } else { (xs, ys) };
    let mut cost = Vec::with_capacity(n * n);
    for x in xs {
        for y in ys {
            cost.push(crate::scalar::norm2(&crate::scalar::sub_vec(x, y)));
        }
    }
    let assign = min_cost_assignment(n, &cost)?;
    let total = assign.iter().enumerate().fold(S::zero(), |acc, (i, &j)| acc + cost[i * n + j]);
    Ok(total / S::of_usize(n))
}

/// Header record of a sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct SampleFileMeta<S: Scalar> {
    pub spec: KlSpec<S>,
    pub seed: u64,
    pub n: usize,
    pub tail_mass: S,
}

/// Writes a JSON-lines sample file: one metadata record, then one vector per line.
pub fn write_samples_jsonl<S: Scalar>(path: &Path, meta: &SampleFileMeta<S>, xs: &[Vec<S>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, meta)?;
    f.write_all(b"\n")?;
    for x in xs {
        serde_json::to_writer(&mut f, x)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a file written by [`write_samples_jsonl`].
pub fn read_samples_jsonl<S: Scalar>(path: &Path) -> Result<(SampleFileMeta<S>, Vec<Vec<S>>)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let head = lines.next().ok_or_else(|| Error::Invalid("empty sample file".into()))??;
    let meta: SampleFileMeta<S> = serde_json::from_str(&head)?;
    let mut xs = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            xs.push(serde_json::from_str(&line)?);
        }
    }
    Ok((meta, xs))
}
