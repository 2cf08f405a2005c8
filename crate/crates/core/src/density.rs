//! Nonparametric density estimation over attribute histories.
//!
//! Two estimators share this module: a kernel estimator with an exponential
//! kernel, used to score and sample candidate event centers, and a discrete
//! histogram ([`Pmf`]) over binned variables, used for entropy computations.
//! Both treat every valid (episode, step) pair as one sample.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{AttributeKind, AttributeSchema, Dataset};

/// Exponential-kernel parameters. The kernel weight of a sample at distance
/// `d` from the query is `exp(-w * d)`; `alpha` is an overall scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub w: f64,
    pub alpha: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { w: 1.0, alpha: 1.0 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w.is_finite() && self.w > 0.0) {
            return Err(Error::Config(format!("kernel w must be positive, got {}", self.w)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "kernel alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Binning layout: one edge vector per component of each attribute.
/// Integer-grid attributes get one bin per lattice point; continuous ones get
/// equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    edges: Vec<Vec<Vec<f64>>>,
}

impl GridSpec {
    /// Default layout for a schema: unit bins on integer grids,
    /// `continuous_bins` equal-width bins per continuous component.
    pub fn unit_default(schema: &AttributeSchema, continuous_bins: usize) -> Result<Self> {
        if continuous_bins == 0 {
            return Err(Error::Config("continuous_bins must be positive".into()));
        }
        let mut edges = Vec::with_capacity(schema.attributes.len());
        for a in &schema.attributes {
            let mut per_attr = Vec::with_capacity(a.dim);
            for c in 0..a.dim {
                let comp = match a.kind {
                    AttributeKind::IntegerGrid => {
                        let lo = a.lower[c].round() as i64;
                        let hi = a.upper[c].round() as i64;
                        (lo..=hi + 1).map(|v| v as f64 - 0.5).collect::<Vec<_>>()
                    }
                    AttributeKind::Continuous => {
                        let width = (a.upper[c] - a.lower[c]) / continuous_bins as f64;
                        (0..=continuous_bins)
                            .map(|j| a.lower[c] + width * j as f64)
                            .collect()
                    }
                };
                per_attr.push(comp);
            }
            edges.push(per_attr);
        }
        let g = GridSpec { edges };
        g.validate()?;
        Ok(g)
    }

    pub fn from_edges(edges: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let g = GridSpec { edges };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, attr) in self.edges.iter().enumerate() {
            for comp in attr {
                if comp.len() < 2 {
                    return Err(Error::Config(format!("attribute {} has a component with no bins", i)));
                }
                if comp.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "attribute {} has non-increasing bin edges",
                        i
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_attrs(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<Vec<f64>>] {
        &self.edges
    }

    /// Number of joint bins of attribute `i` (product over components).
    pub fn attr_bins(&self, i: usize) -> Result<u32> {
        let attr = self
            .edges
            .get(i)
            .ok_or_else(|| Error::Index(format!("attribute {} of {}", i, self.edges.len())))?;
        let mut n: u64 = 1;
        for comp in attr {
            n *= (comp.len() - 1) as u64;
            if n > u32::MAX as u64 {
                return Err(Error::Config(format!("attribute {} has too many bins", i)));
            }
        }
        Ok(n as u32)
    }

    /// Joint bin id of a value of attribute `i` (mixed radix over components).
    /// Values outside the edge range clamp into the nearest boundary bin.
    pub fn bin_of(&self, i: usize, value: &[f64]) -> Result<u32> {
        let attr = self
            .edges
            .get(i)
            .ok_or_else(|| Error::Index(format!("attribute {} of {}", i, self.edges.len())))?;
        if value.len() != attr.len() {
            return Err(Error::DimensionMismatch {
                expected: attr.len(),
                got: value.len(),
            });
        }
        let mut id: u64 = 0;
        for (comp, &v) in attr.iter().zip(value) {
            let nbins = comp.len() - 1;
            let p = comp.partition_point(|e| *e <= v);
            let b = p.clamp(1, nbins) - 1;
            id = id * nbins as u64 + b as u64;
        }
        Ok(id as u32)
    }
}

/// How a histogram variable is read from the dataset. Offsets are relative to
/// the base step of each sample; an `Event` column is filled from caller
/// weights instead of stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarSource {
    Attribute { attr: usize, offset: i64 },
    Action { offset: i64 },
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarRole {
    Target,
    Parent,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PmfVar {
    pub source: VarSource,
    pub role: VarRole,
}

/// Sparse normalized histogram over binned variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    vars: Vec<PmfVar>,
    cards: Vec<u32>,
    table: BTreeMap<Vec<u32>, f64>,
}

impl Pmf {
    pub fn from_table(vars: Vec<PmfVar>, cards: Vec<u32>, table: BTreeMap<Vec<u32>, f64>) -> Result<Self> {
        let p = Pmf { vars, cards, table };
        p.validate()?;
        Ok(p)
    }

    pub fn vars(&self) -> &[PmfVar] {
        &self.vars
    }

    pub fn cards(&self) -> &[u32] {
        &self.cards
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u32>, f64)> {
        self.table.iter().map(|(k, &v)| (k, v))
    }

    pub fn mass(&self, key: &[u32]) -> f64 {
        self.table.get(key).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.table.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vars.len() != self.cards.len() {
            return Err(Error::MalformedPmf("vars and cards lengths differ".into()));
        }
        for (key, &mass) in &self.table {
            if key.len() != self.vars.len() {
                return Err(Error::MalformedPmf("key arity mismatch".into()));
            }
            if key.iter().zip(&self.cards) .any(|(k, c)| k >= c) {
                return Err(Error::MalformedPmf("key outside variable cardinality".into()));
            }
            if !(mass.is_finite() && mass >= 0.0) {
                return Err(Error::MalformedPmf(format!("bad mass {}", mass)));
            }
        }
        let total = self.total();
        if !self.table.is_empty() && (total - 1.0).abs() > 1e-9 {
            return Err(Error::MalformedPmf(format!("total mass {} != 1", total)));
        }
        Ok(())
    }

    /// Marginal over the selected variable positions (in the given order).
    pub fn marginalize(&self, keep: &[usize]) -> Result<Pmf> {
        for &k in keep {
            if k >= self.vars.len() {
                return Err(Error::Index(format!("pmf var {} of {}", k, self.vars.len())));
            }
        }
        let mut table: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (key, mass) in self.iter() {
            let sub: Vec<u32> = keep.iter().map(|&k| key[k]).collect();
            *table.entry(sub).or_insert(0.0) += mass;
        }
        Ok(Pmf {
            vars: keep.iter().map(|&k| self.vars[k]).collect(),
            cards: keep.iter().map(|&k| self.cards[k]).collect(),
            table,
        })
    }
}

/// Base-step range `[lo, hi]` over which every var's offset stays in-bounds.
fn base_range(horizon: usize, offsets: &[i64]) -> Result<(usize, usize)> {
    let h = horizon as i64;
    let mut lo: i64 = 0;
    let mut hi: i64 = h;
    for &off in offsets {
        lo = lo.max(-off);
        hi = hi.min(h - off);
    }
    if lo > hi {
        return Err(Error::EmptyDataset(
            "no step satisfies all variable offsets".into(),
        ));
    }
    Ok((lo as usize, hi as usize))
}

/// Kernel density at `query` for the joint of `vars`, a list of
/// (attribute, step offset) pairs. `query` concatenates the attribute values
/// in `vars` order. Normalized by the number of contributing samples.
pub fn kde_density(d: &Dataset, vars: &[(usize, i64)], query: &[f64], k: &KernelConfig) -> Result<f64> {
    k.validate()?;
    d.validate()?;
    if vars.is_empty() {
        return Err(Error::Config("kde needs at least one variable".into()));
    }
    let mut dims = Vec::with_capacity(vars.len());
    let mut total_dim = 0;
    for &(attr, _) in vars {
        let a = d.schema.attr(attr)?;
        dims.push(a.dim);
        total_dim += a.dim;
    }
    if query.len() != total_dim {
        return Err(Error::DimensionMismatch {
            expected: total_dim,
            got: query.len(),
        });
    }
    let offsets: Vec<i64> = vars.iter().map(|&(_, off)| off).collect();
    let (lo, hi) = base_range(d.horizon(), &offsets)?;

    let mut sum = 0.0;
    for ep in &d.episodes {
        for t in lo..=hi {
            let mut dist = 0.0;
            let mut q0 = 0;
            for (v, &(attr, off)) in vars.iter().enumerate() {
                let value = &ep[(t as i64 + off) as usize].obs[attr];
                let mut sq = 0.0;
                for c in 0..dims[v] {
                    let delta = query[q0 + c] - value[c];
                    sq += delta * delta;
                }
                dist += sq.sqrt();
                q0 += dims[v];
            }
            sum += (-k.w * dist).exp();
        }
    }
    let count = (d.episode_count() * (hi - lo + 1)) as f64;
    Ok(k.alpha * k.w * sum / count)
}

/// Histogram over binned variables, normalized to total mass one.
///
/// Weights are per base sample, row-major by episode then step. With an
/// `Event` column present they are soft event memberships: each sample puts
/// weight `m` on `E = 1` and `1 - m` on `E = 0`. Without one they scale whole
/// samples, and zero-weight samples drop out entirely.
pub fn empirical_pmf(
    d: &Dataset,
    vars: &[PmfVar],
    g: &GridSpec,
    weights: Option<&[f64]>,
) -> Result<Pmf> {
    d.validate()?;
    if vars.is_empty() {
        return Err(Error::Config("pmf needs at least one variable".into()));
    }
    if g.n_attrs() != d.schema.n_attrs() {
        return Err(Error::DimensionMismatch {
            expected: d.schema.n_attrs(),
            got: g.n_attrs(),
        });
    }

    let mut offsets = Vec::new();
    let mut event_pos: Option<usize> = None;
    let mut cards = Vec::with_capacity(vars.len());
    for (i, v) in vars.iter().enumerate() {
        match v.source {
            VarSource::Attribute { attr, offset } => {
                d.schema.attr(attr)?;
                offsets.push(offset);
                cards.push(g.attr_bins(attr)?.max(1));
            }
            VarSource::Action { offset } => {
                offsets.push(offset);
                cards.push(d.schema.action_count as u32);
            }
            VarSource::Event => {
                if event_pos.replace(i).is_some() {
                    return Err(Error::MalformedPmf("more than one event column".into()));
                }
                cards.push(2);
            }
        }
    }
    let (lo, hi) = base_range(d.horizon(), &offsets)?;
    let n_t = hi - lo + 1;
    let n = d.episode_count() * n_t;

    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::MalformedPmf("weights must lie in [0, 1]".into()));
        }
    } else if event_pos.is_some() {
        return Err(Error::MalformedPmf("event column requires weights".into()));
    }

    let mut table: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut key = vec![0u32; vars.len()];
    let mut total = 0.0;
    for (l, ep) in d.episodes.iter().enumerate() {
        for t in lo..=hi {
            let w = weights.map_or(1.0, |w| w[l * n_t + (t - lo)]);
            for (i, v) in vars.iter().enumerate() {
                key[i] = match v.source {
                    VarSource::Attribute { attr, offset } => {
                        g.bin_of(attr, &ep[(t as i64 + offset) as usize].obs[attr])?
                    }
                    VarSource::Action { offset } => {
                        ep[(t as i64 + offset) as usize].action as u32
                    }
                    VarSource::Event => 0,
                };
            }
            match event_pos {
                Some(e) => {
                    // Soft membership splits one unit of mass across E=0/1.
                    if w > 0.0 {
                        key[e] = 1;
                        *table.entry(key.clone()).or_insert(0.0) += w;
                    }
                    if w < 1.0 {
                        key[e] = 0;
                        *table.entry(key.clone()).or_insert(0.0) += 1.0 - w;
                    }
                    total += 1.0;
                }
                None => {
                    if w > 0.0 {
                        *table.entry(key.clone()).or_insert(0.0) += w;
                        total += w;
                    }
                }
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    for mass in table.values_mut() {
        *mass /= total;
    }
    Pmf::from_table(vars.to_vec(), cards, table)
}

/// Draw a candidate event center for attribute `i`: pick a stored sample
/// uniformly, then displace it by a Gamma(dim, 1/w) radius in a uniform
/// direction, clamped into the attribute's box.
pub fn sample_center<R: Rng + ?Sized>(
    d: &Dataset,
    i: usize,
    k: &KernelConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    k.validate()?;
    let spec = d.schema.attr(i)?.clone();
    let samples = d.attribute_samples(i, None)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no samples to center on".into()));
    }
    let (_, _, base) = samples[rng.random_range(0..samples.len())];
    let mut center = base.to_vec();

    let gamma = Gamma::new(spec.dim as f64, 1.0 / k.w)
        .map_err(|e| Error::Config(format!("bad gamma parameters: {}", e)))?;
    let radius = gamma.sample(rng);
    let mut dir = vec![0.0; spec.dim];
    loop {
        let mut norm_sq = 0.0f64;
        for c in dir.iter_mut() {
            *c = rng.sample(StandardNormal);
            norm_sq += *c * *c;
        }
        if norm_sq > 1e-24 {
            let norm = norm_sq.sqrt();
            for c in dir.iter_mut() {
                *c /= norm;
            }
            break;
        }
    }
    for c in 0..spec.dim {
        center[c] = (center[c] + radius * dir[c]).clamp(spec.lower[c], spec.upper[c]);
    }
    Ok(center)
}
