//! Structural definition of a DGLM: family, regression layout, evolution
//! matrix and discount groups.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::Covariates;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// y ~ Bin(h, π), logit(π) = λ.
    BinomialLogistic,
    /// y ~ Po(μ), log(μ) = λ.
    PoissonLoglinear,
    /// y ~ N(λ, v) with Beta-Gamma stochastic volatility on 1/v.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ComponentKind {
    Intercept,
    /// Level and slope, evolving as [[1, 1], [0, 1]].
    LinearTrend,
    Covariate(String),
    /// One harmonic of a Fourier seasonal with the given period.
    Fourier { period: f64, harmonic: u32 },
}

impl ComponentKind {
    pub fn dim(&self) -> usize {
        match self {
            ComponentKind::Intercept | ComponentKind::Covariate(_) => 1,
            ComponentKind::LinearTrend | ComponentKind::Fourier { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub kind: ComponentKind,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct DglmSpec {
    family: Family,
    components: Vec<Component>,
    discounts: BTreeMap<String, f64>,
    rho: f64,
    volatility_discount: f64,
    #[serde(skip)]
    derived: Derived,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Derived {
    g: DMatrix<f64>,
    /// Discount factor of every state coordinate's group.
    coord_discount: Vec<f64>,
    /// Group index of every state coordinate.
    coord_group: Vec<usize>,
    offsets: Vec<usize>,
}

/// The 2×2 rotation block of harmonic `j` for a seasonal of period `p`.
pub fn harmonic_block(period: f64, harmonic: u32) -> [[f64; 2]; 2] {
    let w = 2.0 * PI * f64::from(harmonic) / period;
    let (s, c) = w.sin_cos();
    [[c, s], [-s, c]]
}

impl DglmSpec {
    pub fn builder(family: Family) -> DglmSpecBuilder {
        DglmSpecBuilder {
            family,
            components: Vec::new(),
            discounts: BTreeMap::new(),
            rho: 1.0,
            volatility_discount: 1.0,
        }
    }

    fn validate_and_derive(mut self) -> Result<Self> {
        if self.components.is_empty() {
            return Err(Error::Config("a DGLM needs at least one component".into()));
        }
        let in_unit = |x: f64| x > 0.0 && x <= 1.0;
        for (g, d) in &self.discounts {
            if !in_unit(*d) {
                return Err(Error::Config(format!("discount for group `{g}` must lie in (0, 1], got {d}")));
            }
        }
        if !in_unit(self.rho) {
            return Err(Error::Config(format!("random-effects discount must lie in (0, 1], got {}", self.rho)));
        }
        if !in_unit(self.volatility_discount) {
            return Err(Error::Config(format!(
                "volatility discount must lie in (0, 1], got {}",
                self.volatility_discount
            )));
        }
        let groups: Vec<&String> = self.discounts.keys().collect();
        let dim: usize = self.components.iter().map(|c| c.kind.dim()).sum();
        let mut g = DMatrix::zeros(dim, dim);
        let mut coord_discount = Vec::with_capacity(dim);
        let mut coord_group = Vec::with_capacity(dim);
        let mut offsets = Vec::with_capacity(self.components.len());
        let mut at = 0;
        for c in &self.components {
            let gi = groups
                .iter()
                .position(|name| **name == c.group)
                .ok_or_else(|| Error::Config(format!("component `{}` uses undeclared group `{}`", c.name, c.group)))?;
            if let ComponentKind::Fourier { period, harmonic } = c.kind {
                if !(period > 0.0) || harmonic == 0 {
                    return Err(Error::Config(format!("invalid Fourier component `{}`", c.name)));
                }
            }
            offsets.push(at);
            match &c.kind {
                ComponentKind::Intercept | ComponentKind::Covariate(_) => g[(at, at)] = 1.0,
                ComponentKind::LinearTrend => {
                    g[(at, at)] = 1.0;
                    g[(at, at + 1)] = 1.0;
                    g[(at + 1, at + 1)] = 1.0;
                }
                ComponentKind::Fourier { period, harmonic } => {
                    let h = harmonic_block(*period, *harmonic);
                    for i in 0..2 {
                        for j in 0..2 {
                            g[(at + i, at + j)] = h[i][j];
                        }
                    }
                }
            }
            for _ in 0..c.kind.dim() {
                coord_discount.push(self.discounts[&c.group]);
                coord_group.push(gi);
            }
            at += c.kind.dim();
        }
        self.derived = Derived {
            g,
            coord_discount,
            coord_group,
            offsets,
        };
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn discounts(&self) -> &BTreeMap<String, f64> {
        &self.discounts
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn volatility_discount(&self) -> f64 {
        self.volatility_discount
    }

    pub fn state_dim(&self) -> usize {
        self.derived.coord_group.len()
    }

    pub fn evolution_matrix(&self) -> &DMatrix<f64> {
        &self.derived.g
    }

    pub(crate) fn coord_discount(&self) -> &[f64] {
        &self.derived.coord_discount
    }

    pub(crate) fn coord_group(&self) -> &[usize] {
        &self.derived.coord_group
    }

    /// Copy of this spec with a different random-effects discount.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let mut s = self.clone();
        s.rho = rho;
        s.validate_and_derive()
    }

    /// State coordinates occupied by the named component.
    pub fn component_range(&self, name: &str) -> Option<Range<usize>> {
        let i = self.components.iter().position(|c| c.name == name)?;
        let start = self.derived.offsets[i];
        Some(start..start + self.components[i].kind.dim())
    }

    /// Coordinates of the component `name`, or of all harmonics of the
    /// Fourier block declared under that name.
    pub fn coords_named(&self, name: &str) -> Vec<usize> {
        let prefix = format!("{name}_");
        self.components
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                c.name == name
                    || (matches!(c.kind, ComponentKind::Fourier { .. }) && c.name.starts_with(&prefix))
            })
            .flat_map(|(i, c)| self.derived.offsets[i]..self.derived.offsets[i] + c.kind.dim())
            .collect()
    }

    /// State coordinates of every component in a discount group.
    pub fn group_coords(&self, group: &str) -> Vec<usize> {
        match self.discounts.keys().position(|g| g == group) {
            Some(gi) => (0..self.state_dim()).filter(|&i| self.derived.coord_group[i] == gi).collect(),
            None => Vec::new(),
        }
    }

    /// Builds the regression vector F for one day.
    pub fn regression_vector(&self, cov: &Covariates) -> Result<DVector<f64>> {
        let mut f = DVector::zeros(self.state_dim());
        for (c, &at) in self.components.iter().zip(&self.derived.offsets) {
            match &c.kind {
                ComponentKind::Intercept | ComponentKind::LinearTrend | ComponentKind::Fourier { .. } => f[at] = 1.0,
                ComponentKind::Covariate(col) => f[at] = cov.require(col)?,
            }
        }
        Ok(f)
    }

    /// Names of the covariate columns this spec reads.
    pub fn covariate_columns(&self) -> Vec<&str> {
        self.components
            .iter()
            .filter_map(|c| match &c.kind {
                ComponentKind::Covariate(col) => Some(col.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Deserialize)]
struct RawSpec {
    family: Family,
    components: Vec<Component>,
    discounts: BTreeMap<String, f64>,
    rho: f64,
    volatility_discount: f64,
}

impl TryFrom<RawSpec> for DglmSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        DglmSpec {
            family: raw.family,
            components: raw.components,
            discounts: raw.discounts,
            rho: raw.rho,
            volatility_discount: raw.volatility_discount,
            derived: Derived::default(),
        }
        .validate_and_derive()
    }
}

pub struct DglmSpecBuilder {
    family: Family,
    components: Vec<Component>,
    discounts: BTreeMap<String, f64>,
    rho: f64,
    volatility_discount: f64,
}

impl DglmSpecBuilder {
    pub fn component(mut self, name: &str, kind: ComponentKind, group: &str) -> Self {
        self.components.push(Component {
            name: name.to_string(),
            kind,
            group: group.to_string(),
        });
        self
    }

    pub fn intercept(self, name: &str, group: &str) -> Self {
        self.component(name, ComponentKind::Intercept, group)
    }

    pub fn linear_trend(self, name: &str, group: &str) -> Self {
        self.component(name, ComponentKind::LinearTrend, group)
    }

    pub fn covariate(self, column: &str, group: &str) -> Self {
        self.component(column, ComponentKind::Covariate(column.to_string()), group)
    }

    /// Adds harmonics 1..=harmonics of a Fourier seasonal, all in `group`.
    pub fn fourier(mut self, name: &str, period: f64, harmonics: u32, group: &str) -> Self {
        for j in 1..=harmonics {
            self = self.component(&format!("{name}_{j}"), ComponentKind::Fourier { period, harmonic: j }, group);
        }
        self
    }

    pub fn discount(mut self, group: &str, delta: f64) -> Self {
        self.discounts.insert(group.to_string(), delta);
        self
    }

    pub fn rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn volatility_discount(mut self, beta: f64) -> Self {
        self.volatility_discount = beta;
        self
    }

    pub fn build(self) -> Result<DglmSpec> {
        DglmSpec {
            family: self.family,
            components: self.components,
            discounts: self.discounts,
            rho: self.rho,
            volatility_discount: self.volatility_discount,
            derived: Derived::default(),
        }
        .validate_and_derive()
    }
}
