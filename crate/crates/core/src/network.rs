//! Reaction networks with mass-action kinetics.
//!
//! A network holds the stoichiometry `C` (species × reactions), the system
//! size `Ω`, and the map from reactions to kinetic constants. All kinetic
//! quantities of the diffusion approximation are available here: reaction
//! rates `v(s; θ)`, drift `μ = C v`, diffusion `D = C diag(v) Cᵀ`, and their
//! first derivatives with respect to state and parameters.
//!
//! A rate that evaluates negative (only possible when the state has negative
//! components) is clamped to zero, and all of its derivatives are zero too.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single reaction `Σ p_j X_j → Σ q_j X_j` scaled by one kinetic constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reaction {
    pub reactant_coeffs: Vec<u32>,
    pub product_coeffs: Vec<u32>,
    pub rate_param_index: usize,
}

impl Reaction {
    pub fn new(reactant_coeffs: Vec<u32>, product_coeffs: Vec<u32>, rate_param_index: usize) -> Self {
        Self {
            reactant_coeffs,
            product_coeffs,
            rate_param_index,
        }
    }

    /// Net change `q − p`.
    pub fn change(&self) -> Vec<i64> {
        self.product_coeffs
            .iter()
            .zip(&self.reactant_coeffs)
            .map(|(&q, &p)| q as i64 - p as i64)
            .collect()
    }
}

/// Sparse per-reaction view used by the hot loops.
#[derive(Debug, Clone)]
pub(crate) struct CompiledReaction {
    pub param: usize,
    /// `(species, order)` for every species with a positive reactant coefficient.
    pub reactants: Vec<(usize, u32)>,
    /// Nonzero entries `(species, C_ik)` of the reaction vector.
    pub changes: Vec<(usize, f64)>,
    /// Nonzero entries of `C_k C_kᵀ` with `i ≤ j`.
    pub outer: Vec<(usize, usize, f64)>,
}

/// `x^n` by repeated multiplication for the small orders of mass action.
#[inline]
fn ipow(x: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(n as i32),
    }
}

impl CompiledReaction {
    fn new(reaction: &Reaction) -> Self {
        let reactants = reaction
            .reactant_coeffs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(j, &p)| (j, p))
            .collect();
        let changes: Vec<(usize, f64)> = reaction
            .change()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c != 0)
            .map(|(j, c)| (j, c as f64))
            .collect();
        let mut outer = Vec::new();
        for (a, &(i, ci)) in changes.iter().enumerate() {
            for &(j, cj) in &changes[a..] {
                outer.push((i.min(j), i.max(j), ci * cj));
            }
        }
        Self {
            param: reaction.rate_param_index,
            reactants,
            changes,
            outer,
        }
    }

    /// Value of the monomial `∏ s_j^{p_j}`, its gradient over the reactant
    /// species (`grad[a]`), and its Hessian (`hess[a * r + b]`).
    pub fn monomial_jet(&self, s: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let r = self.reactants.len();
        let mono = self.reactants.iter().fold(1.0, |acc, &(j, p)| acc * ipow(s[j], p));
        for a in 0..r {
            let (ja, pa) = self.reactants[a];
            let rest: f64 = self
                .reactants
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != a)
                .map(|(_, &(j, p))| ipow(s[j], p))
                .product();
            let pa_f = pa as f64;
            grad[a] = pa_f * ipow(s[ja], pa - 1) * rest;
            hess[a * r + a] = if pa >= 2 {
                pa_f * (pa_f - 1.0) * ipow(s[ja], pa - 2) * rest
            } else {
                0.0
            };
            for b in (a + 1)..r {
                let (jb, pb) = self.reactants[b];
                let rest2: f64 = self
                    .reactants
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != a && c != b)
                    .map(|(_, &(j, p))| ipow(s[j], p))
                    .product();
                let v = pa_f * pb as f64 * ipow(s[ja], pa - 1) * ipow(s[jb], pb - 1) * rest2;
                hess[a * r + b] = v;
                hess[b * r + a] = v;
            }
        }
        mono
    }

    /// Monomial value and gradient only.
    pub fn monomial_grad(&self, s: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.reactants.len();
        let mono = self.reactants.iter().fold(1.0, |acc, &(j, p)| acc * ipow(s[j], p));
        for a in 0..r {
            let (ja, pa) = self.reactants[a];
            let rest: f64 = self
                .reactants
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != a)
                .map(|(_, &(j, p))| ipow(s[j], p))
                .product();
            grad[a] = pa as f64 * ipow(s[ja], pa - 1) * rest;
        }
        mono
    }
}

/// Stoichiometry, kinetics and system size of a reaction network.
#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    species_names: Vec<String>,
    param_names: Vec<String>,
    reactions: Vec<Reaction>,
    stoichiometry: DMatrix<f64>,
    system_size: f64,
    pub(crate) compiled: Vec<CompiledReaction>,
}

impl ReactionNetwork {
    /// Assemble and validate a network. The number of kinetic constants is
    /// one past the largest `rate_param_index`.
    pub fn new(reactions: Vec<Reaction>, species_count: usize, system_size: f64) -> Result<Self> {
        if species_count == 0 {
            return Err(Error::Network("at least one species is required".into()));
        }
        if reactions.is_empty() {
            return Err(Error::Network("at least one reaction is required".into()));
        }
        if !(system_size > 0.0 && system_size.is_finite()) {
            return Err(Error::Network(format!("system size must be positive, got {system_size}")));
        }
        let mut stoichiometry = DMatrix::zeros(species_count, reactions.len());
        for (k, r) in reactions.iter().enumerate() {
            if r.reactant_coeffs.len() != species_count || r.product_coeffs.len() != species_count {
                return Err(Error::Dimension(format!(
                    "reaction {k} has coefficient vectors of length {}/{} but the network has {species_count} species",
                    r.reactant_coeffs.len(),
                    r.product_coeffs.len()
                )));
            }
            let change = r.change();
            if change.iter().all(|&c| c == 0) {
                return Err(Error::ZeroReaction(k));
            }
            for (j, c) in change.into_iter().enumerate() {
                stoichiometry[(j, k)] = c as f64;
            }
        }
        let n_params = reactions.iter().map(|r| r.rate_param_index).max().unwrap_or(0) + 1;
        let compiled = reactions.iter().map(CompiledReaction::new).collect();
        Ok(Self {
            species_names: (1..=species_count).map(|j| format!("X{j}")).collect(),
            param_names: (1..=n_params).map(|n| format!("theta{n}")).collect(),
            reactions,
            stoichiometry,
            system_size,
            compiled,
        })
    }

    pub fn with_species_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.species_count() {
            return Err(Error::Dimension("species name count".into()));
        }
        self.species_names = names;
        Ok(self)
    }

    pub fn with_param_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.param_count() {
            return Err(Error::Dimension("parameter name count".into()));
        }
        self.param_names = names;
        Ok(self)
    }

    /// Enzyme + Substrate ⇌ Complex → Enzyme + Product with one constant per
    /// reaction; species order (Enzyme, Substrate, Complex, Product).
    pub fn michaelis_menten() -> Self {
        let reactions = vec![
            Reaction::new(vec![1, 1, 0, 0], vec![0, 0, 1, 0], 0),
            Reaction::new(vec![0, 0, 1, 0], vec![1, 1, 0, 0], 1),
            Reaction::new(vec![0, 0, 1, 0], vec![1, 0, 0, 1], 2),
        ];
        Self::new(reactions, 4, 1.0)
            .and_then(|n| {
                n.with_species_names(
                    ["Enzyme", "Substrate", "Complex", "Product"].iter().map(|s| s.to_string()).collect(),
                )
            })
            .expect("static network is valid")
    }

    /// ∅ → X at rate θ₁ and X → ∅ at rate θ₂·x.
    pub fn birth_death() -> Self {
        let reactions = vec![Reaction::new(vec![0], vec![1], 0), Reaction::new(vec![1], vec![0], 1)];
        Self::new(reactions, 1, 1.0).expect("static network is valid")
    }

    pub fn species_count(&self) -> usize {
        self.stoichiometry.nrows()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_names.len()
    }

    pub fn system_size(&self) -> f64 {
        self.system_size
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn species_names(&self) -> &[String] {
        &self.species_names
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// `J × K` matrix whose column `k` is `q_k − p_k`.
    pub fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.stoichiometry
    }

    fn check_dims(&self, s: &[f64], theta: &[f64]) {
        assert_eq!(s.len(), self.species_count(), "state length");
        assert_eq!(theta.len(), self.param_count(), "parameter length");
    }

    /// Mass-action rates `v_k = θ_{n(k)} ∏ s_j^{p_kj}`, clamped at zero.
    pub fn reaction_rates(&self, s: &[f64], theta: &[f64]) -> DVector<f64> {
        self.check_dims(s, theta);
        DVector::from_iterator(
            self.reaction_count(),
            self.compiled.iter().map(|r| {
                let mono = r.reactants.iter().fold(1.0, |acc, &(j, p)| acc * ipow(s[j], p));
                (theta[r.param] * mono).max(0.0)
            }),
        )
    }

    /// `μ(s; θ) = C v(s; θ)`.
    pub fn drift(&self, s: &[f64], theta: &[f64]) -> DVector<f64> {
        &self.stoichiometry * self.reaction_rates(s, theta)
    }

    /// `D(s; θ) = C diag(v) Cᵀ`.
    pub fn diffusion_matrix(&self, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let v = self.reaction_rates(s, theta);
        let c = &self.stoichiometry;
        c * DMatrix::from_diagonal(&v) * c.transpose()
    }

    /// `∂v_k/∂s_j` as a `K × J` matrix.
    pub fn rate_jacobian_state(&self, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
        self.check_dims(s, theta);
        let mut out = DMatrix::zeros(self.reaction_count(), self.species_count());
        let mut grad = vec![0.0; self.species_count()];
        for (k, r) in self.compiled.iter().enumerate() {
            let mono = r.monomial_grad(s, &mut grad);
            if theta[r.param] * mono < 0.0 {
                continue;
            }
            for (a, &(j, _)) in r.reactants.iter().enumerate() {
                out[(k, j)] = theta[r.param] * grad[a];
            }
        }
        out
    }

    /// `∂v_k/∂θ_n` as a `K × N` matrix.
    pub fn rate_grad_params(&self, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
        self.check_dims(s, theta);
        let mut out = DMatrix::zeros(self.reaction_count(), self.param_count());
        for (k, r) in self.compiled.iter().enumerate() {
            let mono = r.reactants.iter().fold(1.0, |acc, &(j, p)| acc * ipow(s[j], p));
            if theta[r.param] * mono >= 0.0 {
                out[(k, r.param)] = mono;
            }
        }
        out
    }

    /// `∇_s μ` (`J × J`).
    pub fn drift_jacobian_state(&self, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
        &self.stoichiometry * self.rate_jacobian_state(s, theta)
    }

    /// `∂μ/∂θ` (`J × N`).
    pub fn drift_grad_params(&self, s: &[f64], theta: &[f64]) -> DMatrix<f64> {
        &self.stoichiometry * self.rate_grad_params(s, theta)
    }

    /// `∂D/∂θ_n` for every `n`.
    pub fn diffusion_grad_params(&self, s: &[f64], theta: &[f64]) -> Vec<DMatrix<f64>> {
        let dv = self.rate_grad_params(s, theta);
        let c = &self.stoichiometry;
        (0..self.param_count())
            .map(|n| c * DMatrix::from_diagonal(&dv.column(n).into_owned()) * c.transpose())
            .collect()
    }

    /// `∂D/∂s_j` for every `j`.
    pub fn diffusion_jacobian_state(&self, s: &[f64], theta: &[f64]) -> Vec<DMatrix<f64>> {
        let dv = self.rate_jacobian_state(s, theta);
        let c = &self.stoichiometry;
        (0..self.species_count())
            .map(|j| c * DMatrix::from_diagonal(&dv.column(j).into_owned()) * c.transpose())
            .collect()
    }

    /// Propensities in counts: `ω = Ω v(x / Ω; θ)`.
    pub fn propensities(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        let omega = self.system_size;
        let s: Vec<f64> = x.iter().map(|&xi| xi / omega).collect();
        self.reaction_rates(&s, theta) * omega
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::Network(format!("network file: {e}")))?;
        spec.build()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_file_spec(&self) -> NetworkFile {
        let to_map = |coeffs: &[u32]| {
            coeffs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(j, &c)| (self.species_names[j].clone(), c))
                .collect()
        };
        NetworkFile {
            species: self.species_names.clone(),
            omega: self.system_size,
            reactions: self
                .reactions
                .iter()
                .map(|r| ReactionEntry {
                    reactants: to_map(&r.reactant_coeffs),
                    products: to_map(&r.product_coeffs),
                    param: self.param_names[r.rate_param_index].clone(),
                })
                .collect(),
        }
    }
}

/// JSON network definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub species: Vec<String>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub reactions: Vec<ReactionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionEntry {
    #[serde(default)]
    pub reactants: BTreeMap<String, u32>,
    #[serde(default)]
    pub products: BTreeMap<String, u32>,
    pub param: String,
}

fn default_omega() -> f64 {
    1.0
}

impl NetworkFile {
    /// Parameters are numbered in order of first appearance.
    pub fn build(&self) -> Result<ReactionNetwork> {
        let index_of = |name: &str| {
            self.species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Network(format!("unknown species '{name}'")))
        };
        let mut params: Vec<String> = Vec::new();
        let mut reactions = Vec::with_capacity(self.reactions.len());
        for entry in &self.reactions {
            let mut p = vec![0; self.species.len()];
            let mut q = vec![0; self.species.len()];
            for (name, &c) in &entry.reactants {
                p[index_of(name)?] = c;
            }
            for (name, &c) in &entry.products {
                q[index_of(name)?] = c;
            }
            let n = match params.iter().position(|x| x == &entry.param) {
                Some(n) => n,
                None => {
                    params.push(entry.param.clone());
                    params.len() - 1
                }
            };
            reactions.push(Reaction::new(p, q, n));
        }
        ReactionNetwork::new(reactions, self.species.len(), self.omega)?
            .with_species_names(self.species.clone())?
            .with_param_names(params)
    }
}

/// Kinetic constants `θ` and measurement-noise variances `σ`, concatenated
/// as `η = (θ, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ParameterVector {
    pub fn new(theta: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = theta.iter().chain(&sigma).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("parameters must be strictly positive, got {bad}")));
        }
        Ok(Self { theta, sigma })
    }

    /// Split a flat `η` into its `θ` and `σ` blocks.
    pub fn from_eta(eta: &[f64], n_theta: usize) -> Result<Self> {
        if eta.len() < n_theta {
            return Err(Error::Dimension(format!("η has {} entries, need at least {n_theta}", eta.len())));
        }
        Self::new(eta[..n_theta].to_vec(), eta[n_theta..].to_vec())
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_eta(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.sigma).copied().collect()
    }
}
