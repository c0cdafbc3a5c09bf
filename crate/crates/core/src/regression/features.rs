use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// State basis expanded inside each action block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Basis {
    /// All monomials of total degree `<= degree`, constant term included.
    Polynomial { degree: usize },
    /// The raw state coordinates; suits one-hot (tabular) state encodings.
    Identity,
}

impl Default for Basis {
    fn default() -> Self {
        Basis::Polynomial { degree: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureMapSpec {
    basis: Basis,
    state_dim: usize,
    n_actions: usize,
}

/// State basis crossed with an action one-hot: `phi(x, a)` places the basis vector of `x` in the
/// block of action `a` and zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureMapSpec", into = "FeatureMapSpec")]
pub struct FeatureMap {
    basis: Basis,
    state_dim: usize,
    n_actions: usize,
    exponents: Vec<Vec<u32>>,
}

impl TryFrom<FeatureMapSpec> for FeatureMap {
    type Error = Error;

    fn try_from(s: FeatureMapSpec) -> Result<Self> {
        FeatureMap::new(s.basis, s.state_dim, s.n_actions)
    }
}

impl From<FeatureMap> for FeatureMapSpec {
    fn from(f: FeatureMap) -> Self {
        FeatureMapSpec {
            basis: f.basis,
            state_dim: f.state_dim,
            n_actions: f.n_actions,
        }
    }
}

fn monomials(state_dim: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        let mut current = vec![0u32; state_dim];
        fill(&mut out, &mut current, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        fill(out, current, pos + 1, remaining - k);
    }
    current[pos] = 0;
}

impl FeatureMap {
    pub fn new(basis: Basis, state_dim: usize, n_actions: usize) -> Result<Self> {
        if state_dim == 0 || n_actions == 0 {
            return Err(Error::Shape("feature map needs state_dim >= 1 and n_actions >= 1".into()));
        }
        let exponents = match basis {
            Basis::Polynomial { degree } if degree >= 1 => monomials(state_dim, degree),
            Basis::Polynomial { .. } => return Err(Error::Domain("polynomial degree must be >= 1".into())),
            Basis::Identity => Vec::new(),
        };
        Ok(Self {
            basis,
            state_dim,
            n_actions,
            exponents,
        })
    }

    pub fn polynomial(degree: usize, state_dim: usize, n_actions: usize) -> Result<Self> {
        Self::new(Basis::Polynomial { degree }, state_dim, n_actions)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Length of the per-action block.
    pub fn block_dim(&self) -> usize {
        match self.basis {
            Basis::Polynomial { .. } => self.exponents.len(),
            Basis::Identity => self.state_dim,
        }
    }

    /// Total feature dimension `d = block_dim * n_actions`.
    pub fn dim(&self) -> usize {
        self.block_dim() * self.n_actions
    }

    /// Basis vector of `x` (one action block).
    pub fn state_basis<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.state_dim);
        match self.basis {
            Basis::Identity => out.copy_from_slice(x),
            Basis::Polynomial { .. } => {
                for (o, exps) in out.iter_mut().zip(&self.exponents) {
                    *o = exps
                        .iter()
                        .zip(x)
                        .fold(T::one(), |acc, (&e, &v)| acc * v.powi(e as i32));
                }
            }
        }
    }

    /// Writes `phi(x, a)` into `out` (length [`dim`](Self::dim)).
    pub fn features_into<T: Scalar>(&self, x: &[T], a: usize, out: &mut [T]) {
        let b = self.block_dim();
        out.iter_mut().for_each(|v| *v = T::zero());
        self.state_basis(x, &mut out[a * b..(a + 1) * b]);
    }

    pub fn features<T: Scalar>(&self, x: &[T], a: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.features_into(x, a, &mut out);
        out
    }

    /// Design matrix (row-major, `n x d`) for paired states and actions.
    pub fn design<T: Scalar>(&self, states: &[T], actions: &[usize]) -> Vec<T> {
        let d = self.dim();
        let mut out = vec![T::zero(); actions.len() * d];
        for (k, &a) in actions.iter().enumerate() {
            let x = &states[k * self.state_dim..(k + 1) * self.state_dim];
            self.features_into(x, a, &mut out[k * d..(k + 1) * d]);
        }
        out
    }
}

/// `C(p + degree, degree)`: number of monomials of total degree `<= degree` in `p` variables.
pub fn polynomial_term_count(state_dim: usize, degree: usize) -> usize {
    (1..=degree).fold(1usize, |acc, k| acc * (state_dim + k) / k)
}
