//! Composable fast linear operators.
//!
//! An effective system matrix `A = H · V_H · diag(√p) · Ξ` is represented as
//! a chain of stages, each with a fast apply and adjoint. Every apply charges
//! a complex-MAC estimate to an atomic flop counter so that complexity
//! separations between detectors can be asserted by counting operations
//! rather than by wall-clock timing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;

use crate::channel::ChannelRealization;
use crate::transform::RandomTransform;
use crate::util::{matvec, matvec_adj};
use crate::{Error, Result, C64};

/// One link in an operator chain.
#[derive(Clone)]
pub enum Stage {
    /// Sparse banded channel matrix (M x N).
    Sparse(Arc<ChannelRealization>),
    /// Dense complex matrix.
    Dense(Arc<Array2<C64>>),
    /// Real diagonal scaling.
    DiagReal(Arc<Vec<f64>>),
    /// Fast random transform.
    Transform(Arc<RandomTransform>),
}

impl Stage {
    pub fn input_dim(&self) -> usize {
        match self {
            Stage::Sparse(h) => h.input_dim(),
            Stage::Dense(m) => m.ncols(),
            Stage::DiagReal(d) => d.len(),
            Stage::Transform(t) => t.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Stage::Sparse(h) => h.output_dim(),
            Stage::Dense(m) => m.nrows(),
            Stage::DiagReal(d) => d.len(),
            Stage::Transform(t) => t.output_dim(),
        }
    }

    /// Complex-MAC estimate for one apply (forward or adjoint).
    fn flops(&self) -> u64 {
        match self {
            Stage::Sparse(h) => h.nnz() as u64,
            Stage::Dense(m) => (m.nrows() * m.ncols()) as u64,
            Stage::DiagReal(d) => d.len() as u64,
            Stage::Transform(t) => t.flops_per_apply(),
        }
    }

    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        match self {
            Stage::Sparse(h) => h.apply(x),
            Stage::Dense(m) => Ok(matvec(m, x)),
            Stage::DiagReal(d) => {
                Ok(x.iter().zip(d.iter()).map(|(v, s)| v * s).collect())
            }
            Stage::Transform(t) => t.apply(x),
        }
    }

    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        match self {
            Stage::Sparse(h) => h.adjoint_apply(y),
            Stage::Dense(m) => Ok(matvec_adj(m, y)),
            Stage::DiagReal(d) => {
                Ok(y.iter().zip(d.iter()).map(|(v, s)| v * s).collect())
            }
            Stage::Transform(t) => t.adjoint_apply(y),
        }
    }
}

/// Singular-form access `A = U · diag(σ) · W` used by the LMMSE-stage
/// detectors: `σ` is zero-padded to length N and `W` is a fast semi-unitary
/// operator. `left_u = None` means U is the identity.
pub struct SvdForm {
    pub left_u: Option<Arc<Array2<C64>>>,
    pub sigma: Vec<f64>,
    pub w: Arc<LinearOperator>,
}

/// A chain of stages applied input-side first: `apply` runs `stages[0]`,
/// then `stages[1]`, and so on.
pub struct LinearOperator {
    stages: Vec<Stage>,
    in_dim: usize,
    out_dim: usize,
    flops: AtomicU64,
    pub svd_form: Option<SvdForm>,
}

impl LinearOperator {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("operator needs at least one stage".into()));
        }
        for pair in stages.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Size(format!(
                    "stage output {} does not feed stage input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        let in_dim = stages[0].input_dim();
        let out_dim = stages.last().unwrap().output_dim();
        Ok(Self {
            stages,
            in_dim,
            out_dim,
            flops: AtomicU64::new(0),
            svd_form: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// y = A x.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.in_dim {
            return Err(Error::Size(format!(
                "apply expects length {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut v = x.to_vec();
        for s in &self.stages {
            v = s.apply(&v)?;
            self.flops.fetch_add(s.flops(), Ordering::Relaxed);
        }
        Ok(v)
    }

    /// x = Aᴴ y.
    pub fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        if y.len() != self.out_dim {
            return Err(Error::Size(format!(
                "adjoint expects length {}, got {}",
                self.out_dim,
                y.len()
            )));
        }
        let mut v = y.to_vec();
        for s in self.stages.iter().rev() {
            v = s.adjoint_apply(&v)?;
            self.flops.fetch_add(s.flops(), Ordering::Relaxed);
        }
        Ok(v)
    }

    /// r ↦ A Aᴴ r.
    pub fn gram_apply(&self, r: &[C64]) -> Result<Vec<C64>> {
        let x = self.adjoint_apply(r)?;
        self.apply(&x)
    }

    /// Cumulative complex-MAC count charged so far.
    pub fn flops_used(&self) -> u64 {
        self.flops.load(Ordering::Relaxed)
    }

    pub fn reset_flops(&self) {
        self.flops.store(0, Ordering::Relaxed);
    }

    /// Complex-MAC estimate of a single forward apply.
    pub fn flops_per_apply(&self) -> u64 {
        self.stages.iter().map(|s| s.flops()).sum()
    }

    /// Dense materialization for desk-scale oracles.
    pub fn to_dense(&self) -> Result<Array2<C64>> {
        let mut out = Array2::zeros((self.out_dim, self.in_dim));
        let mut e = vec![C64::new(0.0, 0.0); self.in_dim];
        for j in 0..self.in_dim {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply(&e)?;
            for i in 0..self.out_dim {
                out[(i, j)] = col[i];
            }
            e[j] = C64::new(0.0, 0.0);
        }
        Ok(out)
    }
}
