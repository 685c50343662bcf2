use serde::Serialize;
use tpa::models::gibbs::{GibbsFamily, LatticeGraph};
use tpa::models::posterior::{BallNorm, L1BallFamily};
use tpa::{ExpInterval, NestedFamily};

use crate::config::{FamilyKind, NormKind, Settings};
use crate::CliError;

pub enum Family {
    Exp(ExpInterval),
    Ising(GibbsFamily),
    Ball(L1BallFamily),
}

/// Evaluates `$body` with `$f` bound to the concrete family.
macro_rules! with_family {
    ($family:expr, $f:ident => $body:expr) => {
        match $family {
            $crate::family::Family::Exp($f) => $body,
            $crate::family::Family::Ising($f) => $body,
            $crate::family::Family::Ball($f) => $body,
        }
    };
}
pub(crate) use with_family;

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    pub kind: FamilyKind,
    pub beta_shell: f64,
    pub beta_center: f64,
    /// `ln mu(shell) - ln mu(center)` when an exact oracle exists.
    pub oracle_log_ratio: Option<f64>,
    pub log_center_measure: Option<f64>,
}

impl Family {
    pub fn build(settings: &Settings) -> Result<Family, CliError> {
        match settings.family()? {
            FamilyKind::ExpInterval => {
                let lambda = Settings::require(settings.lambda, "lambda", "expinterval")?;
                let shell = settings.shell.unwrap_or(0.0);
                Ok(Family::Exp(ExpInterval::new(shell, shell - lambda)?))
            }
            FamilyKind::Ising => {
                let beta = Settings::require(settings.beta, "beta", "ising")?;
                let graph = match &settings.edges {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| {
                            CliError::Config(format!("cannot read edge list {}: {e}", path.display()))
                        })?;
                        LatticeGraph::from_edge_list(&text, settings.vertices)?
                    }
                    None => LatticeGraph::lattice(
                        settings.width.unwrap_or(4),
                        settings.height.unwrap_or(4),
                        settings.wrap.unwrap_or(false),
                    )?,
                };
                Ok(Family::Ising(GibbsFamily::exact(graph, beta)?))
            }
            FamilyKind::L1Ball => {
                let dim = settings.dim.unwrap_or(1);
                let outer = Settings::require(settings.shell_radius, "shell_radius", "l1ball")?;
                let inner = Settings::require(settings.center_radius, "center_radius", "l1ball")?;
                let norm = match settings.norm.unwrap_or(NormKind::L1) {
                    NormKind::L1 => BallNorm::L1,
                    NormKind::Linf => BallNorm::LInf,
                };
                Ok(Family::Ball(L1BallFamily::with_norm(
                    vec![0.0; dim.max(1)],
                    tpa::models::posterior::Density::ExpL1,
                    inner,
                    outer,
                    norm,
                )?))
            }
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            Family::Exp(_) => FamilyKind::ExpInterval,
            Family::Ising(_) => FamilyKind::Ising,
            Family::Ball(_) => FamilyKind::L1Ball,
        }
    }

    pub fn log_center_measure(&self) -> Option<f64> {
        match self {
            Family::Ising(f) => Some(f.log_center_measure()),
            other => with_family!(other, f => f.log_measure(f.beta_center())),
        }
    }

    pub fn oracle_log_ratio(&self) -> Option<f64> {
        with_family!(self, f => Some(f.log_measure(f.beta_shell())? - f.log_measure(f.beta_center())?))
    }

    pub fn summary(&self) -> FamilySummary {
        let (beta_shell, beta_center) = with_family!(self, f => (f.beta_shell(), f.beta_center()));
        FamilySummary {
            kind: self.kind(),
            beta_shell,
            beta_center,
            oracle_log_ratio: self.oracle_log_ratio(),
            log_center_measure: self.log_center_measure(),
        }
    }
}
