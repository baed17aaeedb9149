//! Persistent gait-family archives.
//!
//! An archive is a JSON document holding the model configuration, the
//! indicator scan, every traced branch with per-gait metadata, and the paths
//! of homotopy queries run against it. Floats are written in shortest
//! round-trip form, so loading reproduces every stored value bit for bit.

use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuation::{Branch, GaitFamily, IndicatorStatus, MapKind, ScanReport, SingularGait};
use crate::dynamics::{HybridModel, ModelDims, RobotState};
use crate::error::{Error, Result};
use crate::homotopy::{HomotopyPath, HomotopyStatus, QueryConstraint};
use crate::hybrid::{self, FlowOptions, GaitPoint};
use crate::models::ModelConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest periodicity residual the audit accepts.
pub const AUDIT_RESIDUAL_TOL: f64 = 1e-8;
/// Largest disagreement between a stored and a recomputed residual.
pub const AUDIT_MATCH_TOL: f64 = 1e-12;

/// One gait with its derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitRecord {
    /// Pre-impact state `[q; q̇]`.
    pub x0: Vec<f64>,
    pub tau: f64,
    pub mu: Vec<f64>,
    /// `‖P(c)‖`.
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_length: Option<f64>,
    /// True when the stance contact force pulls on the surface somewhere in
    /// the step (a gait that needs an adhesive foot).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulls: Option<bool>,
}

impl GaitRecord {
    pub fn new(model: &dyn HybridModel, c: &GaitPoint) -> Result<Self> {
        let traj = hybrid::trajectory(model, c, &FlowOptions::default())?;
        let residual =
            (traj.end_state().to_vector() - model.flip_matrix() * c.x0.to_vector()).norm();
        let mut pulls = None;
        for &t in &traj.solution.times {
            let eval = traj.dynamics_at(model, t)?;
            match model.normal_contact_force(&traj.state_at(t), &eval, &c.x0) {
                Some(f) => {
                    let p = pulls.get_or_insert(false);
                    *p |= f < 0.0;
                }
                None => break,
            }
        }
        Ok(Self {
            x0: c.x0.to_vector().iter().copied().collect(),
            tau: c.tau,
            mu: c.mu.iter().copied().collect(),
            residual,
            slope: model.slope(&c.x0),
            step_length: model.step_length(&c.x0),
            pulls,
        })
    }

    pub fn gait(&self) -> GaitPoint {
        GaitPoint::new(
            RobotState::from_vector(&DVector::from_column_slice(&self.x0)),
            self.tau,
            DVector::from_column_slice(&self.mu),
        )
    }
}

/// A polished singular equilibrium gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub tau: f64,
    pub indicator: f64,
    pub null_dim: usize,
    pub switchable: bool,
    pub tangent: Vec<f64>,
    pub post_impact_tangent: Vec<f64>,
}

impl From<&SingularGait> for SeedRecord {
    fn from(s: &SingularGait) -> Self {
        Self {
            tau: s.point.tau,
            indicator: s.indicator,
            null_dim: s.null_dim,
            switchable: s.switchable,
            tangent: s.tangent.iter().copied().collect(),
            post_impact_tangent: s.post_impact_tangent.iter().copied().collect(),
        }
    }
}

/// Indicator samples over the scan window and their classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub equilibrium: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equilibrium_slope: Option<f64>,
    pub mu: Vec<f64>,
    pub interval: (f64, f64),
    pub steps: usize,
    pub status: IndicatorStatus,
    pub remediation: String,
    /// `(τ, I(τ))` pairs.
    pub samples: Vec<(f64, f64)>,
    pub seeds: Vec<SeedRecord>,
}

impl ScanRecord {
    pub fn new(
        model: &dyn HybridModel,
        scan: &ScanReport,
        interval: (f64, f64),
        steps: usize,
    ) -> Self {
        Self {
            equilibrium: scan.equilibrium.to_vector().iter().copied().collect(),
            equilibrium_slope: model.slope(&scan.equilibrium),
            mu: scan.mu.iter().copied().collect(),
            interval,
            steps,
            status: scan.status,
            remediation: scan.status.remediation().to_string(),
            samples: scan.samples.clone(),
            seeds: scan.roots.iter().map(SeedRecord::from).collect(),
        }
    }
}

/// A traced curve of gaits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub seed_index: usize,
    pub level: usize,
    pub direction: i8,
    pub map: MapKind,
    pub step_size: f64,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub gaits: Vec<GaitRecord>,
}

impl BranchRecord {
    pub fn new(model: &dyn HybridModel, branch: &Branch) -> Result<Self> {
        let gaits = branch
            .gaits
            .par_iter()
            .map(|g| GaitRecord::new(model, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed_index: branch.seed_index,
            level: branch.level,
            direction: branch.direction,
            map: branch.map.clone(),
            step_size: branch.step_size,
            complete: branch.complete,
            diagnostic: branch.diagnostic.clone(),
            gaits,
        })
    }
}

/// One accepted homotopy iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub x0: Vec<f64>,
    pub tau: f64,
    pub mu: Vec<f64>,
    pub slacks: Vec<f64>,
    pub p: f64,
    pub merit: f64,
    pub lambda: f64,
    pub residual: f64,
}

/// A homotopy query run from a stored gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Model the query was solved with (it may add parameters to the
    /// archive's model, padded with zeros in the reference).
    pub model: ModelConfig,
    /// `(branch, gait)` of the reference in this archive.
    pub reference: (usize, usize),
    pub constraints: Vec<QueryConstraint>,
    pub h_reference: Vec<f64>,
    pub status: HomotopyStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub iterates: Vec<IterateRecord>,
}

impl QueryRecord {
    pub fn new(model: ModelConfig, reference: (usize, usize), path: &HomotopyPath) -> Self {
        let iterates = path
            .states
            .iter()
            .map(|s| IterateRecord {
                x0: s.gait.x0.to_vector().iter().copied().collect(),
                tau: s.gait.tau,
                mu: s.gait.mu.iter().copied().collect(),
                slacks: s.slacks.clone(),
                p: s.p,
                merit: s.merit,
                lambda: s.lambda,
                residual: s.residual,
            })
            .collect();
        Self {
            model,
            reference,
            constraints: path.constraints.clone(),
            h_reference: path.h_reference.clone(),
            status: path.status,
            diagnostic: path.diagnostic.clone(),
            iterates,
        }
    }
}

/// Everything produced for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyArchive {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub model_name: String,
    pub dims: ModelDims,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanRecord>,
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub queries: Vec<QueryRecord>,
}

impl FamilyArchive {
    pub fn new(config: &ModelConfig, model: &dyn HybridModel) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: config.resolved(),
            model_name: model.name(),
            dims: model.dims(),
            scan: None,
            branches: Vec::new(),
            queries: Vec::new(),
        }
    }

    pub fn from_family(
        config: &ModelConfig,
        model: &dyn HybridModel,
        family: &GaitFamily,
        interval: (f64, f64),
        steps: usize,
    ) -> Result<Self> {
        let mut archive = Self::new(config, model);
        archive.scan = Some(ScanRecord::new(model, &family.scan, interval, steps));
        archive.add_branches(model, &family.branches)?;
        Ok(archive)
    }

    pub fn add_branches(&mut self, model: &dyn HybridModel, branches: &[Branch]) -> Result<()> {
        for b in branches {
            self.branches.push(BranchRecord::new(model, b)?);
        }
        Ok(())
    }

    pub fn gait_count(&self) -> usize {
        self.branches.iter().map(|b| b.gaits.len()).sum()
    }

    pub fn gait(&self, branch: usize, index: usize) -> Result<GaitPoint> {
        self.branches
            .get(branch)
            .and_then(|b| b.gaits.get(index))
            .map(GaitRecord::gait)
            .ok_or_else(|| Error::InvalidInput(format!("no gait {index} on branch {branch}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let archive: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if archive.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported archive schema version {} (expected {SCHEMA_VERSION})",
                archive.schema_version
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Recompute the periodicity residual of every stored gait.
    pub fn audit(&self, model: &dyn HybridModel) -> Result<AuditReport> {
        let jobs: Vec<(usize, usize)> = self
            .branches
            .iter()
            .enumerate()
            .flat_map(|(b, br)| (0..br.gaits.len()).map(move |i| (b, i)))
            .collect();
        let recomputed = jobs
            .par_iter()
            .map(|&(b, i)| {
                let g = self.branches[b].gaits[i].gait();
                Ok(hybrid::periodicity(model, &g)?.norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut report = AuditReport::default();
        for (&(b, i), &r) in jobs.iter().zip(&recomputed) {
            let stored = self.branches[b].gaits[i].residual;
            let mismatch = (stored - r).abs();
            report.checked += 1;
            report.max_residual = report.max_residual.max(r);
            report.max_mismatch = report.max_mismatch.max(mismatch);
            if r >= AUDIT_RESIDUAL_TOL || mismatch > AUDIT_MATCH_TOL {
                report.failures.push(AuditFailure {
                    branch: b,
                    index: i,
                    stored,
                    recomputed: r,
                });
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFailure {
    pub branch: usize,
    pub index: usize,
    pub stored: f64,
    pub recomputed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub max_residual: f64,
    pub max_mismatch: f64,
    pub failures: Vec<AuditFailure>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn archive_with(gaits: Vec<GaitPoint>) -> (FamilyArchive, Box<dyn HybridModel>) {
        let cfg = ModelConfig::new(ModelKind::Compass);
        let model = cfg.build().unwrap();
        let branch = Branch {
            seed_index: 0,
            level: 1,
            direction: 1,
            map: MapKind::ConstantControl { mu: vec![] },
            step_size: 0.05,
            gaits,
            complete: true,
            diagnostic: None,
        };
        let mut a = FamilyArchive::new(&cfg, model.as_ref());
        a.add_branches(model.as_ref(), &[branch]).unwrap();
        (a, model)
    }

    fn equilibrium(tau: f64) -> GaitPoint {
        GaitPoint::new(RobotState::zeros(2), tau, DVector::zeros(0))
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (mut a, _) = archive_with(vec![equilibrium(0.1), equilibrium(1.0 / 3.0)]);
        a.branches[0].gaits[1].x0[2] = 0.1 + 0.2;
        a.branches[0].gaits[1].residual = 1e-300 * std::f64::consts::PI;
        let back = FamilyArchive::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let bits = |r: &FamilyArchive| r.branches[0].gaits[1].x0[2].to_bits();
        assert_eq!(bits(&back), bits(&a));
    }

    #[test]
    fn rejects_other_schema_versions() {
        let (mut a, _) = archive_with(vec![equilibrium(0.5)]);
        a.schema_version = SCHEMA_VERSION + 1;
        assert!(matches!(
            FamilyArchive::from_json(&a.to_json().unwrap()),
            Err(Error::Format(_))
        ));
        assert!(FamilyArchive::from_json("{").is_err());
    }

    #[test]
    fn equilibrium_records_have_zero_residual_and_push() {
        let (a, _) = archive_with(vec![equilibrium(0.7)]);
        let g = &a.branches[0].gaits[0];
        assert_eq!(g.residual, 0.0);
        assert_eq!(g.slope, Some(0.0));
        assert_eq!(g.step_length, Some(0.0));
        assert_eq!(g.pulls, Some(false));
    }

    #[test]
    fn audit_flags_non_gaits_and_tampering() {
        let off = GaitPoint::new(
            RobotState::from_slices(&[0.1, -0.1], &[0.0, 0.0]),
            0.5,
            DVector::zeros(0),
        );
        let (mut a, model) = archive_with(vec![equilibrium(0.5), off]);
        let report = a.audit(model.as_ref()).unwrap();
        assert_eq!(report.checked, 2);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].index, 1);
        a.branches[0].gaits.truncate(1);
        a.branches[0].gaits[0].residual = 1e-9;
        assert!(!a.audit(model.as_ref()).unwrap().passed());
    }
}
