//! On-disk problem description and run report.
//!
//! A problem file is JSON: dimensions, dynamics as expression strings, the
//! equilibrium pair, the operating region, and one or more named candidate
//! inclusions. Families pair a loose and a tight candidate by name for
//! interpolation. Reports are the machine-readable output of every
//! subcommand; a report embeds enough of the witness to replay verification.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::construct::CandidateFamily;
use crate::expr;
use crate::farkas::{
    CandidateLDI, DynamicalSystem, Halfspaces, Region, RegionError, SystemError, VertexSystem,
};
use crate::interval::Interval;
use crate::linalg::Mat;
use crate::Mat64;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(String),
    #[error("dynamics do not fix the stated equilibrium: residual {0:e}")]
    EquilibriumResidual(f64),
    #[error("the equilibrium pair is not strictly inside the region")]
    RegionExcludesEquilibrium,
    #[error("reading the problem file failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumJson {
    pub x_s: Vec<f64>,
    #[serde(default)]
    pub u_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspacesJson {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionJson {
    pub x_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub u_box: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfspaces: Option<HalfspacesJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyJson {
    pub loose: String,
    pub tight: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n_x: usize,
    pub n_u: usize,
    pub dynamics: Vec<String>,
    pub equilibrium: EquilibriumJson,
    pub region: RegionJson,
    pub candidates: BTreeMap<String, Vec<VertexJson>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub families: BTreeMap<String, FamilyJson>,
}

/// A problem file with everything parsed, validated, and cross-referenced.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: DynamicalSystem,
    pub region: Region,
    pub candidates: BTreeMap<String, CandidateLDI>,
    pub families: BTreeMap<String, CandidateFamily>,
}

fn mat_from_rows(rows: &[Vec<f64>], field: &str) -> Result<Mat64, LoadError> {
    if rows.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(LoadError::DimensionMismatch(field.to_string()));
    }
    Ok(Mat::from_rows(rows))
}

impl ProblemFile {
    pub fn from_str_named(text: &str, path: &str) -> Result<Self, LoadError> {
        serde_json::from_str(text).map_err(|e| LoadError::Parse {
            path: path.to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn compile(&self, path: &str) -> Result<Problem, LoadError> {
        if self.dynamics.len() != self.n_x {
            return Err(LoadError::DimensionMismatch("dynamics".into()));
        }
        let mut f = Vec::with_capacity(self.n_x);
        for (k, src) in self.dynamics.iter().enumerate() {
            let e = expr::parse::<f64>(src, self.n_x, self.n_u).map_err(|e| LoadError::Parse {
                path: path.to_string(),
                line: 0,
                message: format!("dynamics[{k}] {src:?}: {e}"),
            })?;
            f.push(e);
        }
        let system = DynamicalSystem::new(
            self.n_x,
            self.n_u,
            f,
            self.equilibrium.x_s.clone(),
            self.equilibrium.u_s.clone(),
        )
        .map_err(|e| match e {
            SystemError::EquilibriumResidual { residual } => {
                LoadError::EquilibriumResidual(residual)
            }
            SystemError::Dimension { field } => LoadError::DimensionMismatch(field.into()),
            SystemError::Eval(err) => LoadError::Parse {
                path: path.to_string(),
                line: 0,
                message: format!("evaluating the dynamics at the equilibrium: {err}"),
            },
        })?;

        let x_box: Vec<_> = self.region.x_box.iter().map(|&[a, b]| Interval::new(a, b)).collect();
        let u_box: Vec<_> = self.region.u_box.iter().map(|&[a, b]| Interval::new(a, b)).collect();
        let halfspaces = match &self.region.halfspaces {
            None => None,
            Some(h) => {
                let fmat = mat_from_rows(&h.f, "region.halfspaces.F")?;
                let emat = match &h.e {
                    Some(e) => mat_from_rows(e, "region.halfspaces.E")?,
                    None => Mat::zeros(fmat.rows, self.n_u),
                };
                Some(Halfspaces { f: fmat, e: emat })
            }
        };
        let region = Region::new(x_box, u_box, halfspaces, &system.x_s, &system.u_s).map_err(
            |e| match e {
                RegionError::ExcludesEquilibrium => LoadError::RegionExcludesEquilibrium,
                RegionError::Dimension { field } => LoadError::DimensionMismatch(field.into()),
                RegionError::BadBounds => LoadError::DimensionMismatch("region bounds".into()),
            },
        )?;

        let mut candidates = BTreeMap::new();
        for (name, verts) in &self.candidates {
            let mut systems = Vec::with_capacity(verts.len());
            for (i, v) in verts.iter().enumerate() {
                let a = mat_from_rows(&v.a, &format!("candidates.{name}[{i}].A"))?;
                let b = match &v.b {
                    Some(b) => mat_from_rows(b, &format!("candidates.{name}[{i}].B"))?,
                    None => Mat::zeros(self.n_x, self.n_u),
                };
                systems.push(VertexSystem { a, b });
            }
            let cand = CandidateLDI::new(systems, self.n_x, self.n_u)
                .map_err(|_| LoadError::DimensionMismatch(format!("candidates.{name}")))?;
            candidates.insert(name.clone(), cand);
        }

        let mut families = BTreeMap::new();
        for (name, fam) in &self.families {
            let loose = candidates
                .get(&fam.loose)
                .ok_or_else(|| LoadError::DimensionMismatch(format!("families.{name}.loose")))?;
            let tight = candidates
                .get(&fam.tight)
                .ok_or_else(|| LoadError::DimensionMismatch(format!("families.{name}.tight")))?;
            let family = CandidateFamily::new(loose.clone(), tight.clone())
                .map_err(|_| LoadError::DimensionMismatch(format!("families.{name}")))?;
            families.insert(name.clone(), family);
        }

        Ok(Problem { system, region, candidates, families })
    }
}

/// Read and fully validate a problem file.
pub fn load(path: impl AsRef<Path>) -> Result<Problem, LoadError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    ProblemFile::from_str_named(&text, &shown)?.compile(&shown)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessJson {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportStats {
    pub grid_points: u64,
    pub random_starts: u64,
    pub boxes_processed: u64,
    pub max_depth: u32,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TightenJson {
    /// Largest interpolation parameter whose candidate survived falsification.
    pub t_star: f64,
    /// Smallest probed parameter whose candidate was falsified (1.0 + tol
    /// means none were).
    pub t_hi: f64,
    pub inconclusive_probes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    /// "certified", "falsified", "not_falsified", or "inconclusive".
    pub outcome: String,
    /// Best signed margin seen: the witness objective when falsified, else
    /// minus the worst upper bound still standing.
    pub value: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessJson>,
    pub stats: ReportStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tighten: Option<TightenJson>,
    pub config_echo: serde_json::Value,
    pub tool_version: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> &'static str {
        r#"{
            "n_x": 2,
            "n_u": 0,
            "dynamics": ["2^x1 + x2", "x1 + 2*x2"],
            "equilibrium": {"x_s": [1.0, -1.0]},
            "region": {"x_box": [[-2.0, 2.0], [-2.0, 2.0]]},
            "candidates": {
                "tight": [
                    {"A": [[0.5, 1.0], [1.0, 2.0]]},
                    {"A": [[2.0, 1.0], [1.0, 2.0]]}
                ]
            }
        }"#
    }

    #[test]
    fn loads_a_minimal_problem() {
        let pf = ProblemFile::from_str_named(sample_json(), "inline").unwrap();
        let p = pf.compile("inline").unwrap();
        assert_eq!(p.system.n_x, 2);
        assert_eq!(p.candidates["tight"].n_d(), 2);
        assert!(p.region.contains(&[1.0, -1.0], &[]));
    }

    #[test]
    fn reports_the_json_line_on_parse_errors() {
        let broken = "{\n  \"n_x\": 2,\n  \"oops\"\n}";
        match ProblemFile::from_str_named(broken, "bad.json") {
            Err(LoadError::Parse { path, line, .. }) => {
                assert_eq!(path, "bad.json");
                assert_eq!(line, 4);
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_equilibria_and_misplaced_regions() {
        let pf = ProblemFile::from_str_named(sample_json(), "inline").unwrap();

        let mut wrong_eq = pf.clone();
        wrong_eq.equilibrium.x_s = vec![0.0, 0.0];
        assert!(matches!(
            wrong_eq.compile("inline"),
            Err(LoadError::EquilibriumResidual(r)) if r > 0.5
        ));

        let mut outside = pf.clone();
        outside.region.x_box = vec![[-2.0, 0.5], [-2.0, 2.0]];
        assert!(matches!(
            outside.compile("inline"),
            Err(LoadError::RegionExcludesEquilibrium)
        ));

        let mut ragged = pf;
        ragged.candidates.get_mut("tight").unwrap()[0].a = vec![vec![0.5, 1.0], vec![1.0]];
        assert!(matches!(
            ragged.compile("inline"),
            Err(LoadError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn problem_round_trips_through_serde() {
        let pf = ProblemFile::from_str_named(sample_json(), "inline").unwrap();
        let text = serde_json::to_string_pretty(&pf).unwrap();
        let back = ProblemFile::from_str_named(&text, "inline").unwrap();
        assert_eq!(back.dynamics, pf.dynamics);
        assert_eq!(back.candidates.len(), pf.candidates.len());
        back.compile("inline").unwrap();
    }

    #[test]
    fn report_round_trips_through_serde() {
        let report = Report {
            outcome: "falsified".into(),
            value: -0.25,
            epsilon: 1e-6,
            witness: Some(WitnessJson {
                x: vec![1.0, 2.0],
                u: vec![],
                y: vec![0.6, -0.8, 0.0],
                alpha: None,
                objective: -0.25,
            }),
            stats: ReportStats { grid_points: 121, ..Default::default() },
            tighten: None,
            config_echo: serde_json::json!({"seed": 7}),
            tool_version: "0.1.0".into(),
        };
        let text = serde_json::to_string(&report).unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back.outcome, "falsified");
        assert_eq!(back.witness.unwrap().y, vec![0.6, -0.8, 0.0]);
    }
}
