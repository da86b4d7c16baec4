//! Machine-readable reports: versioned JSON documents with floats quantized
//! to 15 significant digits (so identical runs serialize byte-identically),
//! and CSV point clouds for traces.

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::action::InvarianceReport;
use crate::config::{PipelineConfig, SamplingConfig, Tolerances};
use crate::foliation::{
    ClassifyOutcome, CriticalPoint, LabelledLeaf, LeafCertification, ScanSummary,
};
use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u64 = 1;

fn vec_of(p: &DVector<f64>) -> Vec<f64> {
    p.as_slice().to_vec()
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub mode: String,
    pub value: f64,
    pub point: Vec<f64>,
    pub projected_gradient_norm: f64,
    pub restarts_used: usize,
    pub converged_restarts: usize,
    pub extra_values: Vec<f64>,
}

impl From<&CriticalPoint> for CriticalPointReport {
    fn from(cp: &CriticalPoint) -> Self {
        CriticalPointReport {
            mode: cp.mode.as_str().to_string(),
            value: cp.value,
            point: vec_of(&cp.point),
            projected_gradient_norm: cp.projected_gradient_norm,
            restarts_used: cp.restarts_used,
            converged_restarts: cp.converged_restarts,
            extra_values: cp.extra_values.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafReportEntry {
    pub label: String,
    pub seed: Vec<f64>,
    pub points: usize,
    pub max_kernel_residual: Vec<f64>,
    pub max_orbit_distance: f64,
    pub closure_residuals: Vec<f64>,
    pub certified: bool,
    pub failures: Vec<String>,
}

impl LeafReportEntry {
    pub fn new(label: &str, cert: &LeafCertification) -> Self {
        LeafReportEntry {
            label: label.to_string(),
            seed: vec_of(&cert.seed),
            points: cert.points,
            max_kernel_residual: cert.max_kernel_residual.clone(),
            max_orbit_distance: cert.max_orbit_distance,
            closure_residuals: cert.closure_residuals.clone(),
            certified: cert.certified,
            failures: cert.failures.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisBlock {
    pub ok: bool,
    pub violations: Vec<String>,
    #[serde(flatten)]
    pub residuals: InvarianceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyBlock {
    pub verdict: String,
    pub hypotheses: HypothesisBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1_gap: Option<f64>,
    pub critical_points: Vec<CriticalPointReport>,
    pub leaves: Vec<LeafReportEntry>,
    pub diagnostics: Vec<String>,
}

impl ClassifyBlock {
    pub fn new(outcome: &ClassifyOutcome) -> Self {
        let critical_points = outcome
            .critical
            .iter()
            .flat_map(|pair| {
                [
                    CriticalPointReport::from(&pair.max),
                    CriticalPointReport::from(&pair.min),
                ]
            })
            .collect();
        ClassifyBlock {
            verdict: outcome.verdict.as_str().to_string(),
            hypotheses: HypothesisBlock {
                ok: outcome.hypothesis_violations.is_empty(),
                violations: outcome.hypothesis_violations.clone(),
                residuals: outcome.invariance.clone(),
            },
            scan: outcome.scan.clone(),
            s1_max: outcome.critical.as_ref().map(|c| c.max.value),
            s1_min: outcome.critical.as_ref().map(|c| c.min.value),
            s1_gap: outcome.critical.as_ref().map(|c| c.gap),
            critical_points,
            leaves: outcome
                .leaves
                .iter()
                .map(
                    |LabelledLeaf {
                         label,
                         certification,
                     }| { LeafReportEntry::new(label, certification) },
                )
                .collect(),
            diagnostics: outcome.diagnostics.clone(),
        }
    }
}

/// Wrap a command result into the versioned report envelope.
pub fn envelope(command: &str, scenario: &Scenario, verdict: Option<&str>, result: Value) -> Value {
    let mut doc = json!({
        "schema": SCHEMA_VERSION,
        "command": command,
        "scenario_id": scenario.id,
        "scenario_hash": scenario.hash(),
        "seed": scenario.sampling.seed,
        "config": effective_config(&scenario.tolerances, &scenario.sampling, &scenario.pipeline),
        "result": result,
    });
    if let Some(v) = verdict {
        doc["verdict"] = Value::String(v.to_string());
    }
    quantize_floats(&mut doc);
    doc
}

fn effective_config(
    tol: &Tolerances,
    sampling: &SamplingConfig,
    pipeline: &PipelineConfig,
) -> Value {
    json!({
        "tolerances": tol,
        "sampling": sampling,
        "pipeline": pipeline,
    })
}

/// Round every float in the document to 15 significant digits.
pub fn quantize_floats(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    let q: f64 = format!("{f:.14e}").parse().unwrap_or(f);
                    if let Some(num) = serde_json::Number::from_f64(q) {
                        *n = num;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(quantize_floats),
        Value::Object(map) => map.values_mut().for_each(quantize_floats),
        _ => {}
    }
}

/// Render a JSON document deterministically (sorted keys come from
/// serde_json's BTreeMap objects; floats are already quantized).
pub fn to_pretty_string(v: &Value) -> String {
    let mut out = serde_json::to_string_pretty(v).unwrap_or_else(|_| "{}".to_string());
    out.push('\n');
    out
}

/// CSV point cloud: coordinates, `S_1`, one kernel residual per generator,
/// and the distance to the reference orbit.
pub fn trace_csv(
    coord_names: &[String],
    points: &[DVector<f64>],
    s1: &[f64],
    kernel_residuals: &[Vec<f64>],
    orbit_distances: &[f64],
    num_generators: usize,
) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = coord_names.to_vec();
    header.push("s1".to_string());
    for i in 1..=num_generators {
        header.push(format!("kres_z{i}"));
    }
    header.push("orbit_distance".to_string());
    let _ = writer.write_record(&header);
    for (((p, &s), kres), &od) in points
        .iter()
        .zip(s1)
        .zip(kernel_residuals)
        .zip(orbit_distances)
    {
        let mut row: Vec<String> = p.iter().map(|x| format!("{x:.14e}")).collect();
        row.push(format!("{s:.14e}"));
        for v in kres {
            row.push(format!("{v:.14e}"));
        }
        row.push(format!("{od:.14e}"));
        let _ = writer.write_record(&row);
    }
    String::from_utf8(writer.into_inner().unwrap_or_default()).unwrap_or_default()
}
