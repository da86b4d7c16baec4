//! Scenario ingestion: the TOML schema, the compiled-in catalog, dotted-path
//! overrides, validation, and assembly into runnable domain objects.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::TorusAction;
use crate::config::{PipelineConfig, SamplingConfig, Tolerances};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{AmbientSpace, LevelSetManifold, OneForm};
use crate::sample;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientConfig {
    pub coords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symplectic_pairs: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaConfig {
    pub coeffs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub constraints: Vec<String>,
    pub levels: Vec<f64>,
}

/// Either closed-form rotations (integer weights per symplectic pair) or
/// explicit generator component expressions integrated numerically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_weights: Option<Vec<Vec<i64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Optional trace seed; the max critical point is used when absent.
    pub seed_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Expected classification verdict; drives the exit code when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    pub ambient: AmbientConfig,
    pub alpha: AlphaConfig,
    pub manifold: ManifoldConfig,
    pub action: ActionConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub trace: TraceConfig,
}

const EXAMPLE1_TOML: &str = r#"
id = "example1"
expect = "two_distinct_toroidal_leaves"

[ambient]
coords = ["x1", "y1", "x2", "y2", "x3", "y3"]
symplectic_pairs = [[0, 1], [2, 3], [4, 5]]

[alpha]
coeffs = ["y1/2", "-x1/2", "y2/2", "-x2/2", "y3/2", "-x3/2"]

[manifold]
constraints = ["(x1^2 + y1^2)^2 + x2^2 + y2^2", "x2^2 + y2^2 + x3^2 + y3^2"]
levels = [4.0, 1.0]

[action]
rotation_weights = [[1, 1, 1], [0, 1, 1]]
"#;

const EXAMPLE2_TOML: &str = r#"
id = "example2"
expect = "all_leaves_toroidal"

[ambient]
coords = ["x1", "y1", "x2", "y2", "x3", "y3"]
symplectic_pairs = [[0, 1], [2, 3], [4, 5]]

[alpha]
coeffs = ["y1/2", "-x1/2", "y2/2", "-x2/2", "y3/2", "-x3/2"]

[manifold]
constraints = ["x1^2 + y1^2", "x1^2 + y1^2 + x2^2 + y2^2 + x3^2 + y3^2"]
levels = [1.0, 3.0]

[action]
rotation_weights = [[1, 0, 0], [1, 1, 1]]
"#;

/// TOML source for a compiled-in scenario id, if it exists.
pub fn catalog(id: &str) -> Option<&'static str> {
    match id {
        "example1" => Some(EXAMPLE1_TOML),
        "example2" => Some(EXAMPLE2_TOML),
        _ => None,
    }
}

pub fn catalog_ids() -> &'static [&'static str] {
    &["example1", "example2"]
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ScenarioParse(e.to_string()))?;
        Self::from_toml_value(toml::Value::Table(table))
    }

    pub fn from_toml_value(value: toml::Value) -> Result<Self> {
        let scenario: Scenario = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::ScenarioParse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Resolve a catalog id or a file path, with optional `key=value`
    /// overrides applied before deserialization.
    pub fn load(name_or_path: &str, overrides: &[String]) -> Result<Self> {
        let text = match catalog(name_or_path) {
            Some(t) => t.to_string(),
            None => std::fs::read_to_string(name_or_path)
                .map_err(|_| Error::ScenarioNotFound(name_or_path.to_string()))?,
        };
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ScenarioParse(e.to_string()))?;
        let mut value = toml::Value::Table(table);
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let scenario = Self::from_toml_value(value)?;
        // A scenario parses completely before any computation runs.
        scenario.build()?;
        Ok(scenario)
    }

    /// SHA-256 of the canonical serialized form, embedded in every report.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.ambient.coords.len()
    }

    fn num_generators(&self) -> usize {
        match (&self.action.rotation_weights, &self.action.generators) {
            (Some(w), _) => w.len(),
            (None, Some(g)) => g.len(),
            (None, None) => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| -> Result<()> {
            Err(Error::Scenario {
                field: field.to_string(),
                message,
            })
        };
        if self.id.is_empty() {
            return fail("id", "must be non-empty".into());
        }
        if let Some(e) = &self.expect {
            const VERDICTS: &[&str] = &[
                "two_distinct_toroidal_leaves",
                "all_leaves_toroidal",
                "hypotheses_violated",
                "inconclusive",
            ];
            if !VERDICTS.contains(&e.as_str()) {
                return fail("expect", format!("unknown verdict `{e}`"));
            }
        }
        let dim = self.dim();
        if self.alpha.coeffs.len() != dim {
            return fail("alpha.coeffs", format!("expected {dim} coefficients"));
        }
        if self.manifold.constraints.is_empty() {
            return fail(
                "manifold.constraints",
                "at least one constraint required".into(),
            );
        }
        if self.manifold.constraints.len() != self.manifold.levels.len() {
            return fail("manifold.levels", "one level per constraint".into());
        }
        let r = self.num_generators();
        match (&self.action.rotation_weights, &self.action.generators) {
            (None, None) => {
                return fail(
                    "action",
                    "one of rotation_weights or generators is required".into(),
                )
            }
            (Some(_), Some(_)) => {
                return fail(
                    "action",
                    "rotation_weights and generators are mutually exclusive".into(),
                )
            }
            (Some(w), None) => {
                let pairs = match &self.ambient.symplectic_pairs {
                    Some(p) => p.len(),
                    None => {
                        return fail(
                            "action.rotation_weights",
                            "rotation weights require ambient.symplectic_pairs".into(),
                        )
                    }
                };
                for (i, row) in w.iter().enumerate() {
                    if row.len() != pairs {
                        return fail(
                            &format!("action.rotation_weights[{i}]"),
                            format!("expected one weight per symplectic pair ({pairs})"),
                        );
                    }
                }
            }
            (None, Some(gens)) => {
                for (i, g) in gens.iter().enumerate() {
                    if g.len() != dim {
                        return fail(
                            &format!("action.generators[{i}]"),
                            format!("expected {dim} component expressions"),
                        );
                    }
                }
            }
        }
        if r == 0 {
            return fail("action", "at least one generator is required".into());
        }
        // Tangent dimension splits as 2n + r; the symplectic part must be an
        // even, non-negative count.
        let tangent = dim as i64 - self.manifold.constraints.len() as i64;
        let sympl = tangent - r as i64;
        if sympl < 0 || sympl % 2 != 0 {
            return fail(
                "manifold",
                format!(
                    "dimension bookkeeping failed: tangent dim {tangent} minus {r} kernel \
                     directions must leave an even non-negative rank, got {sympl}"
                ),
            );
        }
        for (name, v) in [
            ("tolerances.constraint_tol", self.tolerances.constraint_tol),
            ("tolerances.rank_tol", self.tolerances.rank_tol),
            ("tolerances.grad_tol", self.tolerances.grad_tol),
            ("tolerances.leaf_tol", self.tolerances.leaf_tol),
            ("tolerances.orbit_tol", self.tolerances.orbit_tol),
            (
                "tolerances.distinctness_tol",
                self.tolerances.distinctness_tol,
            ),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return fail(name, "must be positive".into());
            }
        }
        if self.pipeline.quadrature_nodes == 0 {
            return fail("pipeline.quadrature_nodes", "must be at least 1".into());
        }
        if let Some(p) = &self.trace.seed_point {
            if p.len() != dim {
                return fail("trace.seed_point", format!("expected {dim} coordinates"));
            }
        }
        Ok(())
    }

    /// Parse all expressions and build the runnable objects.
    pub fn build(&self) -> Result<Lab> {
        let ambient = AmbientSpace::new(
            self.ambient.coords.clone(),
            self.ambient.symplectic_pairs.clone(),
        )?;
        let parse = |field: String, text: &str| -> Result<Expression> {
            ambient.parse_expression(text).map_err(|e| Error::Scenario {
                field,
                message: e.to_string(),
            })
        };
        let mut coeffs = Vec::with_capacity(self.alpha.coeffs.len());
        for (i, c) in self.alpha.coeffs.iter().enumerate() {
            coeffs.push(parse(format!("alpha.coeffs[{i}]"), c)?);
        }
        let alpha = OneForm::new(coeffs)?;

        let mut constraints = Vec::with_capacity(self.manifold.constraints.len());
        for (i, c) in self.manifold.constraints.iter().enumerate() {
            constraints.push(parse(format!("manifold.constraints[{i}]"), c)?);
        }
        let manifold = LevelSetManifold::new(constraints, self.manifold.levels.clone())?
            .with_tolerances(self.tolerances.constraint_tol, self.tolerances.rank_tol);

        let action = match (&self.action.rotation_weights, &self.action.generators) {
            (Some(w), None) => TorusAction::from_rotation_weights(&ambient, w)?,
            (None, Some(gens)) => {
                let mut parsed = Vec::with_capacity(gens.len());
                for (i, g) in gens.iter().enumerate() {
                    let mut comps = Vec::with_capacity(g.len());
                    for (j, c) in g.iter().enumerate() {
                        comps.push(parse(format!("action.generators[{i}][{j}]"), c)?);
                    }
                    parsed.push(comps);
                }
                TorusAction::from_generator_expressions(&ambient, parsed)?
            }
            _ => unreachable!("validated"),
        };

        let box_halfwidth = self
            .sampling
            .box_halfwidth
            .unwrap_or_else(|| sample::default_box_halfwidth(&self.manifold.levels));

        Ok(Lab {
            scenario: self.clone(),
            ambient,
            manifold,
            alpha,
            action,
            box_halfwidth,
        })
    }
}

/// Apply one `dotted.path=value` override to a parsed TOML document. Numeric
/// path segments index arrays; the value is parsed as TOML, falling back to a
/// bare string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw_value) = assignment.split_once('=').ok_or_else(|| Error::Scenario {
        field: assignment.to_string(),
        message: "override must look like key.path=value".into(),
    })?;
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw_value.to_string()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    let mut cursor = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| Error::Scenario {
                field: path.to_string(),
                message: format!("`{seg}` indexes a non-array"),
            })?;
            if idx >= arr.len() {
                return Err(Error::Scenario {
                    field: path.to_string(),
                    message: format!("index {idx} out of bounds ({} elements)", arr.len()),
                });
            }
            if last {
                arr[idx] = parsed;
                return Ok(());
            }
            cursor = &mut arr[idx];
        } else {
            let table = cursor.as_table_mut().ok_or_else(|| Error::Scenario {
                field: path.to_string(),
                message: format!("`{seg}` indexes a non-table"),
            })?;
            if last {
                table.insert(seg.to_string(), parsed);
                return Ok(());
            }
            cursor = table
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    Ok(())
}

/// A fully parsed, runnable scenario.
pub struct Lab {
    pub scenario: Scenario,
    pub ambient: AmbientSpace,
    pub manifold: LevelSetManifold,
    pub alpha: OneForm,
    pub action: TorusAction,
    pub box_halfwidth: f64,
}

impl Lab {
    pub fn classify_context(&self) -> crate::foliation::ClassifyContext<'_> {
        crate::foliation::ClassifyContext {
            alpha: &self.alpha,
            action: &self.action,
            manifold: &self.manifold,
            tolerances: &self.scenario.tolerances,
            sampling: &self.scenario.sampling,
            pipeline: &self.scenario.pipeline,
            box_halfwidth: self.box_halfwidth,
        }
    }
}
