//! Versioned JSON persistence for trained models and their preprocessing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Standardization, Task};
use crate::error::{Error, Result};
use crate::ladder::{FeatureMask, Ladder};
use crate::model::{CoFrNetModel, Variant};
use crate::series::{model_to_series, MultiSeries};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LadderRecord {
    depth: usize,
    /// Active feature indices; omitted for full ladders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<usize>>,
    /// Row-major `(depth + 1) x (p + 1)`, bias last in each row.
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    schema_version: u32,
    variant: Variant,
    p: usize,
    q: usize,
    epsilon: f64,
    ladders: Vec<LadderRecord>,
    mixing: Vec<f64>,
    output_bias: Vec<f64>,
    #[serde(default)]
    standardization: Option<Standardization>,
    task: Task,
    #[serde(default)]
    classes: Vec<String>,
    #[serde(default)]
    feature_names: Vec<String>,
    #[serde(default)]
    target_name: String,
}

/// A model plus everything needed to apply it to raw rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: CoFrNetModel,
    pub standardization: Option<Standardization>,
    pub task: Task,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl ModelFile {
    pub fn new(model: CoFrNetModel, task: Task) -> Self {
        ModelFile {
            model,
            standardization: None,
            task,
            classes: Vec::new(),
            feature_names: Vec::new(),
            target_name: String::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let m = &self.model;
        let record = Record {
            schema_version: SCHEMA_VERSION,
            variant: m.variant(),
            p: m.input_dim(),
            q: m.output_dim(),
            epsilon: m.epsilon(),
            ladders: m
                .ladders()
                .iter()
                .map(|l| LadderRecord {
                    depth: l.depth(),
                    mask: match l.mask() {
                        FeatureMask::Full => None,
                        FeatureMask::Single(j) => Some(vec![j]),
                    },
                    weights: l.weights().to_vec(),
                })
                .collect(),
            mixing: m.mixing().to_vec(),
            output_bias: m.output_bias().to_vec(),
            standardization: self.standardization.clone(),
            task: self.task,
            classes: self.classes.clone(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Record = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Serde(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        let ladders = r
            .ladders
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let mask = match l.mask.as_deref() {
                    None => FeatureMask::Full,
                    Some([j]) => FeatureMask::Single(*j),
                    Some(other)
                        if other.len() == r.p && other.iter().enumerate().all(|(k, &j)| k == j) =>
                    {
                        FeatureMask::Full
                    }
                    Some(other) => {
                        return Err(Error::Serde(format!(
                            "ladder {i}: unsupported mask {other:?}"
                        )));
                    }
                };
                Ladder::from_flat(l.depth, r.p, mask, l.weights)
            })
            .collect::<Result<Vec<_>>>()?;
        let model = CoFrNetModel::new(r.variant, ladders, r.mixing, r.output_bias, r.epsilon)?;
        if model.input_dim() != r.p || model.output_dim() != r.q {
            return Err(Error::Dimension(format!(
                "header says p={} q={}, ladders give p={} q={}",
                r.p,
                r.q,
                model.input_dim(),
                model.output_dim()
            )));
        }
        if let Some(st) = &r.standardization {
            if st.feature_mean.len() != r.p || st.feature_std.len() != r.p {
                return Err(Error::Dimension("standardization does not match p".into()));
            }
        }
        Ok(ModelFile {
            model,
            standardization: r.standardization,
            task: r.task,
            classes: r.classes,
            feature_names: r.feature_names,
            target_name: r.target_name,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Model outputs for a raw (unstandardized) row, mapped back to target units.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.model.input_dim() {
            return Err(Error::Dimension(format!(
                "expected {} features, got {}",
                self.model.input_dim(),
                x.len()
            )));
        }
        match &self.standardization {
            Some(st) => Ok(st.inverse_target(&self.model.eval(&st.transform_input(x))?)),
            None => self.model.eval(x),
        }
    }

    /// Maps a raw input point into the model's coordinates.
    pub fn to_model_coords(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some(st) => st.transform_input(x),
            None => x.to_vec(),
        }
    }

    /// Truncated expansion of each output around the raw point `center`,
    /// expressed in raw feature and target units.
    pub fn series_in_original_units(
        &self,
        max_degree: usize,
        center: &[f64],
    ) -> Result<Vec<MultiSeries>> {
        self.interpret_series(max_degree, center, FeatureUnits::Original)
    }

    /// Truncated expansion of each output around the raw point `center`.
    /// Outputs are always in target units; `units` picks the feature scale.
    pub fn interpret_series(
        &self,
        max_degree: usize,
        center: &[f64],
        units: FeatureUnits,
    ) -> Result<Vec<MultiSeries>> {
        if center.len() != self.model.input_dim() {
            return Err(Error::Dimension(format!(
                "center has {} coordinates, expected {}",
                center.len(),
                self.model.input_dim()
            )));
        }
        let z = self.to_model_coords(center);
        let series = model_to_series(&self.model, max_degree, &z)?;
        let Some(st) = &self.standardization else {
            return Ok(series);
        };
        series
            .into_iter()
            .enumerate()
            .map(|(m, s)| match units {
                FeatureUnits::Original => to_original_units(&s, st, m),
                FeatureUnits::Standardized => Ok(to_target_units(&s, st, m)),
            })
            .collect()
    }
}

/// Coordinate system for the variables of an interpretation series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureUnits {
    /// Unit-variance features, so that coefficients are comparable across inputs.
    Standardized,
    Original,
}

/// Maps a series output back to target units, leaving the variables alone.
pub fn to_target_units(s: &MultiSeries, st: &Standardization, output: usize) -> MultiSeries {
    match (&st.target_mean, &st.target_std) {
        (Some(mean), Some(std)) => s
            .scale(std.get(output).copied().unwrap_or(1.0))
            .add_constant(mean.get(output).copied().unwrap_or(0.0)),
        _ => s.clone(),
    }
}

/// Re-expresses a series in standardized coordinates as one in raw units.
/// Output `output` is de-standardized when target statistics are present.
pub fn to_original_units(
    s: &MultiSeries,
    st: &Standardization,
    output: usize,
) -> Result<MultiSeries> {
    let factors: Vec<f64> = st.feature_std.iter().map(|sd| 1.0 / sd).collect();
    let center: Vec<f64> = s
        .center()
        .iter()
        .zip(st.feature_mean.iter().zip(&st.feature_std))
        .map(|(c, (mu, sd))| mu + sd * c)
        .collect();
    Ok(to_target_units(
        &s.rescale_variables(&factors, center)?,
        st,
        output,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::init_model;

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::F, Variant::D, Variant::DL] {
            let model = init_model(variant, 3, 2, &[3], 2, 11).unwrap();
            let mut file = ModelFile::new(model, Task::Classification);
            file.classes = vec!["a".into(), "b".into()];
            let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
            assert_eq!(back, file);
            for (a, b) in back.model.ladders().iter().zip(file.model.ladders()) {
                for (x, y) in a.weights().iter().zip(b.weights()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let l = Ladder::from_flat(0, 1, FeatureMask::Full, vec![0.1 + 0.2, 1.0 / 3.0]).unwrap();
        let model = CoFrNetModel::new(
            Variant::F,
            vec![l],
            vec![std::f64::consts::PI],
            vec![-1e-300],
            0.1,
        )
        .unwrap();
        let file = ModelFile::new(model, Task::Regression);
        assert_eq!(
            ModelFile::from_json(&file.to_json().unwrap()).unwrap(),
            file
        );
    }

    #[test]
    fn rejects_bad_schema() {
        let model = init_model(Variant::F, 2, 1, &[2], 1, 0).unwrap();
        let json = ModelFile::new(model, Task::Regression).to_json().unwrap();
        let bumped = json.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(matches!(
            ModelFile::from_json(&bumped),
            Err(Error::Serde(_))
        ));
        assert!(ModelFile::from_json("{").is_err());
    }

    #[test]
    fn original_units_series_matches_predictions() {
        let model = init_model(Variant::F, 2, 1, &[2], 1, 3).unwrap();
        let mut file = ModelFile::new(model, Task::Regression);
        file.standardization = Some(Standardization {
            feature_mean: vec![1.0, -2.0],
            feature_std: vec![2.0, 0.5],
            target_mean: Some(vec![10.0]),
            target_std: Some(vec![3.0]),
        });
        let center = [1.5, -2.2];
        let s = &file.series_in_original_units(6, &center).unwrap()[0];
        let direct = file.predict(&center).unwrap()[0];
        assert!((s.eval(&center).unwrap() - direct).abs() < 1e-9);
        let near = [1.52, -2.19];
        assert!((s.eval(&near).unwrap() - file.predict(&near).unwrap()[0]).abs() < 1e-4);
    }
}
