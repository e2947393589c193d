//! Tuple prediction and per-argument-type precision.
//!
//! For each image the top-k tuples are decoded and, per argument type, the
//! predicted set is the union of that type's labels over those tuples. A
//! predicted label is correct if it occurs at the same position in any gold
//! tuple of the image. Precision is micro-averaged over images by default.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::kbest;
use crate::model::Model;
use crate::types::{Dataset, Labels, ModelParams};

pub const DEFAULT_TOP_K: usize = 5;

/// Top-k decoded tuples for one image, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub image_id: String,
    pub top_k: Vec<(Labels, f64)>,
}

impl PredictionSet {
    /// Union of predicted labels per position.
    pub fn type_sets(&self, positions: usize) -> TypeSets {
        let mut sets = vec![BTreeSet::new(); positions];
        for (y, _) in &self.top_k {
            for (t, &l) in y.iter().enumerate() {
                sets[t].insert(l);
            }
        }
        sets
    }
}

/// One set of labels per chain position.
pub type TypeSets = Vec<BTreeSet<usize>>;

pub fn predict_topk(model: &Model, image_id: &str, x: &DVector<f64>, k: usize) -> Result<PredictionSet> {
    let tables = model.tables(x)?;
    Ok(PredictionSet {
        image_id: image_id.to_owned(),
        top_k: kbest(&tables, k)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Total matches over total predictions, across all images.
    #[default]
    Micro,
    /// Mean of per-image precisions (images with no prediction skipped).
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypePrecision {
    pub argument_type: String,
    pub precision: f64,
    pub predicted: usize,
    pub matched: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub per_type: Vec<TypePrecision>,
    /// Unweighted mean of the per-type precisions.
    pub mean_precision: f64,
}

impl EvalReport {
    pub fn precision(&self, argument_type: &str) -> Option<f64> {
        self.per_type
            .iter()
            .find(|p| p.argument_type == argument_type)
            .map(|p| p.precision)
    }
}

impl fmt::Display for EvalReport {
    /// Tab-separated table: type, precision, predicted, matched; then MEAN.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "type\tprecision\tpredicted\tmatched")?;
        for p in &self.per_type {
            writeln!(
                f,
                "{}\t{:.4}\t{}\t{}",
                p.argument_type, p.precision, p.predicted, p.matched
            )?;
        }
        writeln!(f, "MEAN\t{:.4}\t-\t-", self.mean_precision)
    }
}

/// Gold label sets per image and position.
#[derive(Clone, Debug, Default)]
pub struct GoldIndex {
    sets: HashMap<String, TypeSets>,
}

impl GoldIndex {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut index = GoldIndex::default();
        for img in &dataset.images {
            index.insert(
                &img.image_id,
                img.gold_tuples.iter().map(Vec::as_slice),
                dataset.spec.len(),
            );
        }
        index
    }

    pub fn insert<'a>(&mut self, image_id: &str, tuples: impl Iterator<Item = &'a [usize]>, positions: usize) {
        let entry = self
            .sets
            .entry(image_id.to_owned())
            .or_insert_with(|| vec![BTreeSet::new(); positions]);
        for y in tuples {
            for (t, &l) in y.iter().enumerate() {
                entry[t].insert(l);
            }
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&TypeSets> {
        self.sets.get(image_id)
    }
}

/// Precision of per-image predicted label sets against gold.
pub fn precision_from_sets<'a>(
    predicted: impl IntoIterator<Item = (&'a str, &'a TypeSets)>,
    gold: &GoldIndex,
    argument_types: &[&str],
    averaging: Averaging,
) -> Result<EvalReport> {
    let n = argument_types.len();
    let mut predicted_total = vec![0usize; n];
    let mut matched_total = vec![0usize; n];
    let mut macro_sum = vec![0.0f64; n];
    let mut macro_count = vec![0usize; n];
    for (image_id, sets) in predicted {
        let gold_sets = gold
            .get(image_id)
            .ok_or_else(|| Error::UnknownImage(image_id.to_owned()))?;
        if sets.len() != n {
            return Err(Error::dims(format!("predicted sets for {image_id}"), n, sets.len()));
        }
        for t in 0..n {
            let p = sets[t].len();
            let m = sets[t].intersection(&gold_sets[t]).count();
            predicted_total[t] += p;
            matched_total[t] += m;
            if p > 0 {
                macro_sum[t] += m as f64 / p as f64;
                macro_count[t] += 1;
            }
        }
    }
    let per_type: Vec<TypePrecision> = (0..n)
        .map(|t| {
            let precision = match averaging {
                Averaging::Micro if predicted_total[t] > 0 => matched_total[t] as f64 / predicted_total[t] as f64,
                Averaging::Macro if macro_count[t] > 0 => macro_sum[t] / macro_count[t] as f64,
                _ => 0.0,
            };
            TypePrecision {
                argument_type: argument_types[t].to_owned(),
                precision,
                predicted: predicted_total[t],
                matched: matched_total[t],
            }
        })
        .collect();
    let mean_precision = mean(per_type.iter().map(|p| p.precision));
    Ok(EvalReport {
        averaging,
        per_type,
        mean_precision,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Per-type precision of top-k predictions against a gold dataset.
pub fn per_type_precision(predictions: &[PredictionSet], gold: &Dataset, averaging: Averaging) -> Result<EvalReport> {
    let t = gold.spec.len();
    let sets: Vec<(&str, TypeSets)> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), p.type_sets(t)))
        .collect();
    precision_from_sets(
        sets.iter().map(|(id, s)| (*id, s)),
        &GoldIndex::from_dataset(gold),
        &gold.spec.argument_types(),
        averaging,
    )
}

/// Top-k predictions for every image of a dataset.
pub fn predict_dataset(model: &Model, dataset: &Dataset, k: usize) -> Result<Vec<PredictionSet>> {
    dataset
        .images
        .iter()
        .map(|img| predict_topk(model, &img.image_id, &img.features, k))
        .collect()
}

pub fn evaluate(model: &Model, dataset: &Dataset, k: usize) -> Result<EvalReport> {
    let preds = predict_dataset(model, dataset, k)?;
    per_type_precision(&preds, dataset, Averaging::Micro)
}

/// Per argument type, the name of the model chosen for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComboAssignment {
    pub argument_types: Vec<String>,
    pub models: Vec<String>,
    /// Validation precision of every model: `validation[model][type]`.
    pub validation: Vec<Vec<f64>>,
}

impl ComboAssignment {
    /// Mean of the selected per-type validation precisions.
    pub fn selected_mean(&self, names: &[&str]) -> f64 {
        mean(self.models.iter().enumerate().map(|(t, chosen)| {
            let m = names.iter().position(|n| n == chosen).unwrap_or(0);
            self.validation[m][t]
        }))
    }
}

fn check_same_labels(models: &[(&str, &Model)]) -> Result<()> {
    let first = &models[0].1.spec;
    for (name, m) in &models[1..] {
        if m.spec.vocabularies() != first.vocabularies() {
            return Err(Error::InvalidArgument(format!(
                "model {name} uses different label vocabularies"
            )));
        }
    }
    Ok(())
}

/// Picks, for each argument type, the model with the best validation
/// precision; earlier models win ties.
pub fn combo_select(models: &[(&str, &Model)], validation: &Dataset, k: usize) -> Result<ComboAssignment> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("combo needs at least one model".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_same_labels(models)?;
    let types = validation.spec.argument_types();
    let scores = models
        .iter()
        .map(|(_, m)| evaluate(m, validation, k).map(|r| r.per_type.iter().map(|p| p.precision).collect::<Vec<f64>>()))
        .collect::<Result<Vec<_>>>()?;
    let chosen = (0..types.len())
        .map(|t| {
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if s[t] > scores[best][t] {
                    best = i;
                }
            }
            models[best].0.to_owned()
        })
        .collect();
    Ok(ComboAssignment {
        argument_types: types.iter().map(|s| s.to_string()).collect(),
        models: chosen,
        validation: scores,
    })
}

/// Per-type predicted label sets, each taken from the type's assigned model.
pub fn combo_predict(
    assignment: &ComboAssignment,
    models: &[(&str, &Model)],
    x: &DVector<f64>,
    k: usize,
) -> Result<TypeSets> {
    let n = models
        .first()
        .map(|(_, m)| m.spec.len())
        .ok_or_else(|| Error::InvalidArgument("combo needs at least one model".into()))?;
    if assignment.models.len() != n {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {} of {n} argument types",
            assignment.models.len()
        )));
    }
    let mut cache: HashMap<&str, TypeSets> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for (t, name) in assignment.models.iter().enumerate() {
        let Some((key, model)) = models.iter().find(|(m, _)| m == name) else {
            return Err(Error::InvalidArgument(format!("no model named {name} for type {t}")));
        };
        if !cache.contains_key(key) {
            let preds = predict_topk(model, "", x, k)?;
            cache.insert(key, preds.type_sets(n));
        }
        out.push(cache[key][t].clone());
    }
    Ok(out)
}

/// Copy of `params` with every binary matrix zeroed.
pub fn independent_mode(params: &ModelParams) -> ModelParams {
    ModelParams {
        unary: params.unary.clone(),
        binary: params.binary.iter().map(|z| z.map(|_| 0.0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::indicator_embeddings;
    use crate::types::{AnnotatedImage, ChainSpec, Vocabulary};
    use nalgebra::DMatrix;

    fn spec3(sizes: [usize; 3]) -> ChainSpec {
        let names = ["locative", "predicate", "actor"];
        ChainSpec::new(
            names
                .iter()
                .zip(sizes)
                .map(|(n, s)| Vocabulary::new(*n, (0..s).map(|i| format!("{n}{i}")).collect()).unwrap())
                .collect(),
            1,
        )
        .unwrap()
    }

    fn gold(tuples: &[(&str, Vec<Labels>)], sizes: [usize; 3]) -> Dataset {
        Dataset::new(
            spec3(sizes),
            tuples
                .iter()
                .map(|(id, ys)| AnnotatedImage {
                    image_id: id.to_string(),
                    features: DVector::from_element(1, 1.0),
                    gold_tuples: ys.iter().cloned().collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let g = gold(&[("a", vec![vec![0, 1, 0]]), ("b", vec![vec![1, 0, 1]])], [2, 2, 2]);
        let preds = vec![
            PredictionSet {
                image_id: "a".into(),
                top_k: vec![(vec![0, 1, 0], 1.0)],
            },
            PredictionSet {
                image_id: "b".into(),
                top_k: vec![(vec![1, 0, 1], 1.0)],
            },
        ];
        let r = per_type_precision(&preds, &g, Averaging::Micro).unwrap();
        assert!(r.per_type.iter().all(|p| p.precision == 1.0));
        assert_eq!(r.mean_precision, 1.0);
    }

    #[test]
    fn union_protocol_mixed_case() {
        // locative park=0, predicate run=0, actor dog=0 / cat=1
        let g = gold(&[("img", vec![vec![0, 0, 0]])], [1, 1, 2]);
        let preds = vec![PredictionSet {
            image_id: "img".into(),
            top_k: vec![(vec![0, 0, 0], 2.0), (vec![0, 0, 1], 1.0)],
        }];
        let r = per_type_precision(&preds, &g, Averaging::Micro).unwrap();
        assert_eq!(r.precision("actor"), Some(0.5));
        assert_eq!(r.precision("locative"), Some(1.0));
        assert_eq!(r.precision("predicate"), Some(1.0));
        let actor = &r.per_type[2];
        assert_eq!((actor.predicted, actor.matched), (2, 1));
    }

    #[test]
    fn empty_predictions_excluded_from_denominator() {
        let g = gold(&[("a", vec![vec![0, 0, 0]]), ("b", vec![vec![1, 1, 1]])], [2, 2, 2]);
        let sets_a: TypeSets = vec![[0].into(), BTreeSet::new(), [0].into()];
        let sets_b: TypeSets = vec![[0].into(), BTreeSet::new(), [1].into()];
        let r = precision_from_sets(
            [("a", &sets_a), ("b", &sets_b)],
            &GoldIndex::from_dataset(&g),
            &g.spec.argument_types(),
            Averaging::Micro,
        )
        .unwrap();
        assert_eq!(r.per_type[1].predicted, 0);
        assert_eq!(r.per_type[1].precision, 0.0);
        assert_eq!(r.per_type[0].precision, 0.5);
        assert_eq!(r.per_type[2].precision, 1.0);
    }

    #[test]
    fn macro_differs_from_micro() {
        let g = gold(&[("a", vec![vec![0, 0, 0]]), ("b", vec![vec![1, 0, 0]])], [3, 1, 1]);
        let a: TypeSets = vec![[0].into(), [0].into(), [0].into()];
        let b: TypeSets = vec![[0, 1, 2].into(), [0].into(), [0].into()];
        let types = g.spec.argument_types();
        let idx = GoldIndex::from_dataset(&g);
        let micro = precision_from_sets([("a", &a), ("b", &b)], &idx, &types, Averaging::Micro).unwrap();
        let mac = precision_from_sets([("a", &a), ("b", &b)], &idx, &types, Averaging::Macro).unwrap();
        assert!((micro.per_type[0].precision - 2.0 / 4.0).abs() < 1e-15);
        assert!((mac.per_type[0].precision - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_image_rejected() {
        let g = gold(&[("a", vec![vec![0, 0, 0]])], [1, 1, 1]);
        let preds = vec![PredictionSet {
            image_id: "nope".into(),
            top_k: vec![(vec![0, 0, 0], 0.0)],
        }];
        assert!(matches!(
            per_type_precision(&preds, &g, Averaging::Micro),
            Err(Error::UnknownImage(_))
        ));
    }

    fn zero_model(sizes: [usize; 3]) -> Model {
        let spec = spec3(sizes);
        let emb = indicator_embeddings(&spec);
        let params = ModelParams::zeros_like(&spec, &emb);
        Model::new(spec, emb, params).unwrap()
    }

    #[test]
    fn predict_topk_zero_params() {
        let m = zero_model([2, 2, 2]);
        let x = DVector::from_element(1, 1.0);
        let p = predict_topk(&m, "a", &x, 1).unwrap();
        assert_eq!(p.top_k, vec![(vec![0, 0, 0], 0.0)]);
        let p = predict_topk(&m, "a", &x, 5).unwrap();
        let distinct: BTreeSet<&Labels> = p.top_k.iter().map(|(y, _)| y).collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn combo_single_model_everywhere() {
        let m = zero_model([2, 2, 2]);
        let g = gold(&[("a", vec![vec![0, 0, 0]])], [2, 2, 2]);
        let a = combo_select(&[("only", &m)], &g, 1).unwrap();
        assert_eq!(a.models, vec!["only"; 3]);
        assert!(combo_select(&[], &g, 1).is_err());
    }

    #[test]
    fn combo_predict_missing_assignment() {
        let m = zero_model([2, 2, 2]);
        let a = ComboAssignment {
            argument_types: vec!["locative".into(), "predicate".into(), "actor".into()],
            models: vec!["only".into(), "ghost".into(), "only".into()],
            validation: vec![vec![0.0; 3]],
        };
        let x = DVector::from_element(1, 1.0);
        assert!(combo_predict(&a, &[("only", &m)], &x, 1).is_err());
        let short = ComboAssignment {
            models: vec!["only".into()],
            ..a
        };
        assert!(combo_predict(&short, &[("only", &m)], &x, 1).is_err());
    }

    #[test]
    fn independent_mode_zeroes_binary() {
        let mut p = ModelParams::zeros(&[2, 2], 1);
        assert_eq!(independent_mode(&p), p);
        p.binary[0] = DMatrix::from_element(2, 2, 3.0);
        p.unary[0][(1, 0)] = 2.0;
        let ind = independent_mode(&p);
        assert_eq!(ind.unary, p.unary);
        assert!(ind.binary[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn report_table_format() {
        let r = EvalReport {
            averaging: Averaging::Micro,
            per_type: vec![TypePrecision {
                argument_type: "actor".into(),
                precision: 0.5,
                predicted: 2,
                matched: 1,
            }],
            mean_precision: 0.5,
        };
        assert_eq!(
            r.to_string(),
            "type\tprecision\tpredicted\tmatched\nactor\t0.5000\t2\t1\nMEAN\t0.5000\t-\t-\n"
        );
    }
}
