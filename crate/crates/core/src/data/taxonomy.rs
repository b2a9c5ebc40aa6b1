use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Fine emotion labels with their grouping into coarse sentiment labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTaxonomy {
    fine: Vec<String>,
    coarse: Vec<String>,
    /// coarse index for each fine index
    fine_to_coarse: Vec<usize>,
}

/// How a taxonomy appears on disk: a preset name or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaxonomySpec {
    Preset(String),
    Inline {
        fine_labels: Vec<String>,
        coarse_labels: Vec<String>,
        fine_to_coarse: BTreeMap<String, String>,
    },
}

impl Default for TaxonomySpec {
    fn default() -> Self {
        TaxonomySpec::Preset("iemocap6".into())
    }
}

impl TaxonomySpec {
    pub fn resolve(&self) -> Result<LabelTaxonomy> {
        match self {
            TaxonomySpec::Preset(name) => LabelTaxonomy::preset(name),
            TaxonomySpec::Inline {
                fine_labels,
                coarse_labels,
                fine_to_coarse,
            } => {
                let mapping = fine_labels
                    .iter()
                    .map(|f| {
                        fine_to_coarse
                            .get(f)
                            .map(String::as_str)
                            .ok_or_else(|| Error::Taxonomy(format!("fine label {f} has no coarse label")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                LabelTaxonomy::new(fine_labels, coarse_labels, &mapping)
            }
        }
    }
}

impl LabelTaxonomy {
    pub fn new<S: AsRef<str>>(fine: &[S], coarse: &[S], mapping: &[&str]) -> Result<Self> {
        let fine: Vec<String> = fine.iter().map(|s| s.as_ref().to_string()).collect();
        let coarse: Vec<String> = coarse.iter().map(|s| s.as_ref().to_string()).collect();
        if fine.is_empty() || coarse.is_empty() {
            return Err(Error::Taxonomy("taxonomy needs at least one fine and one coarse label".into()));
        }
        if mapping.len() != fine.len() {
            return Err(Error::Taxonomy("every fine label needs exactly one coarse label".into()));
        }
        for (i, f) in fine.iter().enumerate() {
            if fine[..i].contains(f) {
                return Err(Error::Taxonomy(format!("duplicate fine label {f}")));
            }
        }
        let fine_to_coarse = mapping
            .iter()
            .map(|c| {
                coarse
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| Error::Taxonomy(format!("unknown coarse label {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fine,
            coarse,
            fine_to_coarse,
        })
    }

    /// happy, sad, neutral, angry, excited, frustrated; happy and excited are positive.
    pub fn iemocap6() -> Self {
        Self::new(
            &["happy", "sad", "neutral", "angry", "excited", "frustrated"],
            &["positive", "neutral", "negative"],
            &["positive", "negative", "neutral", "negative", "positive", "negative"],
        )
        .expect("built-in taxonomy")
    }

    /// anger, disgust, fear, joy, sadness, surprise, neutral; joy and surprise are positive.
    pub fn meld7() -> Self {
        Self::new(
            &["anger", "disgust", "fear", "joy", "sadness", "surprise", "neutral"],
            &["positive", "neutral", "negative"],
            &["negative", "negative", "negative", "positive", "negative", "positive", "neutral"],
        )
        .expect("built-in taxonomy")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "iemocap6" => Ok(Self::iemocap6()),
            "meld7" => Ok(Self::meld7()),
            other => Err(Error::Taxonomy(format!("unknown taxonomy preset {other}"))),
        }
    }

    pub fn fine_labels(&self) -> &[String] {
        &self.fine
    }

    pub fn coarse_labels(&self) -> &[String] {
        &self.coarse
    }

    pub fn n_fine(&self) -> usize {
        self.fine.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn fine_index(&self, label: &str) -> Result<usize> {
        self.fine
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Taxonomy(format!("unknown fine label {label}")))
    }

    pub fn coarse_index_of(&self, fine_index: usize) -> Result<usize> {
        self.fine_to_coarse
            .get(fine_index)
            .copied()
            .ok_or_else(|| Error::Taxonomy(format!("fine index {fine_index} out of range")))
    }

    pub fn fine_to_coarse(&self, label: &str) -> Result<&str> {
        let c = self.coarse_index_of(self.fine_index(label)?)?;
        Ok(&self.coarse[c])
    }

    /// `|fine| x |coarse|` 0/1 matrix; `P * grouping` sums fine probabilities per group.
    pub fn grouping_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_fine(), self.n_coarse());
        for (f, &c) in self.fine_to_coarse.iter().enumerate() {
            m.set(f, c, 1.0);
        }
        m
    }

    pub fn to_spec(&self) -> TaxonomySpec {
        for preset in ["iemocap6", "meld7"] {
            if *self == Self::preset(preset).unwrap() {
                return TaxonomySpec::Preset(preset.into());
            }
        }
        TaxonomySpec::Inline {
            fine_labels: self.fine.clone(),
            coarse_labels: self.coarse.clone(),
            fine_to_coarse: self
                .fine
                .iter()
                .zip(&self.fine_to_coarse)
                .map(|(f, &c)| (f.clone(), self.coarse[c].clone()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iemocap_grouping() {
        let t = LabelTaxonomy::iemocap6();
        assert_eq!(t.fine_to_coarse("excited").unwrap(), "positive");
        assert_eq!(t.fine_to_coarse("happy").unwrap(), "positive");
        assert_eq!(t.fine_to_coarse("neutral").unwrap(), "neutral");
        assert_eq!(t.fine_to_coarse("frustrated").unwrap(), "negative");
        assert_eq!(t.fine_to_coarse("sad").unwrap(), "negative");
        assert_eq!(t.fine_to_coarse("angry").unwrap(), "negative");
        assert!(matches!(t.fine_to_coarse("bored"), Err(Error::Taxonomy(_))));
    }

    #[test]
    fn meld_grouping() {
        let t = LabelTaxonomy::meld7();
        assert_eq!(t.fine_to_coarse("joy").unwrap(), "positive");
        assert_eq!(t.fine_to_coarse("surprise").unwrap(), "positive");
        assert_eq!(t.fine_to_coarse("neutral").unwrap(), "neutral");
        for l in ["anger", "disgust", "fear", "sadness"] {
            assert_eq!(t.fine_to_coarse(l).unwrap(), "negative");
        }
    }

    #[test]
    fn grouping_matrix_partitions() {
        let g = LabelTaxonomy::iemocap6().grouping_matrix();
        for r in 0..g.rows() {
            assert_eq!(g.row(r).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(g.col_sums().data(), &[2.0, 1.0, 3.0]);
    }

    #[test]
    fn inline_spec_round_trip() {
        let spec: TaxonomySpec = serde_json::from_str(
            r#"{"fine_labels":["up","down"],"coarse_labels":["pos","neg"],"fine_to_coarse":{"up":"pos","down":"neg"}}"#,
        )
        .unwrap();
        let t = spec.resolve().unwrap();
        assert_eq!(t.fine_to_coarse("down").unwrap(), "neg");
        assert_eq!(t.to_spec().resolve().unwrap(), t);
        let preset: TaxonomySpec = serde_json::from_str("\"meld7\"").unwrap();
        assert_eq!(preset.resolve().unwrap(), LabelTaxonomy::meld7());
    }

    #[test]
    fn unmapped_fine_label_is_rejected() {
        let spec = TaxonomySpec::Inline {
            fine_labels: vec!["a".into(), "b".into()],
            coarse_labels: vec!["x".into()],
            fine_to_coarse: [("a".to_string(), "x".to_string())].into_iter().collect(),
        };
        assert!(matches!(spec.resolve(), Err(Error::Taxonomy(_))));
    }
}
