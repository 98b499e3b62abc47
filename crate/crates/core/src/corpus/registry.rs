use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{strip_labels, CorpusError, MrcExample, TaggedSentence};
use crate::convert::{ner_to_mrc, QueryTemplateSet};

/// Where a dataset sits in the transfer setting: target or source side, and
/// which task it is labeled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    /// Target-side NER sentences with labels removed.
    TNerUnlabeled,
    /// Source-side NER sentences with labels removed.
    SNerUnlabeled,
    /// Target-side labeled reading comprehension.
    TMrc,
    /// Source-side labeled reading comprehension.
    SMrc,
    /// Source-side labeled NER.
    SNer,
    /// `SNer` reformulated as reading comprehension; always derived.
    SNerAsMrc,
    /// Pseudo-labeled target NER produced by the pipeline.
    TNerPseudo,
    /// `TNerPseudo` reformulated as reading comprehension.
    TMrcPseudo,
    /// Word-substituted copy of `SNerUnlabeled`, consumed alongside it.
    SNerUnlabeledTranslated,
    /// Word-substituted copy of `SNer`, consumed alongside it.
    SNerTranslated,
}

impl CorpusRole {
    pub const INPUT_ROLES: [CorpusRole; 7] = [
        CorpusRole::TNerUnlabeled,
        CorpusRole::SNerUnlabeled,
        CorpusRole::TMrc,
        CorpusRole::SMrc,
        CorpusRole::SNer,
        CorpusRole::SNerUnlabeledTranslated,
        CorpusRole::SNerTranslated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusRole::TNerUnlabeled => "t_ner_unlabeled",
            CorpusRole::SNerUnlabeled => "s_ner_unlabeled",
            CorpusRole::TMrc => "t_mrc",
            CorpusRole::SMrc => "s_mrc",
            CorpusRole::SNer => "s_ner",
            CorpusRole::SNerAsMrc => "s_ner_as_mrc",
            CorpusRole::TNerPseudo => "t_ner_pseudo",
            CorpusRole::TMrcPseudo => "t_mrc_pseudo",
            CorpusRole::SNerUnlabeledTranslated => "s_ner_unlabeled_translated",
            CorpusRole::SNerTranslated => "s_ner_translated",
        }
    }

    pub fn is_unlabeled(self) -> bool {
        matches!(
            self,
            CorpusRole::TNerUnlabeled
                | CorpusRole::SNerUnlabeled
                | CorpusRole::SNerUnlabeledTranslated
        )
    }

    pub fn is_mrc(self) -> bool {
        matches!(
            self,
            CorpusRole::TMrc | CorpusRole::SMrc | CorpusRole::SNerAsMrc | CorpusRole::TMrcPseudo
        )
    }

    /// Roles filled by the library rather than by the caller.
    pub fn is_generated(self) -> bool {
        matches!(
            self,
            CorpusRole::SNerAsMrc | CorpusRole::TNerPseudo | CorpusRole::TMrcPseudo
        )
    }
}

impl fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CorpusRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            CorpusRole::TNerUnlabeled,
            CorpusRole::SNerUnlabeled,
            CorpusRole::TMrc,
            CorpusRole::SMrc,
            CorpusRole::SNer,
            CorpusRole::SNerAsMrc,
            CorpusRole::TNerPseudo,
            CorpusRole::TMrcPseudo,
            CorpusRole::SNerUnlabeledTranslated,
            CorpusRole::SNerTranslated,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| format!("unknown corpus role `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Ner(Arc<Vec<TaggedSentence>>),
    Mrc(Arc<Vec<MrcExample>>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Ner(d) => d.len(),
            Dataset::Mrc(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable-after-insert store of datasets keyed by [`CorpusRole`].
#[derive(Debug, Clone, Default)]
pub struct CorpusRegistry {
    datasets: BTreeMap<CorpusRole, Dataset>,
}

impl CorpusRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers NER data. Unlabeled roles get their labels stripped; the
    /// number of sentences that carried labels is returned.
    pub fn insert_ner(
        &mut self,
        role: CorpusRole,
        sentences: Vec<TaggedSentence>,
    ) -> Result<usize, CorpusError> {
        if role.is_mrc() || role.is_generated() {
            return Err(CorpusError::Config(format!(
                "role {role} does not accept caller-supplied NER data"
            )));
        }
        let mut stripped = 0;
        let sentences = if role.is_unlabeled() {
            stripped = sentences.iter().filter(|s| !s.is_unlabeled()).count();
            if stripped > 0 {
                log::info!("{role}: stripped labels from {stripped} sentences");
            }
            strip_labels(&sentences)
        } else {
            sentences
        };
        self.datasets.insert(role, Dataset::Ner(Arc::new(sentences)));
        Ok(stripped)
    }

    pub fn insert_mrc(
        &mut self,
        role: CorpusRole,
        examples: Vec<MrcExample>,
    ) -> Result<(), CorpusError> {
        if !role.is_mrc() || role.is_generated() {
            return Err(CorpusError::Config(format!(
                "role {role} does not accept caller-supplied MRC data"
            )));
        }
        self.datasets.insert(role, Dataset::Mrc(Arc::new(examples)));
        Ok(())
    }

    /// Regenerates `SNerAsMrc` from `SNer`.
    pub fn derive_ner_as_mrc(&mut self, templates: &QueryTemplateSet) -> Result<usize, CorpusError> {
        let source = self
            .ner(CorpusRole::SNer)
            .ok_or_else(|| CorpusError::Config("s_ner is not registered".into()))?;
        let derived = ner_to_mrc(source, templates).map_err(|e| CorpusError::Config(e.to_string()))?;
        let n = derived.len();
        self.datasets
            .insert(CorpusRole::SNerAsMrc, Dataset::Mrc(Arc::new(derived)));
        Ok(n)
    }

    pub(crate) fn set_generated(&mut self, role: CorpusRole, dataset: Dataset) {
        debug_assert!(role.is_generated());
        self.datasets.insert(role, dataset);
    }

    pub fn get(&self, role: CorpusRole) -> Option<&Dataset> {
        self.datasets.get(&role)
    }

    pub fn ner(&self, role: CorpusRole) -> Option<&[TaggedSentence]> {
        match self.datasets.get(&role)? {
            Dataset::Ner(d) => Some(d),
            Dataset::Mrc(_) => None,
        }
    }

    pub fn mrc(&self, role: CorpusRole) -> Option<&[MrcExample]> {
        match self.datasets.get(&role)? {
            Dataset::Mrc(d) => Some(d),
            Dataset::Ner(_) => None,
        }
    }

    pub fn contains(&self, role: CorpusRole) -> bool {
        self.datasets.contains_key(&role)
    }

    pub fn roles(&self) -> impl Iterator<Item = CorpusRole> + '_ {
        self.datasets.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, Tag};

    fn labeled() -> TaggedSentence {
        TaggedSentence::new(
            "a",
            vec!["Ann".into(), "ran".into()],
            vec![Tag::B("PER".into()), Tag::O],
            &LabelSet::conll(),
        )
        .unwrap()
    }

    #[test]
    fn unlabeled_roles_never_keep_labels() {
        let mut reg = CorpusRegistry::new();
        let stripped = reg
            .insert_ner(CorpusRole::TNerUnlabeled, vec![labeled()])
            .unwrap();
        assert_eq!(stripped, 1);
        assert!(reg.ner(CorpusRole::TNerUnlabeled).unwrap()[0].is_unlabeled());
        reg.insert_ner(CorpusRole::SNer, vec![labeled()]).unwrap();
        assert!(!reg.ner(CorpusRole::SNer).unwrap()[0].is_unlabeled());
    }

    #[test]
    fn derived_role_is_not_writable() {
        let mut reg = CorpusRegistry::new();
        assert!(reg.insert_mrc(CorpusRole::SNerAsMrc, vec![]).is_err());
        assert!(reg.insert_ner(CorpusRole::TNerPseudo, vec![]).is_err());
        assert!(reg.insert_ner(CorpusRole::TMrc, vec![]).is_err());
    }

    #[test]
    fn derive_from_source_ner() {
        let mut reg = CorpusRegistry::new();
        let templates = QueryTemplateSet::default_for(&LabelSet::conll()).unwrap();
        assert!(reg.derive_ner_as_mrc(&templates).is_err());
        reg.insert_ner(CorpusRole::SNer, vec![labeled()]).unwrap();
        assert_eq!(reg.derive_ner_as_mrc(&templates).unwrap(), 4);
        assert_eq!(reg.mrc(CorpusRole::SNerAsMrc).unwrap().len(), 4);
    }

    #[test]
    fn role_names_round_trip() {
        for r in CorpusRole::INPUT_ROLES {
            assert_eq!(r.as_str().parse::<CorpusRole>().unwrap(), r);
        }
    }
}
