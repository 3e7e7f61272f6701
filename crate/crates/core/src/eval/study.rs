//! User-study aggregation: mean description length per perceived category.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::manifest::ManifestRecord;

/// The five answers offered to participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyChoice {
    NearDuplicate,
    Insertion,
    TextureTransfer,
    Other,
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyResponse {
    pub participant_id: String,
    pub item_id: String,
    pub choice: StudyChoice,
}

impl ManifestRecord for StudyResponse {
    const KIND: &'static str = "study_response";
}

/// Mean word count of the items behind each choice; unused choices are absent.
pub fn aggregate_user_study(
    responses: &[StudyResponse],
    lengths: &HashMap<String, usize>,
) -> Result<BTreeMap<StudyChoice, f64>, EvalError> {
    let mut sums: BTreeMap<StudyChoice, (u64, u64)> = BTreeMap::new();
    for r in responses {
        let len = lengths
            .get(&r.item_id)
            .ok_or_else(|| EvalError::MissingLength(r.item_id.clone()))?;
        let e = sums.entry(r.choice).or_default();
        e.0 += *len as u64;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(c, (sum, n))| (c, sum as f64 / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(p: &str, item: &str, choice: StudyChoice) -> StudyResponse {
        StudyResponse {
            participant_id: p.into(),
            item_id: item.into(),
            choice,
        }
    }

    #[test]
    fn single_choice() {
        let lengths = HashMap::from([("i1".to_string(), 3), ("i2".to_string(), 3)]);
        let rs = [
            resp("p1", "i1", StudyChoice::NearDuplicate),
            resp("p2", "i2", StudyChoice::NearDuplicate),
        ];
        let m = aggregate_user_study(&rs, &lengths).unwrap();
        assert_eq!(m, BTreeMap::from([(StudyChoice::NearDuplicate, 3.0)]));
    }

    #[test]
    fn missing_length() {
        let rs = [resp("p1", "nope", StudyChoice::Other)];
        assert!(matches!(
            aggregate_user_study(&rs, &HashMap::new()),
            Err(EvalError::MissingLength(id)) if id == "nope"
        ));
    }

    #[test]
    fn empty_responses() {
        assert!(aggregate_user_study(&[], &HashMap::new()).unwrap().is_empty());
    }

    #[test]
    fn choice_names() {
        assert_eq!(serde_json::to_string(&StudyChoice::TextureTransfer).unwrap(), "\"texture_transfer\"");
    }
}
