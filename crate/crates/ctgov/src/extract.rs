use serde_json::Value;

use dss_core::{Label, NctId, TrialRecord};

use crate::config::FieldMapping;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExtractError {
    #[error("study document has no identifier at {path}")]
    MissingIdentifier { path: String },
    #[error("study document identifier {0:?} is not a registry id")]
    BadIdentifier(String),
}

/// Follows a dotted path through nested objects.
pub fn lookup<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(doc, |v, key| v.get(key))
}

fn year_of(date: &str) -> u16 {
    let digits: String = date.chars().take(4).collect();
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().unwrap_or(0)
    } else {
        0
    }
}

/// Maps a study document to a record. `Ok(None)` when the category or the
/// description is absent, or the category is not one of the three values.
pub fn extract_dss(doc: &Value, fields: &FieldMapping) -> Result<Option<TrialRecord>, ExtractError> {
    let id = lookup(doc, &fields.nct_id)
        .and_then(Value::as_str)
        .ok_or_else(|| ExtractError::MissingIdentifier {
            path: fields.nct_id.clone(),
        })?;
    let nct_id = NctId::new(id).map_err(|_| ExtractError::BadIdentifier(id.to_string()))?;
    let Some(category) = lookup(doc, &fields.category)
        .and_then(Value::as_str)
        .and_then(Label::from_registry)
    else {
        return Ok(None);
    };
    let Some(description) = lookup(doc, &fields.description).and_then(Value::as_str) else {
        return Ok(None);
    };
    let first_posted_year = lookup(doc, &fields.first_posted)
        .and_then(Value::as_str)
        .map(year_of)
        .unwrap_or(0);
    Ok(Some(TrialRecord {
        nct_id,
        original_category: category,
        dss_text: description.to_string(),
        first_posted_year,
    }))
}
