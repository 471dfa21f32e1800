use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::jsonx;

const EXTRACTION_TEMPLATE: &str = include_str!("../../prompts/object_extraction.txt");

const KEYS: [&str; 4] = ["instrument", "emotion", "music genre", "scene"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticExtraction {
    pub clip_id: String,
    pub instruments: Vec<String>,
    pub emotions: Vec<String>,
    pub genres: Vec<String>,
    pub scenes: Vec<String>,
}

impl SemanticExtraction {
    pub fn terms(&self) -> impl Iterator<Item = &String> {
        self.instruments
            .iter()
            .chain(&self.emotions)
            .chain(&self.genres)
            .chain(&self.scenes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedExtraction {
    pub extraction: SemanticExtraction,
    /// Terms dropped because they do not occur in the caption.
    pub dropped: usize,
}

pub fn render_extraction_prompt(caption: &str) -> String {
    EXTRACTION_TEMPLATE.replace("{caption}", caption)
}

/// Parses an extraction reply and keeps only terms that occur in `caption`
/// (case-insensitive substring).
pub fn validate_semantic_extraction(
    clip_id: &str,
    caption: &str,
    raw_json: &str,
) -> Result<ValidatedExtraction, AnalyticsError> {
    let obj = jsonx::first_json_object(jsonx::strip_fences(raw_json))
        .ok_or_else(|| AnalyticsError::NoJson(raw_json.to_owned()))?;
    let haystack = caption.to_lowercase();
    let mut dropped = 0;
    let mut lists = Vec::with_capacity(KEYS.len());
    for key in KEYS {
        let items = obj
            .get(key)
            .and_then(|v| v.as_array())
            .ok_or(AnalyticsError::MissingKey(key))?;
        let mut kept = Vec::new();
        for item in items {
            let term = item.as_str().ok_or(AnalyticsError::MissingKey(key))?.trim();
            if !term.is_empty() && haystack.contains(&term.to_lowercase()) {
                kept.push(term.to_owned());
            } else {
                dropped += 1;
            }
        }
        lists.push(kept);
    }
    if dropped > 0 {
        tracing::warn!(clip_id, dropped, "dropped extracted terms absent from caption");
    }
    let [instruments, emotions, genres, scenes]: [Vec<String>; 4] = lists.try_into().expect("four keys");
    Ok(ValidatedExtraction {
        extraction: SemanticExtraction {
            clip_id: clip_id.to_owned(),
            instruments,
            emotions,
            genres,
            scenes,
        },
        dropped,
    })
}

/// Fraction of clips with at least one term per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPresence {
    pub clips: usize,
    pub instrument: f64,
    pub emotion: f64,
    pub genre: f64,
    pub scene: f64,
}

pub fn object_presence(extractions: &[SemanticExtraction]) -> Result<ObjectPresence, AnalyticsError> {
    if extractions.is_empty() {
        return Err(AnalyticsError::Empty("object presence"));
    }
    let n = extractions.len() as f64;
    let frac = |f: fn(&SemanticExtraction) -> &Vec<String>| {
        extractions.iter().filter(|e| !f(e).is_empty()).count() as f64 / n
    };
    Ok(ObjectPresence {
        clips: extractions.len(),
        instrument: frac(|e| &e.instruments),
        emotion: frac(|e| &e.emotions),
        genre: frac(|e| &e.genres),
        scene: frac(|e| &e.scenes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_present_terms_kept() {
        let raw = r#"{"instrument": ["violin"], "emotion": ["sad"], "music genre": [], "scene": []}"#;
        let v = validate_semantic_extraction("c", "sad violin melody", raw).unwrap();
        assert_eq!(v.dropped, 0);
        assert_eq!(v.extraction.instruments, vec!["violin"]);
        assert_eq!(v.extraction.emotions, vec!["sad"]);
    }

    #[test]
    fn absent_term_dropped() {
        let raw = "```json\n{\"instrument\": [\"Violin\", \"piano\"], \"emotion\": [], \"music genre\": [\"classical\"], \"scene\": []}\n```";
        let v = validate_semantic_extraction("c", "A sad violin melody in a classical style", raw).unwrap();
        assert_eq!(v.dropped, 1);
        assert_eq!(v.extraction.instruments, vec!["Violin"]);
        assert_eq!(v.extraction.genres, vec!["classical"]);
    }

    #[test]
    fn missing_key_is_schema_error() {
        let raw = r#"{"instrument": [], "emotion": [], "music genre": []}"#;
        assert_eq!(
            validate_semantic_extraction("c", "x", raw),
            Err(AnalyticsError::MissingKey("scene"))
        );
        assert!(matches!(validate_semantic_extraction("c", "x", "no json"), Err(AnalyticsError::NoJson(_))));
    }

    #[test]
    fn presence_fractions() {
        let a = SemanticExtraction {
            instruments: vec!["guitar".into()],
            ..Default::default()
        };
        let b = SemanticExtraction {
            instruments: vec!["drums".into()],
            scenes: vec!["street".into()],
            ..Default::default()
        };
        let p = object_presence(&[a, b]).unwrap();
        assert_eq!((p.instrument, p.scene, p.emotion), (1.0, 0.5, 0.0));
    }

    #[test]
    fn prompt_contains_caption() {
        let p = render_extraction_prompt("soft piano");
        assert!(p.contains("Sentence: 'soft piano'"));
        assert!(p.contains("\"music genre\": []"));
    }

    proptest! {
        #[test]
        fn kept_terms_are_substrings(
            caption in "[a-z ]{0,40}",
            terms in proptest::collection::vec("[a-z]{1,6}", 0..8),
        ) {
            let raw = serde_json::json!({
                "instrument": terms, "emotion": terms, "music genre": [], "scene": terms,
            }).to_string();
            let v = validate_semantic_extraction("c", &caption, &raw).unwrap();
            for t in v.extraction.terms() {
                prop_assert!(caption.contains(t.as_str()));
            }
            let kept = v.extraction.terms().count();
            prop_assert_eq!(kept + v.dropped, terms.len() * 3);
        }
    }
}
