//! Prompt templates with exactly one mask slot, and their render paths.
//!
//! Three template families are used by the pipeline:
//! - base `{TEXT} It was {MASK}` for training, inference, and plain scoring;
//! - label-aware `{TEXT} It was {LABEL} {CONJ} {MASK}` for scoring only;
//! - connective search `{TEXT} It was {LABEL} {MASK} {CONJ}`, where the mask
//!   sits in the conjunction position and the `{CONJ}` slot carries a
//!   verbalizer token.
//!
//! The rendered mask is the reserved marker [`MASK_MARKER`]; backends map it
//! to their own mask token, which keeps templating tokenizer-agnostic.

use thiserror::Error;

/// Reserved mask placeholder in rendered prompts.
pub const MASK_MARKER: &str = "[MASK]";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template must contain exactly one {{MASK}} slot, found {0}")]
    MaskCount(usize),
    #[error("template must contain exactly one {{TEXT}} slot, found {0}")]
    TextCount(usize),
    #[error("template may contain at most one {{LABEL}} slot")]
    MultipleLabel,
    #[error("template may contain at most one {{CONJ}} slot")]
    MultipleConj,
    #[error("a {{CONJ}} slot requires a {{LABEL}} slot")]
    ConjWithoutLabel,
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("unclosed '{{' in template spec")]
    Unclosed,
    #[error("template has no {0} slot but a value was supplied")]
    UnexpectedValue(&'static str),
    #[error("template has a {0} slot but no value was supplied")]
    MissingValue(&'static str),
    #[error("{0} value must be non-empty")]
    EmptyValue(&'static str),
    #[error("slot values may not contain the reserved mask marker {MASK_MARKER:?}")]
    ReservedMarker,
    #[error("connective search needs slot order {{LABEL}} .. {{MASK}} .. {{CONJ}}")]
    ConjSearchOrder,
    #[error("rendered prompt must contain exactly one {MASK_MARKER:?}, found {0}")]
    RenderedMaskCount(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Text,
    Label,
    Conj,
    Mask,
}

/// A validated template: one TEXT slot, one MASK slot, at most one LABEL and
/// one CONJ slot, any literal text in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
    spec: String,
}

impl Template {
    /// Parse a spec string with `{TEXT}`, `{LABEL}`, `{CONJ}`, `{MASK}`
    /// placeholders.
    pub fn parse(spec: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = spec;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}').ok_or(TemplateError::Unclosed)?;
            let name = &after[..close];
            let segment = match name {
                "TEXT" => Segment::Text,
                "LABEL" => Segment::Label,
                "CONJ" => Segment::Conj,
                "MASK" => Segment::Mask,
                other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
            };
            if !literal.is_empty() {
                segments.push(Segment::Literal(std::mem::take(&mut literal)));
            }
            segments.push(segment);
            rest = &after[close + 1..];
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }

        let count = |want: &Segment| segments.iter().filter(|s| *s == want).count();
        let masks = count(&Segment::Mask);
        if masks != 1 {
            return Err(TemplateError::MaskCount(masks));
        }
        let texts = count(&Segment::Text);
        if texts != 1 {
            return Err(TemplateError::TextCount(texts));
        }
        if count(&Segment::Label) > 1 {
            return Err(TemplateError::MultipleLabel);
        }
        let conjs = count(&Segment::Conj);
        if conjs > 1 {
            return Err(TemplateError::MultipleConj);
        }
        if conjs == 1 && count(&Segment::Label) == 0 {
            return Err(TemplateError::ConjWithoutLabel);
        }

        Ok(Self {
            segments,
            spec: spec.to_string(),
        })
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn has_label_slot(&self) -> bool {
        self.segments.contains(&Segment::Label)
    }

    pub fn has_conj_slot(&self) -> bool {
        self.segments.contains(&Segment::Conj)
    }

    /// Derive the label-aware scoring template from a base template by
    /// expanding `{MASK}` into `{LABEL} {CONJ} {MASK}`. The base template
    /// must have no LABEL or CONJ slot.
    pub fn derive_label_aware(&self) -> Result<Template, TemplateError> {
        if self.has_label_slot() {
            return Err(TemplateError::UnexpectedValue("label"));
        }
        self.expand_mask(&[
            Segment::Label,
            Segment::Literal(" ".into()),
            Segment::Conj,
            Segment::Literal(" ".into()),
            Segment::Mask,
        ])
    }

    /// Derive the connective-search template from a base template by
    /// expanding `{MASK}` into `{LABEL} {MASK} {CONJ}`.
    pub fn derive_conj_search(&self) -> Result<Template, TemplateError> {
        if self.has_label_slot() {
            return Err(TemplateError::UnexpectedValue("label"));
        }
        self.expand_mask(&[
            Segment::Label,
            Segment::Literal(" ".into()),
            Segment::Mask,
            Segment::Literal(" ".into()),
            Segment::Conj,
        ])
    }

    fn expand_mask(&self, replacement: &[Segment]) -> Result<Template, TemplateError> {
        let mut segments = Vec::with_capacity(self.segments.len() + replacement.len());
        let mut spec = String::new();
        for segment in &self.segments {
            if *segment == Segment::Mask {
                segments.extend(replacement.iter().cloned());
            } else {
                segments.push(segment.clone());
            }
        }
        for segment in &segments {
            match segment {
                Segment::Literal(s) => spec.push_str(s),
                Segment::Text => spec.push_str("{TEXT}"),
                Segment::Label => spec.push_str("{LABEL}"),
                Segment::Conj => spec.push_str("{CONJ}"),
                Segment::Mask => spec.push_str("{MASK}"),
            }
        }
        Ok(Template { segments, spec })
    }
}

/// A rendered prompt holding exactly one [`MASK_MARKER`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptText {
    rendered: String,
    mask_offset: usize,
}

impl PromptText {
    /// Wrap an already-rendered string; validates the one-marker invariant.
    pub fn new(rendered: impl Into<String>) -> Result<Self, TemplateError> {
        let rendered = rendered.into();
        let count = rendered.matches(MASK_MARKER).count();
        if count != 1 {
            return Err(TemplateError::RenderedMaskCount(count));
        }
        let mask_offset = rendered.find(MASK_MARKER).unwrap();
        Ok(Self {
            rendered,
            mask_offset,
        })
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    /// Byte offset of the mask marker in the rendered string. Backends
    /// resolve the token-level position with their own tokenizer.
    pub fn mask_offset(&self) -> usize {
        self.mask_offset
    }
}

impl std::fmt::Display for PromptText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.rendered)
    }
}

fn check_value(name: &'static str, value: &str) -> Result<(), TemplateError> {
    if value.is_empty() {
        return Err(TemplateError::EmptyValue(name));
    }
    if value.contains(MASK_MARKER) {
        return Err(TemplateError::ReservedMarker);
    }
    Ok(())
}

/// Substitute slots and truncate the TEXT slot to the first `max_chars`
/// unicode characters of `text`. `label_word` must be present iff the
/// template has a LABEL slot, `conj` iff it has a CONJ slot.
pub fn render(
    template: &Template,
    text: &str,
    label_word: Option<&str>,
    conj: Option<&str>,
    max_chars: usize,
) -> Result<PromptText, TemplateError> {
    match (template.has_label_slot(), label_word) {
        (true, None) => return Err(TemplateError::MissingValue("label")),
        (false, Some(_)) => return Err(TemplateError::UnexpectedValue("label")),
        _ => {}
    }
    match (template.has_conj_slot(), conj) {
        (true, None) => return Err(TemplateError::MissingValue("conj")),
        (false, Some(_)) => return Err(TemplateError::UnexpectedValue("conj")),
        _ => {}
    }
    let truncated: String = text.chars().take(max_chars).collect();
    if truncated.contains(MASK_MARKER) {
        return Err(TemplateError::ReservedMarker);
    }
    if let Some(word) = label_word {
        check_value("label", word)?;
    }
    if let Some(word) = conj {
        check_value("conj", word)?;
    }

    let mut rendered = String::new();
    for segment in template.segments() {
        match segment {
            Segment::Literal(s) => rendered.push_str(s),
            Segment::Text => rendered.push_str(&truncated),
            Segment::Label => rendered.push_str(label_word.unwrap()),
            Segment::Conj => rendered.push_str(conj.unwrap()),
            Segment::Mask => rendered.push_str(MASK_MARKER),
        }
    }
    PromptText::new(rendered)
}

/// Render the connective-search prompt `[x] .. [label] [MASK] [token]`: the
/// mask sits between the label word and a trailing verbalizer token, so the
/// backend predicts a word that connects the two.
pub fn conjunction_search_render(
    template: &Template,
    text: &str,
    label_word: &str,
    verbalizer_token: &str,
    max_chars: usize,
) -> Result<PromptText, TemplateError> {
    let pos = |want: &Segment| template.segments().iter().position(|s| s == want);
    match (pos(&Segment::Label), pos(&Segment::Mask), pos(&Segment::Conj)) {
        (Some(l), Some(m), Some(c)) if l < m && m < c => {}
        _ => return Err(TemplateError::ConjSearchOrder),
    }
    check_value("verbalizer token", verbalizer_token)?;
    render(template, text, Some(label_word), Some(verbalizer_token), max_chars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_base_template() {
        let t = Template::parse("{TEXT} It was {MASK}.").unwrap();
        assert!(!t.has_label_slot());
        assert!(!t.has_conj_slot());
        assert_eq!(t.segments().len(), 4);
    }

    #[test]
    fn parses_label_aware_template() {
        let t = Template::parse("{TEXT} It was {LABEL} {CONJ} {MASK}.").unwrap();
        assert!(t.has_label_slot());
        assert!(t.has_conj_slot());
    }

    #[test]
    fn rejects_double_mask() {
        let err = Template::parse("{TEXT} It was {MASK} {MASK}.").unwrap_err();
        assert!(matches!(err, TemplateError::MaskCount(2)));
    }

    #[test]
    fn rejects_missing_mask_or_text() {
        assert!(matches!(
            Template::parse("{TEXT} It was great.").unwrap_err(),
            TemplateError::MaskCount(0)
        ));
        assert!(matches!(
            Template::parse("It was {MASK}.").unwrap_err(),
            TemplateError::TextCount(0)
        ));
    }

    #[test]
    fn rejects_conj_without_label() {
        let err = Template::parse("{TEXT} {CONJ} {MASK}").unwrap_err();
        assert!(matches!(err, TemplateError::ConjWithoutLabel));
    }

    #[test]
    fn rejects_unknown_placeholder() {
        let err = Template::parse("{TEXT} {WORD} {MASK}").unwrap_err();
        assert!(matches!(err, TemplateError::UnknownPlaceholder(w) if w == "WORD"));
    }

    #[test]
    fn renders_base_prompt() {
        let t = Template::parse("{TEXT} It was {MASK}.").unwrap();
        let p = render(&t, "Great movie!", None, None, 500).unwrap();
        assert_eq!(p.rendered(), "Great movie! It was [MASK].");
    }

    #[test]
    fn renders_label_aware_prompt() {
        let t = Template::parse("{TEXT} {LABEL} {CONJ} {MASK}.").unwrap();
        let p = render(&t, "Feather is", Some("light"), Some("and"), 500).unwrap();
        assert_eq!(p.rendered(), "Feather is light and [MASK].");
    }

    #[test]
    fn truncates_text_to_char_budget() {
        let t = Template::parse("{TEXT} It was {MASK}").unwrap();
        let text: String = std::iter::repeat('x').take(600).collect();
        let p = render(&t, &text, None, None, 500).unwrap();
        let prefix: String = p.rendered().chars().take(500).collect();
        assert_eq!(prefix, text.chars().take(500).collect::<String>());
        assert!(p.rendered().starts_with(&prefix));
        assert_eq!(p.rendered().len(), 500 + " It was [MASK]".len());
    }

    #[test]
    fn truncation_counts_unicode_chars() {
        let t = Template::parse("{TEXT}{MASK}").unwrap();
        let p = render(&t, "ééééé", None, None, 3).unwrap();
        assert_eq!(p.rendered(), format!("ééé{MASK_MARKER}"));
    }

    #[test]
    fn missing_and_unexpected_slot_values_error() {
        let base = Template::parse("{TEXT} {MASK}").unwrap();
        let aware = Template::parse("{TEXT} {LABEL} {CONJ} {MASK}").unwrap();
        assert!(matches!(
            render(&aware, "x", None, Some("and"), 10).unwrap_err(),
            TemplateError::MissingValue("label")
        ));
        assert!(matches!(
            render(&base, "x", Some("light"), None, 10).unwrap_err(),
            TemplateError::UnexpectedValue("label")
        ));
    }

    #[test]
    fn conj_search_renders_mask_between_label_and_token() {
        let t = Template::parse("{TEXT} It was {LABEL} {MASK} {CONJ}").unwrap();
        let p = conjunction_search_render(&t, "some text", "positive", "great", 500).unwrap();
        assert_eq!(p.rendered(), "some text It was positive [MASK] great");
    }

    #[test]
    fn conj_search_rejects_empty_token_and_bad_order() {
        let t = Template::parse("{TEXT} It was {LABEL} {MASK} {CONJ}").unwrap();
        assert!(matches!(
            conjunction_search_render(&t, "x", "pos", "", 10).unwrap_err(),
            TemplateError::EmptyValue(_)
        ));
        let laav = Template::parse("{TEXT} It was {LABEL} {CONJ} {MASK}").unwrap();
        assert!(matches!(
            conjunction_search_render(&laav, "x", "pos", "great", 10).unwrap_err(),
            TemplateError::ConjSearchOrder
        ));
    }

    #[test]
    fn derive_label_aware_expands_mask() {
        let base = Template::parse("{TEXT} It was {MASK}.").unwrap();
        let aware = base.derive_label_aware().unwrap();
        assert_eq!(aware.spec(), "{TEXT} It was {LABEL} {CONJ} {MASK}.");
        let search = base.derive_conj_search().unwrap();
        assert_eq!(search.spec(), "{TEXT} It was {LABEL} {MASK} {CONJ}.");
    }

    #[test]
    fn reserved_marker_in_inputs_is_rejected() {
        let t = Template::parse("{TEXT} It was {MASK}").unwrap();
        assert!(matches!(
            render(&t, "sneaky [MASK] text", None, None, 500).unwrap_err(),
            TemplateError::ReservedMarker
        ));
    }

    #[test]
    fn rendering_is_pure() {
        let t = Template::parse("{TEXT} It was {LABEL} {CONJ} {MASK}").unwrap();
        let a = render(&t, "abc", Some("light"), Some("and"), 500).unwrap();
        let b = render(&t, "abc", Some("light"), Some("and"), 500).unwrap();
        assert_eq!(a, b);
    }
}
