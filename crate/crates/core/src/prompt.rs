//! Co-prediction prompt layout.
//!
//! An instance is `{context} [P0] .. [Pk] {mention} belongs to [PMASK] rather than [NMASK]`.
//! The standard (single-mask) prompt ends at `[PMASK]`. Soft slots carry only
//! indices; their embeddings belong to the model.

use serde::{Deserialize, Serialize};

use crate::corpus::MentionExample;
use crate::error::{Error, Result};

pub const BELONGS_TO: &str = "belongs to";
pub const RATHER_THAN: &str = "rather than";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    /// Two masks: `belongs to [PMASK] rather than [NMASK]`.
    #[default]
    CoPrediction,
    /// One mask: `belongs to [PMASK]`.
    Standard,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Context(Vec<String>),
    Soft(usize),
    Mention(Vec<String>),
    Literal(Vec<String>),
    PMask,
    NMask,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptInstance {
    segments: Vec<Segment>,
    n_soft: usize,
    style: PromptStyle,
}

impl PromptInstance {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn n_soft(&self) -> usize {
        self.n_soft
    }

    pub fn style(&self) -> PromptStyle {
        self.style
    }

    /// Number of rendered tokens.
    pub fn token_len(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Context(t) | Segment::Mention(t) | Segment::Literal(t) => t.len(),
                Segment::Soft(_) | Segment::PMask | Segment::NMask => 1,
            })
            .sum()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Lays out the template for one example. The context block is
/// `left + mention + right`; the mention is repeated after the soft slots.
pub fn build_prompt_instance(example: &MentionExample, n_soft: usize, style: PromptStyle) -> PromptInstance {
    let mut segments = Vec::with_capacity(n_soft + 7);
    segments.push(Segment::Context(example.context().map(str::to_owned).collect()));
    segments.extend((0..n_soft).map(Segment::Soft));
    segments.push(Segment::Mention(example.mention.clone()));
    segments.push(Segment::Literal(words(BELONGS_TO)));
    segments.push(Segment::PMask);
    if style == PromptStyle::CoPrediction {
        segments.push(Segment::Literal(words(RATHER_THAN)));
        segments.push(Segment::NMask);
    }
    PromptInstance {
        segments,
        n_soft,
        style,
    }
}

/// Reserved marker strings for the soft slots and the two masks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerMap {
    soft: Vec<String>,
    pmask: String,
    nmask: String,
}

impl MarkerMap {
    /// `[P0]`, `[P1]`, ..., `[PMASK]`, `[NMASK]`.
    pub fn standard(n_soft: usize) -> Self {
        Self {
            soft: (0..n_soft).map(|i| format!("[P{i}]")).collect(),
            pmask: "[PMASK]".into(),
            nmask: "[NMASK]".into(),
        }
    }

    pub fn new(soft: Vec<String>, pmask: String, nmask: String) -> Result<Self> {
        let mut all: Vec<&String> = soft.iter().collect();
        all.push(&pmask);
        all.push(&nmask);
        if all.iter().any(|m| m.trim().is_empty()) {
            return Err(Error::invalid("marker map", "markers must be non-empty"));
        }
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != all.len() {
            return Err(Error::invalid("marker map", "markers must be distinct"));
        }
        Ok(Self { soft, pmask, nmask })
    }

    pub fn soft(&self, i: usize) -> Option<&str> {
        self.soft.get(i).map(String::as_str)
    }

    pub fn pmask(&self) -> &str {
        &self.pmask
    }

    pub fn nmask(&self) -> &str {
        &self.nmask
    }

    pub fn n_soft(&self) -> usize {
        self.soft.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        token == self.pmask || token == self.nmask || self.soft.iter().any(|s| s == token)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub tokens: Vec<String>,
    pub pmask: usize,
    pub nmask: Option<usize>,
}

/// Flattens an instance into tokens and records the mask positions.
pub fn render(instance: &PromptInstance, markers: &MarkerMap) -> Result<RenderedPrompt> {
    if markers.n_soft() < instance.n_soft {
        return Err(Error::invalid(
            "marker map",
            format!(
                "{} soft markers for {} soft slots",
                markers.n_soft(),
                instance.n_soft
            ),
        ));
    }
    let mut tokens = Vec::with_capacity(instance.token_len());
    let mut pmask = None;
    let mut nmask = None;
    for segment in &instance.segments {
        match segment {
            Segment::Context(t) | Segment::Mention(t) | Segment::Literal(t) => {
                if let Some(hit) = t.iter().find(|w| markers.contains(w)) {
                    return Err(Error::MarkerCollision(hit.clone()));
                }
                tokens.extend(t.iter().cloned());
            }
            Segment::Soft(i) => tokens.push(markers.soft[*i].clone()),
            Segment::PMask => {
                pmask = Some(tokens.len());
                tokens.push(markers.pmask.clone());
            }
            Segment::NMask => {
                nmask = Some(tokens.len());
                tokens.push(markers.nmask.clone());
            }
        }
    }
    Ok(RenderedPrompt {
        tokens,
        pmask: pmask.expect("every instance has a PMASK slot"),
        nmask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSet;

    fn wilson() -> MentionExample {
        MentionExample::from_text("w", "", "Wilson", "was appointed minister", LabelSet::from([0]))
    }

    fn lit(s: &str) -> Segment {
        Segment::Literal(words(s))
    }

    #[test]
    fn co_prediction_layout() {
        let inst = build_prompt_instance(&wilson(), 2, PromptStyle::CoPrediction);
        assert_eq!(
            inst.segments(),
            &[
                Segment::Context(words("Wilson was appointed minister")),
                Segment::Soft(0),
                Segment::Soft(1),
                Segment::Mention(words("Wilson")),
                lit("belongs to"),
                Segment::PMask,
                lit("rather than"),
                Segment::NMask,
            ]
        );
    }

    #[test]
    fn no_soft_slots() {
        let inst = build_prompt_instance(&wilson(), 0, PromptStyle::CoPrediction);
        assert!(!inst.segments().iter().any(|s| matches!(s, Segment::Soft(_))));
        assert_eq!(inst.segments().len(), 6);
    }

    #[test]
    fn standard_prompt_ends_at_pmask() {
        let inst = build_prompt_instance(&wilson(), 2, PromptStyle::Standard);
        assert_eq!(inst.segments().last(), Some(&Segment::PMask));
        assert!(!inst.segments().contains(&Segment::NMask));
        let r = render(&inst, &MarkerMap::standard(2)).unwrap();
        assert_eq!(r.nmask, None);
        assert_eq!(r.pmask, r.tokens.len() - 1);
    }

    #[test]
    fn rendered_positions_point_at_markers() {
        let markers = MarkerMap::standard(2);
        let inst = build_prompt_instance(&wilson(), 2, PromptStyle::CoPrediction);
        let r = render(&inst, &markers).unwrap();
        assert_eq!(r.tokens[r.pmask], "[PMASK]");
        assert_eq!(r.tokens[r.nmask.unwrap()], "[NMASK]");
        // context(4) + soft(2) + mention(1) + "belongs to"(2) puts PMASK at index 9
        assert_eq!(r.pmask, 9);
        assert_eq!(r.nmask, Some(r.pmask + 3));
        assert_eq!(r.tokens.len(), inst.token_len());
        assert_eq!(render(&inst, &markers).unwrap(), r);
    }

    #[test]
    fn marker_collision() {
        let ex = MentionExample::from_text("x", "see [PMASK] here", "Bob", "", LabelSet::new());
        let inst = build_prompt_instance(&ex, 1, PromptStyle::CoPrediction);
        assert!(matches!(
            render(&inst, &MarkerMap::standard(1)),
            Err(Error::MarkerCollision(m)) if m == "[PMASK]"
        ));
    }

    #[test]
    fn marker_map_validation() {
        assert!(MarkerMap::new(vec!["<a>".into()], "<a>".into(), "<n>".into()).is_err());
        assert!(MarkerMap::new(vec![], "".into(), "<n>".into()).is_err());
        assert!(MarkerMap::new(vec!["<s>".into()], "<p>".into(), "<n>".into()).is_ok());
        let inst = build_prompt_instance(&wilson(), 3, PromptStyle::CoPrediction);
        assert!(render(&inst, &MarkerMap::standard(2)).is_err());
    }
}
