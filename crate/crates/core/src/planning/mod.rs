//! The Moderator's slide plan: prompt construction against the structural
//! guide, plan parsing, and archetype coverage checks.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    bindings, estimate_tokens, GatewayError, LlmClient, PromptTemplate, SamplingParams, TemplateId,
};
use crate::retrieval::{Provenance, SourceSelection};

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("no source material to plan from")]
    EmptyContext,
    #[error("plan prompt needs {needed} tokens, budget is {budget}")]
    ContextBudgetExceeded { needed: usize, budget: usize },
    #[error("unparseable plan: {0}")]
    UnparseablePlan(String),
    #[error("plan completion was truncated")]
    Truncated,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Title,
    Roadmap,
    Introduction,
    WhyItMatters,
    Limitations,
    RecentAdvancements,
    CriticalPerspectives,
    FutureDirections,
    Conclusion,
    References,
}

impl Archetype {
    pub const ALL: [Archetype; 10] = [
        Archetype::Title,
        Archetype::Roadmap,
        Archetype::Introduction,
        Archetype::WhyItMatters,
        Archetype::Limitations,
        Archetype::RecentAdvancements,
        Archetype::CriticalPerspectives,
        Archetype::FutureDirections,
        Archetype::Conclusion,
        Archetype::References,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Title => "Title",
            Archetype::Roadmap => "Roadmap",
            Archetype::Introduction => "Introduction",
            Archetype::WhyItMatters => "WhyItMatters",
            Archetype::Limitations => "Limitations",
            Archetype::RecentAdvancements => "RecentAdvancements",
            Archetype::CriticalPerspectives => "CriticalPerspectives",
            Archetype::FutureDirections => "FutureDirections",
            Archetype::Conclusion => "Conclusion",
            Archetype::References => "References",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideEntry {
    pub archetype: Archetype,
    /// Heading as it appears in the guide text.
    pub heading: String,
    pub description: String,
    pub required: bool,
    pub annotations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralGuide {
    pub entries: Vec<GuideEntry>,
}

impl StructuralGuide {
    /// The ten-part annotated guide used for every plan.
    pub fn standard() -> Self {
        let e = |archetype, heading: &str, description: &str, required, annotations: &[&str]| {
            GuideEntry {
                archetype,
                heading: heading.to_string(),
                description: description.to_string(),
                required,
                annotations: annotations.iter().map(|s| s.to_string()).collect(),
            }
        };
        Self {
            entries: vec![
                e(
                    Archetype::Title,
                    "Title",
                    "Presents the topic, instructor, and session context clearly.",
                    true,
                    &[],
                ),
                e(
                    Archetype::Roadmap,
                    "Roadmap / Table of Contents",
                    "Outlines the structure of the presentation to help learners anticipate the flow.",
                    true,
                    &[
                        "Signaling: Highlight section headings to draw attention.",
                        "Intrinsic Load Management: Provide a preview that organizes upcoming information.",
                    ],
                ),
                e(
                    Archetype::Introduction,
                    "Introduction to the Topic",
                    "Uses textbook-derived content when available to establish stable, peer-reviewed definitions and foundational concepts, supplemented by paper introductions if needed.",
                    true,
                    &["Coherence: Limit to essential terminology and ideas."],
                ),
                e(
                    Archetype::WhyItMatters,
                    "Why This Topic Matters",
                    "Begins with high-level concepts and incorporates recent developments to demonstrate currency and relevance.",
                    false,
                    &["Signaling: Use bolded key terms and application-oriented language."],
                ),
                e(
                    Archetype::Limitations,
                    "Motivating Limitations of Early Approaches",
                    "Establish limitations and case-specific drawbacks if applicable.",
                    false,
                    &[
                        "Coherence: Present only limitations directly tied to motivating later content.",
                        "Signaling: Highlight the link between each limitation and the need for advancement.",
                    ],
                ),
                e(
                    Archetype::RecentAdvancements,
                    "Recent Advancements",
                    "Primarily from paper-derived summaries, maintain a consistent, clear structure for each paper.",
                    false,
                    &["Signaling: Each bullet should follow a consistent schema: Contribution/Metric - Impact."],
                ),
                e(
                    Archetype::CriticalPerspectives,
                    "Critical Perspectives",
                    "Provide a holistic, balanced view.",
                    false,
                    &[
                        "Coherence: Tie critiques back to material presented earlier.",
                        "Signaling: Use parallel phrasing to make contrasts explicit.",
                    ],
                ),
                e(
                    Archetype::FutureDirections,
                    "Future Directions",
                    "Draws mainly from paper discussion and future work sections, optionally integrating textbook outlooks for long-term trends.",
                    false,
                    &["Germane Load: Encourage synthesis with previously discussed content."],
                ),
                e(
                    Archetype::Conclusion,
                    "Conclusion",
                    "Reinforces 3–5 key takeaways aligned with learning objectives.",
                    true,
                    &[
                        "Signaling: Parallel summary bullet structure to strengthen recall.",
                        "Coherence: Avoid redundancy with earlier slides by focusing on synthesis.",
                    ],
                ),
                e(
                    Archetype::References,
                    "References",
                    "Lists sources cited in slides, including paper DOIs/arXiv IDs and textbook details.",
                    true,
                    &[],
                ),
            ],
        }
    }

    pub fn required(&self) -> impl Iterator<Item = Archetype> + '_ {
        self.entries.iter().filter(|e| e.required).map(|e| e.archetype)
    }

    /// Numbered guide as bound into the plan prompt.
    pub fn to_prompt_text(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}. {} – {}\n", i + 1, e.heading, e.description));
            for a in &e.annotations {
                out.push_str(&format!("   {a}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideSpec {
    pub index: usize,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidePlan {
    pub topic: String,
    pub source_kind: Provenance,
    pub slides: Vec<SlideSpec>,
    #[serde(default)]
    pub parse_warnings: Vec<String>,
}

impl SlidePlan {
    pub fn len(&self) -> usize {
        self.slides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slides.is_empty()
    }

    /// Text form, one `Slide N: title` block per slide.
    pub fn to_text(&self) -> String {
        self.slides
            .iter()
            .map(|s| format!("Slide {}: {}\n- Description: {}\n", s.index, s.title, s.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub missing_archetypes: Vec<Archetype>,
    pub warnings: Vec<String>,
    pub ok: bool,
    /// Archetype assigned to each slide, in plan order.
    pub mapping: Vec<Option<Archetype>>,
}

impl PlanDiagnostics {
    /// Feedback paragraph appended to a re-plan prompt.
    pub fn feedback(&self) -> String {
        let mut lines = vec!["The previous plan did not satisfy the structural guide.".to_string()];
        if !self.missing_archetypes.is_empty() {
            let names: Vec<_> = self.missing_archetypes.iter().map(|a| a.name()).collect();
            lines.push(format!("Missing sections: {}.", names.join(", ")));
        }
        lines.extend(self.warnings.iter().cloned());
        lines.join("\n")
    }
}

pub fn source_type_text(kind: Provenance) -> &'static str {
    match kind {
        Provenance::Arxiv => "research paper summaries",
        Provenance::Textbook => "textbook excerpts",
    }
}

/// Binds the plan template. `notes` (validation feedback, instructor
/// revision text) are appended after the template body.
pub fn build_plan_prompt(
    topic: &str,
    source_kind: Provenance,
    context: &SourceSelection,
    budget_tokens: usize,
    notes: &[String],
) -> Result<String, PlanningError> {
    if context.is_empty() {
        return Err(PlanningError::EmptyContext);
    }
    let mut prompt = PromptTemplate::builtin(TemplateId::Plan)
        .render(&bindings([
            ("topic", topic.to_string()),
            ("source_type", source_type_text(source_kind).to_string()),
            ("structural guide", StructuralGuide::standard().to_prompt_text()),
            ("context", context.context_text()),
        ]))
        .map_err(GatewayError::from)?;
    for note in notes.iter().filter(|n| !n.trim().is_empty()) {
        prompt.push_str("\n\n");
        prompt.push_str(note.trim());
    }
    let needed = estimate_tokens(&prompt);
    if needed > budget_tokens {
        return Err(PlanningError::ContextBudgetExceeded {
            needed,
            budget: budget_tokens,
        });
    }
    Ok(prompt)
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(?:#+\s*|[-*]\s+)?(?:\*\*|__|\\textbf\{)?\s*slide\s+(\d+)\s*[:.\u{2013}\u{2014}-]\s*(.*?)\s*(?:\*\*|__|\})?\s*$",
        )
        .unwrap()
    })
}

fn description_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:[-*\u{2022}]\s*)?(?:\*\*|__)?description(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(.*)$")
            .unwrap()
    })
}

/// Parses `Slide N: title` blocks, each followed by a `Description:` line.
pub fn parse_plan(
    completion: &str,
    topic: &str,
    source_kind: Provenance,
) -> Result<SlidePlan, PlanningError> {
    struct Block {
        number: usize,
        title: String,
        description: Vec<String>,
        seen_description: bool,
    }
    let mut blocks: Vec<Block> = Vec::new();
    let mut warnings = Vec::new();
    for line in completion.lines() {
        let t = line.trim();
        if let Some(c) = header_re().captures(t) {
            let title = c[2].trim().trim_end_matches("**").trim().to_string();
            blocks.push(Block {
                number: c[1].parse().unwrap_or(0),
                title,
                description: Vec::new(),
                seen_description: false,
            });
            continue;
        }
        let Some(block) = blocks.last_mut() else { continue };
        if t.is_empty() {
            continue;
        }
        if let Some(c) = description_re().captures(t) {
            block.seen_description = true;
            let d = c[1].trim();
            if !d.is_empty() {
                block.description.push(d.to_string());
            }
        } else if block.seen_description {
            block.description.push(t.trim_start_matches(['-', '*']).trim().to_string());
        }
    }
    let mut slides = Vec::new();
    for b in blocks {
        let description = b.description.join(" ");
        if b.title.is_empty() || description.is_empty() {
            warnings.push(format!("slide {} has no title or description; skipped", b.number));
            continue;
        }
        let index = slides.len() + 1;
        if b.number != index {
            warnings.push(format!("slide numbered {} renumbered to {index}", b.number));
        }
        slides.push(SlideSpec {
            index,
            title: b.title,
            description,
        });
    }
    if slides.len() < 2 {
        return Err(PlanningError::UnparseablePlan(format!(
            "found {} slide block(s), need at least 2",
            slides.len()
        )));
    }
    Ok(SlidePlan {
        topic: topic.to_string(),
        source_kind,
        slides,
        parse_warnings: warnings,
    })
}

/// Title keyword table, checked in order; the first matching row wins.
/// Patterns are matched case-insensitively at word starts.
pub const ARCHETYPE_RULES: &[(Archetype, &[&str])] = &[
    (Archetype::References, &["reference", "bibliograph", "works cited", "sources cited"]),
    (Archetype::Conclusion, &["conclusion", "concluding", "key takeaway", "takeaways", "wrap-up", "wrap up"]),
    (Archetype::FutureDirections, &["future", "outlook", "open problems", "open questions"]),
    (Archetype::CriticalPerspectives, &["critical", "critique", "criticism", "debate"]),
    (Archetype::Limitations, &["limitation", "drawback", "shortcoming", "early approaches"]),
    (Archetype::RecentAdvancements, &["recent", "advancement", "advances", "state of the art", "state-of-the-art"]),
    (Archetype::WhyItMatters, &["why", "matters", "significance", "importance", "motivation"]),
    (Archetype::Roadmap, &["roadmap", "road map", "table of contents", "outline", "agenda"]),
    (Archetype::Introduction, &["introduction", "introducing", "background", "fundamentals", "what is", "what are", "basics", "definition"]),
    (Archetype::Title, &["title"]),
];

fn rule_regexes() -> &'static Vec<(Archetype, Regex)> {
    static RE: OnceLock<Vec<(Archetype, Regex)>> = OnceLock::new();
    RE.get_or_init(|| {
        ARCHETYPE_RULES
            .iter()
            .map(|(a, words)| {
                let alt = words.iter().map(|w| regex::escape(w)).collect::<Vec<_>>().join("|");
                (*a, Regex::new(&format!(r"(?i)\b(?:{alt})")).unwrap())
            })
            .collect()
    })
}

/// Archetype for one slide title by the keyword table. A first slide
/// matching no rule is the title slide.
pub fn classify_title(title: &str, position: usize) -> Option<Archetype> {
    rule_regexes()
        .iter()
        .find(|(_, re)| re.is_match(title))
        .map(|(a, _)| *a)
        .or((position == 1).then_some(Archetype::Title))
}

pub fn validate_plan(plan: &SlidePlan, guide: &StructuralGuide) -> PlanDiagnostics {
    let mapping: Vec<Option<Archetype>> =
        plan.slides.iter().map(|s| classify_title(&s.title, s.index)).collect();
    let missing: Vec<Archetype> = guide
        .entries
        .iter()
        .map(|e| e.archetype)
        .filter(|a| !mapping.contains(&Some(*a)))
        .collect();
    let mut warnings = Vec::new();
    if plan.slides.len() < 6 {
        warnings.push(format!("plan has {} slides, expected at least 6", plan.slides.len()));
    }
    if mapping.first().copied().flatten() != Some(Archetype::Title) {
        warnings.push("first slide is not a title slide".to_string());
    }
    if mapping.last().copied().flatten() != Some(Archetype::References) {
        warnings.push("last slide is not the references slide".to_string());
    }
    for e in guide.entries.iter().filter(|e| !e.required && missing.contains(&e.archetype)) {
        warnings.push(format!("optional section {} not covered", e.archetype));
    }
    let ok = guide
        .entries
        .iter()
        .filter(|e| e.required)
        .all(|e| !missing.contains(&e.archetype));
    PlanDiagnostics {
        missing_archetypes: missing,
        warnings,
        ok,
        mapping,
    }
}

/// One plan round: prompt, model call, parse.
pub fn request_plan(
    llm: &dyn LlmClient,
    topic: &str,
    source_kind: Provenance,
    context: &SourceSelection,
    budget_tokens: usize,
    notes: &[String],
) -> Result<(String, SlidePlan), PlanningError> {
    let prompt = build_plan_prompt(topic, source_kind, context, budget_tokens, notes)?;
    let completion = llm.complete(
        TemplateId::Plan.role(),
        &prompt,
        &SamplingParams::for_template(TemplateId::Plan),
    )?;
    if !completion.is_usable() {
        return Err(PlanningError::Truncated);
    }
    let plan = parse_plan(&completion.text, topic, source_kind)?;
    Ok((completion.text, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Snippet;
    use crate::retrieval::{snippet_citation, SourceRef, SourceSummary};

    fn plan_of(titles: &[&str]) -> SlidePlan {
        SlidePlan {
            topic: "t".into(),
            source_kind: Provenance::Textbook,
            slides: titles
                .iter()
                .enumerate()
                .map(|(i, t)| SlideSpec {
                    index: i + 1,
                    title: t.to_string(),
                    description: "d".into(),
                })
                .collect(),
            parse_warnings: vec![],
        }
    }

    fn selection(n: usize) -> SourceSelection {
        SourceSelection {
            ranked: (0..n)
                .map(|i| {
                    let s = Snippet::new(format!("s{i}"), format!("Source Title {i}"), "body text");
                    SourceSummary {
                        provenance: Provenance::Textbook,
                        body: s.text.clone(),
                        citation: snippet_citation(&s),
                        source_ref: SourceRef::Snippet(s.id.clone()),
                    }
                })
                .collect(),
            rationale: None,
        }
    }

    #[test]
    fn guide_shape() {
        let g = StructuralGuide::standard();
        let names: Vec<_> = g.entries.iter().map(|e| e.archetype).collect();
        assert_eq!(names, Archetype::ALL);
        let req: Vec<_> = g.required().collect();
        assert_eq!(
            req,
            [Archetype::Title, Archetype::Roadmap, Archetype::Introduction, Archetype::Conclusion, Archetype::References]
        );
    }

    #[test]
    fn prompt_binds_everything() {
        let sel = selection(3);
        let p = build_plan_prompt("Neurotransmitters", Provenance::Textbook, &sel, 100_000, &[]).unwrap();
        for e in &StructuralGuide::standard().entries {
            assert!(p.contains(&e.heading), "{}", e.heading);
        }
        for i in 0..3 {
            assert!(p.contains(&format!("Source Title {i}")));
        }
        assert!(p.contains("textbook excerpts"));
        assert!(!p.contains("{context}"));
    }

    #[test]
    fn oversized_context_is_an_error() {
        let sel = selection(3);
        assert!(matches!(
            build_plan_prompt("x", Provenance::Arxiv, &sel, 50, &[]),
            Err(PlanningError::ContextBudgetExceeded { .. })
        ));
        assert!(matches!(
            build_plan_prompt("x", Provenance::Arxiv, &selection(0), 50_000, &[]),
            Err(PlanningError::EmptyContext)
        ));
    }

    #[test]
    fn header_styles() {
        let text = "**Slide 1: Title**\n- Description: a\n\n\\textbf{Slide 2: Roadmap}\n\n- Description: b\n### Slide 4 - Intro\nDescription: c\ncontinued";
        let p = parse_plan(text, "t", Provenance::Arxiv).unwrap();
        let titles: Vec<_> = p.slides.iter().map(|s| s.title.as_str()).collect();
        assert_eq!(titles, ["Title", "Roadmap", "Intro"]);
        assert_eq!(p.slides[2].index, 3);
        assert_eq!(p.slides[2].description, "c continued");
        assert_eq!(p.parse_warnings.len(), 1);
    }

    #[test]
    fn too_few_blocks() {
        assert!(matches!(parse_plan("", "t", Provenance::Arxiv), Err(PlanningError::UnparseablePlan(_))));
        assert!(parse_plan("Slide 1: A\nDescription: x", "t", Provenance::Arxiv).is_err());
    }

    #[test]
    fn round_trip_text() {
        let p = plan_of(&["Title", "Roadmap", "Introduction to X", "Conclusion", "References"]);
        let q = parse_plan(&p.to_text(), "t", Provenance::Textbook).unwrap();
        assert_eq!(p.slides, q.slides);
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify_title("Motivating Limitations of Early Approaches", 5), Some(Archetype::Limitations));
        assert_eq!(classify_title("Recent Advancements in Manifold Learning", 6), Some(Archetype::RecentAdvancements));
        assert_eq!(classify_title("Overview of Isomap", 7), None);
        assert_eq!(classify_title("Table of Contents", 2), Some(Archetype::Roadmap));
        assert_eq!(classify_title("Preferences", 3), None);
        assert_eq!(classify_title("Neurotransmitters", 1), Some(Archetype::Title));
    }

    #[test]
    fn missing_references_fails() {
        let d = validate_plan(
            &plan_of(&["Title", "Roadmap", "Introduction", "Why It Matters", "Details", "Conclusion"]),
            &StructuralGuide::standard(),
        );
        assert!(!d.ok);
        assert!(d.missing_archetypes.contains(&Archetype::References));
    }

    #[test]
    fn optional_sections_only_warn() {
        let d = validate_plan(
            &plan_of(&["Title", "Roadmap", "Introduction", "Details", "Conclusion", "References"]),
            &StructuralGuide::standard(),
        );
        assert!(d.ok);
        assert!(d.missing_archetypes.contains(&Archetype::Limitations));
        assert!(d.warnings.iter().any(|w| w.contains("Limitations")));
    }
}
