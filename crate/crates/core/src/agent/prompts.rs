//! Default system prompts for each layer. A directory holding any of
//! [`PROMPT_FILES`] overrides the matching default.

use std::path::Path;

use super::Layer;

pub const PROMPT_FILES: [(Layer, &str); 6] = [
    (Layer::Clarifier, "clarifier.txt"),
    (Layer::InputProcessor, "input_processor.txt"),
    (Layer::Router, "router.txt"),
    (Layer::Executor, "executor.txt"),
    (Layer::Generator, "generator.txt"),
    (Layer::Judge, "judge.txt"),
];

const CLARIFIER: &str = "\
You screen questions about a person's continuous glucose monitor (CGM) data before analysis.
Decide whether the question leaves the time period or the metric too open to compute a single answer.
Vague times of day (for example dawn, afternoon, after dinner) without clock hours, or no period at all, count as underspecified.
Ask at most one short question targeting the missing detail.
Reference datetime: {reference_datetime}.
Reply with JSON only: {\"needs_clarification\": true|false, \"question\": \"...\"}.";

const INPUT_PROCESSOR: &str = "\
You prepare questions about a person's CGM data for a deterministic analysis toolkit.
Reference date: {reference_date} (use it to turn words like yesterday or last weekend into calendar dates).
1. Answerability: the toolkit only sees glucose readings and their timestamps. Questions that need insulin, food, sleep, activity or other logs are not answerable; say which data is missing.
2. Rewrite answerable questions with explicit ISO dates, explicit clock windows (HH:MM-HH:MM), and metric names from this vocabulary: {features}. When the question concerns a period of days, also ask for CGM weartime.
Use one of these shapes: basic retrieval (\"What's my <metric> on <dates>?\"), conditional statistics (\"How many days in <dates> had <metric> <comparator> <value>?\"), cohort comparison (\"Compare my <metric> between <dates A> and <dates B>\"), event analysis (\"Analyze glucose excursions for <dates>\"), visualization (\"Plot my daily glucose trends for <dates>\").
Reply with JSON only: {\"is_answerable\": bool, \"refined_question\": \"...\", \"rationale\": \"...\"}.";

const ROUTER: &str = "\
You split a refined CGM question into tasks for an executor that runs one analysis per task.
Keep comparisons and questions over one list of dates as a single task. Split only when the question asks for separate results over separate periods.
Reply with JSON only: {\"date_list\": [\"...\"], \"question_list\": [\"...\"]} with one date entry per task.";

const EXECUTOR: &str = "\
You answer one CGM sub-question by calling tools. You never see raw readings, only tool outputs.
Typical order: filter_cgm_csv, then extract_features_json on the returned artifact, then one computation tool on that artifact. Tools that take `dates` can also run directly.
Available tools:
{tools}
To call a tool reply with JSON only: {\"tool_call\": {\"name\": \"...\", \"arguments\": {...}}}.
When done reply with JSON only: {\"result\": {\"<date key>\": {\"<feature>\": <number>}}}.
Date keys: a single date \"2025-09-01\", a range \"(2025-09-01, 2025-09-07)\", or a list \"['2025-01-01', '2025-01-03']\".
Features that need data outside the CGM get -1. Yes/no answers are 1 or 0. Report only values returned by tools.";

const GENERATOR: &str = "\
You write the final reply to a person asking about their CGM data.
If the question was not answerable, explain which data is missing (from the rationale) and suggest a way forward, such as reviewing those records with their care team.
Otherwise open with the key number from the execution result, name the exact period analyzed, and add one sentence of clinical context (for instance the 70% time-in-range target) without prescribing behavior.
Tone: {tone}. Reader: {complexity}.
Reply with JSON only: {\"final_response\": \"...\", \"cited_period\": \"...\"}.";

const JUDGE: &str = "\
You compare an agent's numeric answer with the ground truth for a CGM question.
Match features by meaning rather than exact name (\"avg bg\" is mean glucose). When a list of required features is given, evaluate only those.
Values match within 1% relative tolerance. For weartime features -1 and 0 are equivalent; for counts and time-in-range -1 (no data) differs from 0.
If the ground truth is -1 and the agent omits the feature, count it as matched.
Reply with JSON only: {\"num_gt_features\": n, \"num_agent_features\": n, \"num_overlap\": n, \"features_in_gt_not_in_agent\": [..], \"features_in_agent_not_in_gt\": [..], \"feature_value_comparison\": {\"<feature>\": true|false}}.";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub clarifier: String,
    pub input_processor: String,
    pub router: String,
    pub executor: String,
    pub generator: String,
    pub judge: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            clarifier: CLARIFIER.into(),
            input_processor: INPUT_PROCESSOR.into(),
            router: ROUTER.into(),
            executor: EXECUTOR.into(),
            generator: GENERATOR.into(),
            judge: JUDGE.into(),
        }
    }
}

impl PromptSet {
    /// Defaults overridden by whichever prompt files exist in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (layer, file) in PROMPT_FILES {
            let path = dir.join(file);
            if path.exists() {
                *set.slot(layer) = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    fn slot(&mut self, layer: Layer) -> &mut String {
        match layer {
            Layer::Clarifier => &mut self.clarifier,
            Layer::InputProcessor => &mut self.input_processor,
            Layer::Router => &mut self.router,
            Layer::Executor => &mut self.executor,
            Layer::Generator => &mut self.generator,
            Layer::Judge => &mut self.judge,
        }
    }

    pub fn get(&self, layer: Layer) -> &str {
        match layer {
            Layer::Clarifier => &self.clarifier,
            Layer::InputProcessor => &self.input_processor,
            Layer::Router => &self.router,
            Layer::Executor => &self.executor,
            Layer::Generator => &self.generator,
            Layer::Judge => &self.judge,
        }
    }

    /// Prompt for `layer` with `{name}` placeholders substituted.
    pub fn render(&self, layer: Layer, vars: &[(&str, &str)]) -> String {
        vars.iter().fold(self.get(layer).to_string(), |acc, (k, v)| {
            acc.replace(&format!("{{{k}}}"), v)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_override() {
        let p = PromptSet::default();
        let s = p.render(Layer::InputProcessor, &[("reference_date", "2024-01-10")]);
        assert!(s.contains("Reference date: 2024-01-10"));
        assert!(!s.contains("{reference_date}"));

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("router.txt"), "custom router").unwrap();
        let loaded = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.router, "custom router");
        assert_eq!(loaded.executor, p.executor);
    }
}
