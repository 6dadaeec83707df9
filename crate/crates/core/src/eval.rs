//! External evaluation arithmetic: weighted accuracy, category tables,
//! verdict alignment, and visual similarity scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::{PromptBundle, Raster, ReplyGrammar};
use crate::prompts::{PromptError, PromptSet};
use crate::testgen::TestCategory;
use crate::testrunner::Verdict;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no test cases to score")]
    ZeroTotal,
    #[error("counts disagree: {yes} + {partial} + {no} != {total}")]
    InconsistentCounts { yes: u64, partial: u64, no: u64, total: u64 },
    #[error("test {index} of app {app} lacks a category label")]
    UnlabeledTest { app: String, index: usize },
    #[error("alignment input is empty")]
    EmptyAlignment,
    #[error("no records to report")]
    EmptyReport,
    #[error("score {0} is outside 1..=5")]
    ScoreOutOfRange(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdictCounts {
    pub n_yes: u64,
    pub n_partial: u64,
    pub n_no: u64,
    pub n_total: u64,
    #[serde(default)]
    pub fail_to_start: u64,
}

impl EvalVerdictCounts {
    pub fn new(n_yes: u64, n_partial: u64, n_no: u64) -> Self {
        EvalVerdictCounts { n_yes, n_partial, n_no, n_total: n_yes + n_partial + n_no, fail_to_start: 0 }
    }

    pub fn tally<'a>(verdicts: impl IntoIterator<Item = &'a Verdict>) -> Self {
        let mut c = EvalVerdictCounts::default();
        for v in verdicts {
            match v {
                Verdict::Yes => c.n_yes += 1,
                Verdict::Partial => c.n_partial += 1,
                Verdict::No => c.n_no += 1,
            }
        }
        c.n_total = c.n_yes + c.n_partial + c.n_no;
        c
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_yes + self.n_partial + self.n_no != self.n_total {
            return Err(EvalError::InconsistentCounts { yes: self.n_yes, partial: self.n_partial, no: self.n_no, total: self.n_total });
        }
        Ok(())
    }

    fn add(&mut self, other: &EvalVerdictCounts) {
        self.n_yes += other.n_yes;
        self.n_partial += other.n_partial;
        self.n_no += other.n_no;
        self.n_total += other.n_total;
        self.fail_to_start += other.fail_to_start;
    }
}

fn lift<F: FromPrimitive>(x: u64) -> F {
    F::from_u64(x).expect("count representable in scalar")
}

/// (yes + 0.5·partial) / total × 100.
pub fn accuracy<F: Float + FromPrimitive>(c: &EvalVerdictCounts) -> Result<F, EvalError> {
    c.validate()?;
    if c.n_total == 0 {
        return Err(EvalError::ZeroTotal);
    }
    let half = F::from_f64(0.5).expect("0.5 representable");
    let hundred: F = lift(100);
    Ok((lift::<F>(c.n_yes) + half * lift(c.n_partial)) / lift(c.n_total) * hundred)
}

/// Exact form of [`accuracy`] as a percentage ratio.
pub fn accuracy_exact(c: &EvalVerdictCounts) -> Result<Ratio<u64>, EvalError> {
    c.validate()?;
    if c.n_total == 0 {
        return Err(EvalError::ZeroTotal);
    }
    Ok(Ratio::new((2 * c.n_yes + c.n_partial) * 100, 2 * c.n_total))
}

/// Accuracy from YES and PARTIAL shares already expressed as percentages.
pub fn accuracy_from_rates<F: Float + FromPrimitive>(yes_pct: F, partial_pct: F) -> F {
    yes_pct + F::from_f64(0.5).expect("0.5 representable") * partial_pct
}

// ---- records ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTest {
    pub verdict: Verdict,
    #[serde(default)]
    pub instruction_category: Option<String>,
    #[serde(default)]
    pub test_category: Option<TestCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub app_id: String,
    #[serde(default = "default_true")]
    pub started: bool,
    pub tests: Vec<EvalTest>,
    #[serde(default)]
    pub appearance: Option<f64>,
    #[serde(default)]
    pub similarity: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl EvalRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        for score in [self.appearance, self.similarity].into_iter().flatten() {
            if !(1.0..=5.0).contains(&score) {
                return Err(EvalError::ScoreOutOfRange(format!("{score} (app {})", self.app_id)));
            }
        }
        Ok(())
    }

    /// Verdicts as scored in aggregate: every test of an app that failed to
    /// start counts as NO.
    pub fn effective_verdicts(&self) -> impl Iterator<Item = Verdict> + '_ {
        self.tests.iter().map(move |t| if self.started { t.verdict } else { Verdict::No })
    }
}

/// Aggregate counts over records, fail-to-start apps scored NO.
pub fn aggregate_counts(records: &[EvalRecord]) -> EvalVerdictCounts {
    let verdicts: Vec<Verdict> = records.iter().flat_map(|r| r.effective_verdicts()).collect();
    let mut c = EvalVerdictCounts::tally(&verdicts);
    c.fail_to_start = records.iter().filter(|r| !r.started).count() as u64;
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoryCell<F> {
    Value(F),
    /// Every app contributing to this category failed to start.
    NotApplicable(NotApplicable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotApplicable {
    #[serde(rename = "N.A.")]
    Marker,
}

impl<F: Float + std::fmt::Display> CategoryCell<F> {
    pub fn value(&self) -> Option<F> {
        match self {
            CategoryCell::Value(v) => Some(*v),
            CategoryCell::NotApplicable(_) => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            CategoryCell::Value(v) => format!("{v:.1}"),
            CategoryCell::NotApplicable(_) => "N.A.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable<F> {
    pub by_instruction: BTreeMap<String, CategoryCell<F>>,
    pub by_test_case: BTreeMap<String, CategoryCell<F>>,
}

/// Accuracy within each instruction category and each test-case category,
/// over apps that started.
pub fn category_accuracy<F: Float + FromPrimitive + std::fmt::Display>(records: &[EvalRecord]) -> Result<CategoryTable<F>, EvalError> {
    let mut by_instruction: BTreeMap<String, EvalVerdictCounts> = BTreeMap::new();
    let mut by_test: BTreeMap<String, EvalVerdictCounts> = BTreeMap::new();
    for r in records {
        for (index, t) in r.tests.iter().enumerate() {
            let (Some(ic), Some(tc)) = (t.instruction_category.as_ref(), t.test_category) else {
                return Err(EvalError::UnlabeledTest { app: r.app_id.clone(), index });
            };
            let one = if r.started { EvalVerdictCounts::tally([&t.verdict]) } else { EvalVerdictCounts::default() };
            by_instruction.entry(ic.clone()).or_default().add(&one);
            by_test.entry(tc.label().to_string()).or_default().add(&one);
        }
    }
    let cells = |m: BTreeMap<String, EvalVerdictCounts>| -> Result<BTreeMap<String, CategoryCell<F>>, EvalError> {
        m.into_iter()
            .map(|(k, c)| {
                let cell = if c.n_total == 0 { CategoryCell::NotApplicable(NotApplicable::Marker) } else { CategoryCell::Value(accuracy(&c)?) };
                Ok((k, cell))
            })
            .collect()
    };
    Ok(CategoryTable { by_instruction: cells(by_instruction)?, by_test_case: cells(by_test)? })
}

// ---- alignment --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub agent: Verdict,
    pub manual: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport<F> {
    pub matches: usize,
    pub total: usize,
    pub rate: F,
    /// Over cases whose manual verdict is YES or NO.
    pub restricted_matches: usize,
    pub restricted_total: usize,
    pub restricted_rate: Option<F>,
    pub note: Option<String>,
}

pub fn alignment_rate<F: Float + FromPrimitive>(pairs: &[AlignmentPair]) -> Result<AlignmentReport<F>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyAlignment);
    }
    let matches = pairs.iter().filter(|p| p.agent == p.manual).count();
    let restricted: Vec<&AlignmentPair> = pairs.iter().filter(|p| p.manual != Verdict::Partial).collect();
    let restricted_matches = restricted.iter().filter(|p| p.agent == p.manual).count();
    let pct = |num: usize, den: usize| lift::<F>(num as u64) / lift(den as u64) * lift(100);
    Ok(AlignmentReport {
        matches,
        total: pairs.len(),
        rate: pct(matches, pairs.len()),
        restricted_matches,
        restricted_total: restricted.len(),
        restricted_rate: (!restricted.is_empty()).then(|| pct(restricted_matches, restricted.len())),
        note: None,
    })
}

/// Like [`alignment_rate`], but compares against an externally reported
/// figure and attaches a note when it disagrees with the exact quotient by
/// more than display rounding.
pub fn alignment_rate_checked<F: Float + FromPrimitive + std::fmt::Display>(
    pairs: &[AlignmentPair],
    reported: Option<F>,
) -> Result<AlignmentReport<F>, EvalError> {
    let mut report = alignment_rate::<F>(pairs)?;
    if let Some(reported) = reported {
        let tolerance = F::from_f64(0.05).expect("tolerance representable");
        if (reported - report.rate).abs() > tolerance {
            report.note = Some(format!(
                "reported alignment {reported:.1}% differs from the exact quotient {}/{} = {:.2}%",
                report.matches, report.total, report.rate
            ));
        }
    }
    Ok(report)
}

// ---- visual scoring ---------------------------------------------------------

const JUDGE_SYSTEM: &str = "You are an expert web designer and evaluator.";

/// Bundle asking a vision model to score a rendering against its design.
pub fn build_visual_prompt(prompts: &PromptSet, screenshot: &Raster, design: &Raster) -> Result<PromptBundle, PromptError> {
    let text = prompts.render("visual_similarity", &[])?;
    Ok(PromptBundle::new(JUDGE_SYSTEM, ReplyGrammar::FreeText)
        .with_text(text)
        .with_image(screenshot.clone())
        .with_image(design.clone()))
}

/// The five aspects the similarity rubric asks about.
pub const RUBRIC_ASPECTS: [&str; 5] = ["Layout", "Components", "Color Scheme", "Size and Proportion", "Visual Fidelity"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedScore<F> {
    pub score: F,
    pub clamped: bool,
}

/// Read the last number on the final non-empty line; clamp into [1, 5].
pub fn parse_score<F: Float + FromPrimitive + std::str::FromStr>(reply: &str) -> Option<ParsedScore<F>> {
    let line = reply.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    let mut best: Option<&str> = None;
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            best = Some(&line[start..i]);
        } else {
            i += 1;
        }
    }
    let raw: F = best?.parse().ok()?;
    let (lo, hi): (F, F) = (lift(1), lift(5));
    if raw < lo || raw > hi {
        warn!(score = best, "visual score outside 1..=5; clamping");
        return Some(ParsedScore { score: raw.max(lo).min(hi), clamped: true });
    }
    Some(ParsedScore { score: raw, clamped: false })
}

// ---- report -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub apps: usize,
    pub counts: EvalVerdictCounts,
    pub accuracy: F,
    pub yes_rate: F,
    pub partial_rate: F,
    pub no_rate: F,
    pub fail_to_start_rate: F,
    pub mean_appearance: Option<F>,
    pub mean_similarity: Option<F>,
    pub categories: Option<CategoryTable<F>>,
}

fn mean<F: Float + FromPrimitive>(values: impl Iterator<Item = f64>) -> Option<F> {
    let v: Vec<F> = values.map(|x| F::from_f64(x).expect("score representable")).collect();
    if v.is_empty() {
        return None;
    }
    Some(v.iter().fold(F::zero(), |a, b| a + *b) / lift(v.len() as u64))
}

pub fn emit_report<F: Float + FromPrimitive + std::fmt::Display>(records: &[EvalRecord]) -> Result<EvalReport<F>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    for r in records {
        r.validate()?;
    }
    let counts = aggregate_counts(records);
    let acc = accuracy::<F>(&counts)?;
    let pct = |n: u64, d: u64| lift::<F>(n) / lift(d) * lift(100);
    // Category tables are optional: only when every test carries both labels.
    let categories = category_accuracy::<F>(records).ok();
    Ok(EvalReport {
        apps: records.len(),
        counts,
        accuracy: acc,
        yes_rate: pct(counts.n_yes, counts.n_total),
        partial_rate: pct(counts.n_partial, counts.n_total),
        no_rate: pct(counts.n_no, counts.n_total),
        fail_to_start_rate: pct(counts.fail_to_start, records.len() as u64),
        mean_appearance: mean(records.iter().filter_map(|r| r.appearance)),
        mean_similarity: mean(records.iter().filter_map(|r| r.similarity)),
        categories,
    })
}

impl<F: Float + std::fmt::Display> EvalReport<F> {
    /// Plain-text rendering, one decimal place throughout.
    pub fn render_text(&self) -> String {
        let opt = |v: Option<F>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(out, "Apps: {}  Tests: {}", self.apps, self.counts.n_total);
        let _ = writeln!(out, "Fail to start: {:.1}%", self.fail_to_start_rate);
        let _ = writeln!(out, "YES: {:.1}%  PARTIAL: {:.1}%  NO: {:.1}%", self.yes_rate, self.partial_rate, self.no_rate);
        let _ = writeln!(out, "Accuracy: {:.1}%", self.accuracy);
        let _ = writeln!(out, "Appearance: {}  Vis. similarity: {}", opt(self.mean_appearance), opt(self.mean_similarity));
        if let Some(t) = &self.categories {
            for (title, table) in [("Instruction category", &t.by_instruction), ("Test case category", &t.by_test_case)] {
                let _ = writeln!(out, "\n{title}:");
                for (k, v) in table {
                    let _ = writeln!(out, "  {k}: {}", v.render());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(verdict: Verdict, ic: &str, tc: TestCategory) -> EvalTest {
        EvalTest { verdict, instruction_category: Some(ic.into()), test_category: Some(tc) }
    }

    #[test]
    fn hand_computed_accuracy() {
        // (23 + 3.5) / 40 = 0.6625
        let a: f64 = accuracy(&EvalVerdictCounts::new(23, 7, 10)).unwrap();
        assert!((a - 66.25).abs() < 1e-12);
        assert_eq!(accuracy_exact(&EvalVerdictCounts::new(23, 7, 10)).unwrap(), Ratio::new(265, 4));
        assert_eq!(accuracy::<f64>(&EvalVerdictCounts::new(0, 0, 0)), Err(EvalError::ZeroTotal));
    }

    #[test]
    fn two_category_split() {
        // A: YES, PARTIAL, NO -> 50.0; B: YES, YES, PARTIAL -> 83.33
        let records = vec![EvalRecord {
            app_id: "a1".into(),
            started: true,
            tests: vec![
                t(Verdict::Yes, "A", TestCategory::Functionality),
                t(Verdict::Partial, "A", TestCategory::DataDisplay),
                t(Verdict::No, "A", TestCategory::Functionality),
                t(Verdict::Yes, "B", TestCategory::DesignValidation),
                t(Verdict::Yes, "B", TestCategory::Functionality),
                t(Verdict::Partial, "B", TestCategory::DesignValidation),
            ],
            appearance: None,
            similarity: None,
        }];
        let table: CategoryTable<f64> = category_accuracy(&records).unwrap();
        assert_eq!(table.by_instruction["A"].value(), Some(50.0));
        assert!((table.by_instruction["B"].value().unwrap() - 250.0 / 3.0).abs() < 1e-9);
        // Functionality: YES, NO, YES -> 66.67
        assert!((table.by_test_case["Functionality"].value().unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(table.by_test_case["Data Display"].value(), Some(50.0));
        assert_eq!(table.by_test_case["Design Validation"].value(), Some(75.0));
    }

    #[test]
    fn failed_apps_make_categories_not_applicable() {
        let records = vec![EvalRecord {
            app_id: "dead".into(),
            started: false,
            tests: vec![t(Verdict::Yes, "Game", TestCategory::Functionality)],
            appearance: None,
            similarity: None,
        }];
        let table: CategoryTable<f64> = category_accuracy(&records).unwrap();
        assert_eq!(table.by_instruction["Game"].render(), "N.A.");
        let report: EvalReport<f64> = emit_report(&records).unwrap();
        assert_eq!(report.counts.n_no, 1);
        assert_eq!(report.fail_to_start_rate, 100.0);
    }

    #[test]
    fn unlabeled_tests_are_rejected() {
        let records = vec![EvalRecord {
            app_id: "x".into(),
            started: true,
            tests: vec![EvalTest { verdict: Verdict::Yes, instruction_category: None, test_category: None }],
            appearance: None,
            similarity: None,
        }];
        assert!(matches!(category_accuracy::<f64>(&records), Err(EvalError::UnlabeledTest { .. })));
    }

    #[test]
    fn scores_parse_and_clamp() {
        assert_eq!(parse_score::<f64>("Looks close.\n5"), Some(ParsedScore { score: 5.0, clamped: false }));
        assert_eq!(parse_score::<f64>("Score: 3.5\n\n"), Some(ParsedScore { score: 3.5, clamped: false }));
        assert_eq!(parse_score::<f64>("7"), Some(ParsedScore { score: 5.0, clamped: true }));
        assert_eq!(parse_score::<f64>("0"), Some(ParsedScore { score: 1.0, clamped: true }));
        assert_eq!(parse_score::<f64>("no idea"), None);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert_eq!(emit_report::<f64>(&[]), Err(EvalError::EmptyReport));
    }
}
