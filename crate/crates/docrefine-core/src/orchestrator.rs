//! Closed-loop pipeline controller.
//!
//! Wires analysis -> understanding -> decomposition -> refinement ->
//! verification, then routes corrective feedback back into follow-up ops
//! (or a full re-decomposition) until every score meets its threshold or
//! the iteration budget runs out. The loop does not assume monotone
//! improvement: with `keep_best` the returned iteration maximizes
//! `scs + lfi + iar` over the whole trace.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, StageTag};
use crate::ir::{diff_ir, DocumentIR};
use crate::layout::{self, IngestSource, LayoutParams};
use crate::plan::{self, AmbiguityNote, AtomicOp, Instruction, OpAction, OpTarget};
use crate::refine::{self, OverflowWarning, RefinementResult};
use crate::semantics::{self, SemanticRep};
use crate::verify::{
    self, AgentRoute, FeedbackItem, FeedbackTarget, Thresholds, VerificationReport, VerifyParams,
};

/// Loop budget and stop thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_iterations: u32,
    pub thresholds: Thresholds,
    /// Return the iteration with the best score sum rather than the last.
    pub keep_best: bool,
    #[serde(skip)]
    pub layout: LayoutParams,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            thresholds: Thresholds::default(),
            keep_best: true,
            layout: LayoutParams::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        self.thresholds.validate()
    }
}

/// One loop iteration: the ops it executed, the verification that followed,
/// and the feedback it consumed to get there. Wall time is logged, not
/// serialized, so output directories stay byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub ops: Vec<AtomicOp>,
    pub report: VerificationReport,
    /// Feedback items (from the previous round) this iteration acted on.
    pub feedback_consumed: Vec<FeedbackItem>,
    #[serde(skip, default)]
    pub wall: Duration,
}

/// Full trace of a run; never longer than the configured budget.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iterations: Vec<IterationRecord>,
}

/// Result of a full closed-loop run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub result: RefinementResult,
    pub report: VerificationReport,
    pub trace: IterationTrace,
    pub ambiguities: Vec<AmbiguityNote>,
}

/// A stage failure; carries the trace accumulated before the abort.
#[derive(Debug, Error)]
#[error("pipeline failed at {stage}: {message}")]
pub struct PipelineError {
    pub stage: StageTag,
    pub message: String,
    pub trace: IterationTrace,
}

fn stage_err<E: std::fmt::Display>(
    stage: StageTag,
    trace: &IterationTrace,
) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
        trace: trace.clone(),
    }
}

/// Converts routed feedback into the next round of work.
///
/// CRA/SGA items become follow-up ops (ids assigned from `next_op_id`)
/// carrying the feedback message as their goal or guidance; any item routed
/// to IDA, MCU, or LSA instead requests re-decomposition. Ops come out in
/// severity order, high first. `prior_ops` supplies the kind and payload
/// context for op-targeted items.
pub fn route_feedback(
    items: &[FeedbackItem],
    _original: &Instruction,
    prior_ops: &[AtomicOp],
    ir: &DocumentIR,
    next_op_id: u32,
) -> (Vec<AtomicOp>, bool) {
    let mut sorted: Vec<&FeedbackItem> = items.iter().collect();
    sorted.sort_by(|a, b| b.severity.cmp(&a.severity));

    let mut redecompose = false;
    let mut ops = Vec::new();
    let mut op_id = next_op_id;
    let prior_by_id: BTreeMap<u32, &AtomicOp> = prior_ops.iter().map(|o| (o.op_id, o)).collect();

    for item in sorted {
        match item.route_to {
            AgentRoute::Ida | AgentRoute::Mcu | AgentRoute::Lsa => redecompose = true,
            AgentRoute::Sga => {
                // Re-run the summary with the message as guidance.
                let prior = match &item.target {
                    FeedbackTarget::Op(id) => prior_by_id.get(id).copied(),
                    FeedbackTarget::Element(_) => None,
                };
                if let Some(AtomicOp {
                    target,
                    action: OpAction::GenerateSummary { constraints, .. },
                    ..
                }) = prior
                {
                    ops.push(AtomicOp {
                        op_id,
                        target: target.clone(),
                        action: OpAction::GenerateSummary {
                            constraints: constraints.clone(),
                            guidance: Some(item.message.clone()),
                        },
                        rationale: "follow-up from verification feedback".into(),
                    });
                    op_id += 1;
                } else {
                    log::warn!("SGA feedback without a summary op to retry: {}", item.message);
                }
            }
            AgentRoute::Cra => {
                // Retarget the prior op kind where that keeps the follow-up
                // checkable (caption keys, table cells); plain rewrite
                // otherwise.
                let element = match &item.target {
                    FeedbackTarget::Element(id) => Some(id.clone()),
                    FeedbackTarget::Op(id) => prior_by_id
                        .get(id)
                        .and_then(|op| op.target_element().cloned()),
                };
                let Some(element) = element else {
                    log::warn!("CRA feedback without a resolvable target: {}", item.message);
                    continue;
                };
                if ir.element(&element).is_none() {
                    log::warn!("CRA feedback targets vanished element {element}");
                    continue;
                }
                let prior = prior_ops
                    .iter()
                    .filter(|op| op.target_element() == Some(&element))
                    .max_by_key(|op| op.op_id);
                // Keep the original goal in front so the follow-up still
                // anchors to the user's intent, not just the complaint.
                let follow_up_goal = match prior.and_then(|op| op.goal_text()) {
                    Some(goal) => format!("{goal}; {}", item.message),
                    None => item.message.clone(),
                };
                let action = match prior.map(|op| (&op.action, op)) {
                    Some((OpAction::UpdateCaption { required_keys, .. }, _)) => {
                        OpAction::UpdateCaption {
                            goal: follow_up_goal,
                            required_keys: required_keys.clone(),
                        }
                    }
                    Some((OpAction::CorrectTableCell { value }, op)) => {
                        // Direct edits are deterministic; re-issue verbatim.
                        ops.push(AtomicOp {
                            op_id,
                            target: op.target.clone(),
                            action: OpAction::CorrectTableCell {
                                value: value.clone(),
                            },
                            rationale: "re-issued from verification feedback".into(),
                        });
                        op_id += 1;
                        continue;
                    }
                    _ => OpAction::RewriteText {
                        goal: follow_up_goal,
                    },
                };
                ops.push(AtomicOp {
                    op_id,
                    target: OpTarget::Element { id: element },
                    action,
                    rationale: "follow-up from verification feedback".into(),
                });
                op_id += 1;
            }
        }
    }
    (ops, redecompose)
}

fn augment_instruction(original: &Instruction, feedback: &[FeedbackItem]) -> Instruction {
    let mut text = original.text.clone();
    text.push_str("\n\nCorrective feedback from verification:\n");
    for item in feedback {
        text.push_str(&format!("- {}\n", item.message));
    }
    Instruction {
        text,
        constraints: original.constraints.clone(),
    }
}

/// Runs the full closed loop over one document and instruction.
///
/// Iteration 1 runs the complete chain; later iterations apply
/// feedback-derived follow-up ops, or re-decompose the (feedback-augmented)
/// instruction against the original document when analysis-side agents are
/// implicated. The loop stops as soon as all three scores meet their
/// thresholds, or when the budget is exhausted.
pub fn run(
    src: &IngestSource,
    instruction: &Instruction,
    cfg: &LoopConfig,
    backend: &dyn Backend,
) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate().map_err(|m| PipelineError {
        stage: StageTag::Lsa,
        message: m,
        trace: IterationTrace::default(),
    })?;

    let mut trace = IterationTrace::default();

    let ir0 =
        layout::analyze(src, None, &cfg.layout).map_err(stage_err(StageTag::Lsa, &trace))?;
    let sem0 =
        semantics::understand(&ir0, backend).map_err(stage_err(StageTag::Mcu, &trace))?;
    let (initial_ops, ambiguities) = plan::decompose(instruction, &sem0, &ir0, backend)
        .map_err(stage_err(StageTag::Ida, &trace))?;

    struct Snapshot {
        ir: DocumentIR,
        sem: SemanticRep,
        summaries: BTreeMap<u32, String>,
        warnings: Vec<OverflowWarning>,
    }

    let mut current_ir = ir0.clone();
    let mut current_sem = sem0.clone();
    let mut applied: Vec<AtomicOp> = Vec::new();
    let mut summaries: BTreeMap<u32, String> = BTreeMap::new();
    let mut warnings: Vec<OverflowWarning> = Vec::new();
    let mut pending = initial_ops;
    let mut consumed: Vec<FeedbackItem> = Vec::new();

    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut best: Option<(f64, usize)> = None;

    for iteration in 1..=cfg.max_iterations {
        let started = Instant::now();
        let result = refine::apply_ops(&current_ir, &current_sem, &pending, backend)
            .map_err(stage_err(StageTag::Cra, &trace))?;
        current_ir = result.new_ir;
        current_sem = result.new_sem;
        summaries.extend(result.summaries);
        warnings.extend(result.warnings);
        applied.extend(pending.iter().cloned());

        let params = VerifyParams {
            backend,
            judge: true,
            thresholds: cfg.thresholds,
            summaries: Some(&summaries),
            rasters: None,
        };
        let report = verify::verify(
            &ir0,
            &current_ir,
            &sem0,
            &current_sem,
            instruction,
            &applied,
            &params,
        )
        .map_err(stage_err(StageTag::Fcv, &trace))?;

        let wall = started.elapsed();
        log::info!(
            "iteration {iteration}: scs={:.3} lfi={:.3} iar={:.3} ({} ops, {wall:?})",
            report.scs,
            report.lfi,
            report.iar,
            pending.len(),
        );
        trace.iterations.push(IterationRecord {
            ops: std::mem::take(&mut pending),
            report: report.clone(),
            feedback_consumed: std::mem::take(&mut consumed),
            wall,
        });
        snapshots.push(Snapshot {
            ir: current_ir.clone(),
            sem: current_sem.clone(),
            summaries: summaries.clone(),
            warnings: warnings.clone(),
        });
        let index = snapshots.len() - 1;
        if best.is_none_or(|(sum, _)| report.score_sum() > sum) {
            best = Some((report.score_sum(), index));
        }

        if report.meets(&cfg.thresholds) || iteration == cfg.max_iterations {
            break;
        }

        let next_op_id = applied.iter().map(|o| o.op_id).max().unwrap_or(0) + 1;
        let (follow_ups, redecompose) = route_feedback(
            &report.feedback,
            instruction,
            &applied,
            &current_ir,
            next_op_id,
        );
        consumed = report.feedback.clone();

        if redecompose {
            let augmented = augment_instruction(instruction, &report.feedback);
            let (new_ops, _) = plan::decompose(&augmented, &sem0, &ir0, backend)
                .map_err(stage_err(StageTag::Ida, &trace))?;
            current_ir = ir0.clone();
            current_sem = sem0.clone();
            applied.clear();
            summaries.clear();
            warnings.clear();
            pending = new_ops;
        } else if follow_ups.is_empty() {
            log::info!("no actionable feedback; stopping after iteration {iteration}");
            break;
        } else {
            pending = follow_ups;
        }
    }

    let selected = if cfg.keep_best {
        best.map(|(_, i)| i).unwrap_or(snapshots.len() - 1)
    } else {
        snapshots.len() - 1
    };
    let chosen = &snapshots[selected];
    let report = trace.iterations[selected].report.clone();
    let result = RefinementResult {
        changed_ids: diff_ir(&ir0, &chosen.ir).all_ids(),
        new_ir: chosen.ir.clone(),
        new_sem: chosen.sem.clone(),
        summaries: chosen.summaries.clone(),
        warnings: chosen.warnings.clone(),
    };
    Ok(PipelineOutcome {
        result,
        report,
        trace,
        ambiguities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockScript};
    use crate::backend::SchemaId;
    use crate::verify::{FeedbackCategory, Severity};
    use std::io::Write;

    fn layout_json() -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        f.write_all(
            br#"{
                "pages": [{"width": 612.0, "height": 792.0}],
                "elements": [
                    {"id": "p1", "kind": "Paragraph",
                     "bbox": {"page_index": 0, "x0": 72.0, "y0": 72.0, "x1": 540.0, "y1": 108.0},
                     "text": "The results is good and very nice."},
                    {"id": "p2", "kind": "Paragraph",
                     "bbox": {"page_index": 0, "x0": 72.0, "y0": 120.0, "x1": 540.0, "y1": 156.0},
                     "text": "Unrelated closing remarks."}
                ]
            }"#,
        )
        .unwrap();
        f
    }

    fn base_script() -> MockScript {
        let mut script = MockScript::new();
        script.set_schema_default(
            crate::backend::StageTag::Mcu,
            SchemaId::SectionFacts,
            r#"{"digest": "", "facts": [], "entities": []}"#,
        );
        script
    }

    #[test]
    fn zero_op_instruction_is_a_single_identity_iteration() {
        let f = layout_json();
        let mut script = base_script();
        script.set_default(crate::backend::StageTag::Ida, r#"{"ops": []}"#);
        let backend = MockBackend::new(script);
        let outcome = run(
            &IngestSource::LayoutJson(f.path().to_path_buf()),
            &Instruction::new("do nothing"),
            &LoopConfig::default(),
            &backend,
        )
        .unwrap();
        assert_eq!(outcome.trace.iterations.len(), 1);
        assert_eq!(outcome.report.scs, 1.0);
        assert_eq!(outcome.report.lfi, 1.0);
        assert_eq!(outcome.report.iar, 1.0);
        assert!(outcome.result.changed_ids.is_empty());
    }

    #[test]
    fn always_failing_script_stops_at_budget_and_keeps_best() {
        let f = layout_json();
        let mut script = base_script();
        // One rewrite whose judge always rejects it.
        script.set_default(
            crate::backend::StageTag::Ida,
            r#"{"ops": [{"kind": "RewriteText", "target": {"element": {"id": "p1"}},
                          "payload": {"goal": "improve wording"}, "rationale": ""}]}"#,
        );
        script.set_default(crate::backend::StageTag::Cra, r#"{"text": "Changed text."}"#);
        script.set_default(
            crate::backend::StageTag::Fcv,
            r#"{"verdict": "no", "reason": "still not right"}"#,
        );
        let backend = MockBackend::new(script);
        let cfg = LoopConfig {
            max_iterations: 3,
            ..LoopConfig::default()
        };
        let outcome = run(
            &IngestSource::LayoutJson(f.path().to_path_buf()),
            &Instruction::new("improve the first paragraph"),
            &cfg,
            &backend,
        )
        .unwrap();
        assert_eq!(outcome.trace.iterations.len(), 3, "runs to the budget");
        let best: f64 = outcome
            .trace
            .iterations
            .iter()
            .map(|it| it.report.score_sum())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.report.score_sum(), best);
    }

    #[test]
    fn budget_one_returns_first_iteration() {
        let f = layout_json();
        let mut script = base_script();
        script.set_default(
            crate::backend::StageTag::Ida,
            r#"{"ops": [{"kind": "RewriteText", "target": {"element": {"id": "p1"}},
                          "payload": {"goal": "improve"}, "rationale": ""}]}"#,
        );
        script.set_default(crate::backend::StageTag::Cra, r#"{"text": "Changed."}"#);
        script.set_default(crate::backend::StageTag::Fcv, r#"{"verdict": "no"}"#);
        let backend = MockBackend::new(script);
        let cfg = LoopConfig {
            max_iterations: 1,
            ..LoopConfig::default()
        };
        let outcome = run(
            &IngestSource::LayoutJson(f.path().to_path_buf()),
            &Instruction::new("improve"),
            &cfg,
            &backend,
        )
        .unwrap();
        assert_eq!(outcome.trace.iterations.len(), 1);
    }

    #[test]
    fn feedback_routing_synthesizes_ops_in_severity_order() {
        let ir = {
            let f = layout_json();
            layout::analyze(
                &IngestSource::LayoutJson(f.path().to_path_buf()),
                None,
                &LayoutParams::default(),
            )
            .unwrap()
        };
        let items = vec![
            FeedbackItem::new(
                FeedbackCategory::SemanticInaccuracy,
                AgentRoute::Cra,
                FeedbackTarget::Element("p2".into()),
                "Paragraph p2 is too verbose",
                Severity::Low,
            ),
            FeedbackItem::new(
                FeedbackCategory::SemanticInaccuracy,
                AgentRoute::Cra,
                FeedbackTarget::Element("p1".into()),
                "Paragraph p1 contradicts the table",
                Severity::High,
            ),
        ];
        let (ops, redecompose) =
            route_feedback(&items, &Instruction::new("orig"), &[], &ir, 10);
        assert!(!redecompose);
        assert_eq!(ops.len(), 2);
        // High severity first, ids assigned sequentially from the base.
        assert_eq!(ops[0].op_id, 10);
        assert_eq!(ops[0].target_element(), Some(&"p1".into()));
        assert_eq!(
            ops[0].goal_text(),
            Some("Paragraph p1 contradicts the table")
        );
        assert_eq!(ops[1].target_element(), Some(&"p2".into()));
    }

    #[test]
    fn analysis_routed_feedback_requests_redecomposition() {
        let ir = {
            let f = layout_json();
            layout::analyze(
                &IngestSource::LayoutJson(f.path().to_path_buf()),
                None,
                &LayoutParams::default(),
            )
            .unwrap()
        };
        let items = vec![FeedbackItem::new(
            FeedbackCategory::PartialAdherence,
            AgentRoute::Ida,
            FeedbackTarget::Op(1),
            "Adherence is low",
            Severity::Medium,
        )];
        let (ops, redecompose) =
            route_feedback(&items, &Instruction::new("orig"), &[], &ir, 5);
        assert!(redecompose);
        assert!(ops.is_empty());
    }
}
