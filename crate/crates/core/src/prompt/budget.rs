use super::{PromptComponentKind, PromptError, RenderedPrompt};

/// Shrink a prompt to at most `max_chars` characters.
///
/// Database list items are dropped first, then whole few-shot examples,
/// both from the end of their lists. System, task, and user text is never
/// touched; if it alone exceeds the budget the prompt is infeasible.
pub fn enforce_budget(prompt: &RenderedPrompt, max_chars: usize) -> Result<RenderedPrompt, PromptError> {
    if max_chars > 0 && prompt.char_count <= max_chars {
        return Ok(prompt.clone());
    }
    let min = prompt.min_char_count();
    if max_chars == 0 || min > max_chars {
        return Err(PromptError::BudgetInfeasible { required: min, budget: max_chars });
    }

    let mut out = prompt.clone();
    let mut total = out.char_count;
    for kind in [PromptComponentKind::RelevantDbInfo, PromptComponentKind::FewShotExamples] {
        let Some(section) = out.sections.iter_mut().find(|s| s.kind == kind) else {
            continue;
        };
        while total > max_chars {
            let Some(item) = section.items.pop() else { break };
            total -= item.chars().count() + 1;
        }
        section.rerender();
        if total <= max_chars {
            break;
        }
    }
    out.truncated = true;
    out.refresh();
    debug_assert_eq!(out.char_count, total);
    Ok(out)
}
