//! Prompt templates and rendering.
//!
//! Templates are plain text with `{NAME}` placeholders. Recognized names are
//! `INSTRUCTION`, `LABELS`, `DEMONSTRATIONS`, `INPUT`, `SOURCE_LANG` and
//! `TARGET_LANG`; anything else is copied through untouched. Substitution is a
//! single left-to-right pass, so placeholder-looking text inside an input or a
//! demonstration is never expanded a second time.

use crate::error::{Error, Result};
use crate::task::{TaskFamily, TaskSpec};
use crate::types::DemoSet;

/// The line every template uses to request a verbalized confidence.
pub const CONFIDENCE_REQUEST: &str = "**Confidence**: <a confidence score between 0 and 1>";

/// Separator between template sections. The last one precedes the query.
pub const SECTION_RULE: &str = "___";

pub const CLASSIFICATION_TEMPLATE: &str = "{INSTRUCTION}

{LABELS}

___

Here are zero or more Input and Label pairs sampled from the classification task.

{DEMONSTRATIONS}

___

Now, Label the following Input among the following

Input: {INPUT}

Also give the Confidence of your given Answer in the following format:

**Confidence**: <a confidence score between 0 and 1>
";

pub const TRANSLATION_TEMPLATE: &str = "{INSTRUCTION}

<source language>: <first sentence>

<target language>: <translated first sentence>

___

{DEMONSTRATIONS}

___

Now, Translate the following {SOURCE_LANG} text into {TARGET_LANG}. Also give the Confidence of your given Answer in the following format:

**Confidence**: <a confidence score between 0 and 1>

{SOURCE_LANG}: {INPUT}

{TARGET_LANG}:
";

pub const FREEFORM_TEMPLATE: &str = "{INSTRUCTION}

___

{DEMONSTRATIONS}

___

Now, Answer the following Question. Think step by step.

Question: {INPUT}

Also give the Confidence of your given Answer in the following format:

**Confidence**: <a confidence score between 0 and 1>
";

/// First line of the back-translation prompt; the simulator keys on it.
pub const BACK_TRANSLATION_HEADER: &str = "You are an expert translator. Translate the following text back into its original language.";

pub const BACK_TRANSLATION_TEMPLATE: &str = "You are an expert translator. Translate the following text back into its original language.
The text is written in {TARGET_LANG}; translate it into {SOURCE_LANG}. Reply with the translation only.

{TARGET_LANG}: {INPUT}

{SOURCE_LANG}:
";

pub const CLASSIFICATION_INPUT_MARKER: &str = "Input:";
pub const CLASSIFICATION_ANSWER_MARKER: &str = "Label:";
pub const FREEFORM_INPUT_MARKER: &str = "Question:";
pub const FREEFORM_ANSWER_MARKER: &str = "Answer:";
pub const RATIONALE_MARKER: &str = "Rationale:";

pub fn default_template(family: TaskFamily) -> &'static str {
    match family {
        TaskFamily::Classification => CLASSIFICATION_TEMPLATE,
        TaskFamily::Translation => TRANSLATION_TEMPLATE,
        TaskFamily::Freeform => FREEFORM_TEMPLATE,
    }
}

/// Line prefixes (input, answer) a demonstration is written with.
pub fn demo_markers(task: &TaskSpec) -> (String, String) {
    match task.task_family {
        TaskFamily::Classification => (
            CLASSIFICATION_INPUT_MARKER.to_string(),
            CLASSIFICATION_ANSWER_MARKER.to_string(),
        ),
        TaskFamily::Translation => (
            format!("{}:", task.source_lang()),
            format!("{}:", task.target_lang()),
        ),
        TaskFamily::Freeform => (
            FREEFORM_INPUT_MARKER.to_string(),
            FREEFORM_ANSWER_MARKER.to_string(),
        ),
    }
}

fn render_demos(task: &TaskSpec, demos: &DemoSet) -> String {
    let (input_marker, answer_marker) = demo_markers(task);
    let blocks: Vec<String> = demos
        .iter()
        .map(|d| {
            let mut block = format!("{input_marker} {}\n", d.input);
            if let Some(r) = &d.rationale {
                match task.task_family {
                    TaskFamily::Translation => {}
                    TaskFamily::Classification => {
                        block.push_str(RATIONALE_MARKER);
                        block.push(' ');
                        block.push_str(r);
                        block.push('\n');
                    }
                    TaskFamily::Freeform => {
                        block.push_str(r);
                        block.push('\n');
                    }
                }
            }
            block.push_str(&answer_marker);
            block.push(' ');
            block.push_str(&d.output);
            block
        })
        .collect();
    blocks.join("\n\n")
}

/// Expands `{NAME}` placeholders in one pass using `lookup`.
pub fn substitute<'a>(template: &str, lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                let is_name = !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_uppercase() || c == '_');
                match lookup(name).filter(|_| is_name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders the family template for one query.
pub fn render_prompt(task: &TaskSpec, demos: &DemoSet, input: &str) -> Result<String> {
    task.validate()?;
    if input.trim().is_empty() {
        return Err(Error::degenerate("prompt input is empty"));
    }
    let template = task
        .template
        .as_deref()
        .unwrap_or_else(|| default_template(task.task_family));
    let demo_block = render_demos(task, demos);
    let labels = task.labels().join("\n");
    Ok(substitute(template, |name| match name {
        "INSTRUCTION" => Some(task.instruction.as_str()),
        "LABELS" => Some(labels.as_str()),
        "DEMONSTRATIONS" => Some(demo_block.as_str()),
        "INPUT" => Some(input),
        "SOURCE_LANG" => Some(task.source_lang()),
        "TARGET_LANG" => Some(task.target_lang()),
        _ => None,
    }))
}

/// Prompt asking the model to translate `translation` back to the source language.
pub fn render_back_translation(task: &TaskSpec, translation: &str) -> Result<String> {
    if task.task_family != TaskFamily::Translation {
        return Err(Error::config("back-translation needs a translation task"));
    }
    task.validate()?;
    if translation.trim().is_empty() {
        return Err(Error::degenerate("translation to back-translate is empty"));
    }
    Ok(substitute(BACK_TRANSLATION_TEMPLATE, |name| match name {
        "INPUT" => Some(translation),
        "SOURCE_LANG" => Some(task.source_lang()),
        "TARGET_LANG" => Some(task.target_lang()),
        _ => None,
    }))
}

pub fn prompt_hash(prompt: &str) -> String {
    crate::util::sha256_hex(prompt.as_bytes())
}
