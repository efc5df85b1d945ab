//! Byte-level tokenizer and the instruction templates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token ids 0..=255 are raw bytes.
pub const BYTE_VOCAB: usize = 256;
/// End-of-text marker appended to every target.
pub const EOS: usize = 256;
pub const VOCAB: usize = BYTE_VOCAB + 1;

pub const CAPTION_PROMPT: &str = "Generate the caption in English:";
pub const DETAILED_CAPTION_PROMPT: &str = "Generate the detailed caption in English:";
/// Joins a question and its answer in the VQA template.
pub const ANSWER_MARKER: &str = " Answer: ";

pub fn encode(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Decodes byte tokens, stopping at the first [`EOS`]. Bytes that do not
/// form valid UTF-8 are replaced.
pub fn decode(tokens: &[usize]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .take_while(|&&t| t != EOS)
        .filter_map(|&t| u8::try_from(t).ok())
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Caption,
    DetailedCaption,
    Vqa,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Caption => "caption",
            Task::DetailedCaption => "detailed_caption",
            Task::Vqa => "vqa",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caption" => Ok(Task::Caption),
            "detailed_caption" => Ok(Task::DetailedCaption),
            "vqa" => Ok(Task::Vqa),
            other => Err(Error::Validation(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub answer: String,
}

impl InstructionSample {
    pub fn caption(answer: impl Into<String>) -> Self {
        Self {
            task: Task::Caption,
            question: None,
            answer: answer.into(),
        }
    }

    pub fn vqa(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            task: Task::Vqa,
            question: Some(question.into()),
            answer: answer.into(),
        }
    }
}

/// Renders `(prompt, target)`. The target is the answer text only, so
/// `prompt + target` is the full instruction. For VQA that is
/// `"{question} Answer: {answer}"`; any trailing period belongs to the answer.
pub fn format_instruction(sample: &InstructionSample) -> Result<(String, String)> {
    let prompt = match sample.task {
        Task::Caption => CAPTION_PROMPT.to_string(),
        Task::DetailedCaption => DETAILED_CAPTION_PROMPT.to_string(),
        Task::Vqa => {
            let q = sample
                .question
                .as_deref()
                .ok_or_else(|| Error::Validation("vqa sample needs a question".into()))?;
            format!("{q}{ANSWER_MARKER}")
        }
    };
    Ok((prompt, sample.answer.clone()))
}

/// Splits a rendered VQA instruction back into question and answer at the
/// last answer marker.
pub fn parse_vqa(rendered: &str) -> Option<(String, String)> {
    let at = rendered.rfind(ANSWER_MARKER)?;
    Some((
        rendered[..at].to_string(),
        rendered[at + ANSWER_MARKER.len()..].to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip() {
        let s = "row 2, col 3: Q";
        let t = encode(s);
        assert_eq!(t.len(), s.len());
        assert_eq!(decode(&t), s);
        let mut with_eos = t.clone();
        with_eos.extend([EOS, 65]);
        assert_eq!(decode(&with_eos), s);
    }

    #[test]
    fn vqa_without_question_is_rejected() {
        let s = InstructionSample {
            task: Task::Vqa,
            question: None,
            answer: "x".into(),
        };
        assert!(format_instruction(&s).is_err());
    }

    #[test]
    fn task_names_round_trip() {
        for t in [Task::Caption, Task::DetailedCaption, Task::Vqa] {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert!("ocr".parse::<Task>().is_err());
    }
}
