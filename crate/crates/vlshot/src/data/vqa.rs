//! VQA question/annotation loading.
//!
//! The dataset ships as two parallel JSON files: a questions file and an
//! annotations file, joined on `question_id`. Both are loaded eagerly and
//! validated: every question must have exactly one annotation and vice versa.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnswerType, ImageRef};
use crate::{Error, Result};

/// One VQA example after joining the question and annotation records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaExample {
    pub question_id: u64,
    pub image_id: u64,
    pub question: String,
    /// The ten human answers from the annotation record.
    pub answers: Vec<String>,
    /// The majority answer, used as the training label in few-shot episodes.
    pub multiple_choice_answer: String,
    pub answer_type: AnswerType,
    /// Question-type label as assigned by the dataset taxonomy.
    pub question_type: String,
}

impl VqaExample {
    pub fn image_ref(&self) -> ImageRef {
        ImageRef::vqa(self.image_id)
    }
}

#[derive(Deserialize)]
struct QuestionsFile {
    questions: Vec<QuestionRecord>,
}

#[derive(Deserialize)]
struct QuestionRecord {
    question_id: u64,
    image_id: u64,
    question: String,
}

#[derive(Deserialize)]
struct AnnotationsFile {
    annotations: Vec<AnnotationRecord>,
}

#[derive(Deserialize)]
struct AnnotationRecord {
    question_id: u64,
    image_id: u64,
    question_type: String,
    answer_type: AnswerType,
    multiple_choice_answer: String,
    answers: Vec<AnswerRecord>,
}

#[derive(Deserialize)]
struct AnswerRecord {
    answer: String,
}

/// Load and join a questions file with its annotations file.
///
/// Examples come back sorted by `question_id`. Duplicate ids, ids present in
/// only one of the two files, or image-id disagreements between the joined
/// records are all hard errors.
pub fn load_vqa_split(questions_path: &Path, annotations_path: &Path) -> Result<Vec<VqaExample>> {
    let qtext = std::fs::read_to_string(questions_path)
        .map_err(|e| Error::io(questions_path, e))?;
    let qfile: QuestionsFile = serde_json::from_str(&qtext)
        .map_err(|e| Error::malformed("questions file", questions_path, e.to_string()))?;

    let atext = std::fs::read_to_string(annotations_path)
        .map_err(|e| Error::io(annotations_path, e))?;
    let afile: AnnotationsFile = serde_json::from_str(&atext)
        .map_err(|e| Error::malformed("annotations file", annotations_path, e.to_string()))?;

    let mut questions: BTreeMap<u64, QuestionRecord> = BTreeMap::new();
    for q in qfile.questions {
        if questions.insert(q.question_id, q).is_some() {
            let dup = questions.keys().last().copied().unwrap_or(0);
            return Err(Error::malformed(
                "questions file",
                questions_path,
                format!("duplicate question_id {dup}"),
            ));
        }
    }

    let mut examples = Vec::with_capacity(questions.len());
    let mut seen = std::collections::BTreeSet::new();
    for ann in afile.annotations {
        if !seen.insert(ann.question_id) {
            return Err(Error::malformed(
                "annotations file",
                annotations_path,
                format!("duplicate question_id {}", ann.question_id),
            ));
        }
        let q = questions.remove(&ann.question_id).ok_or_else(|| {
            Error::malformed(
                "annotations file",
                annotations_path,
                format!("annotation for unknown question_id {}", ann.question_id),
            )
        })?;
        if q.image_id != ann.image_id {
            return Err(Error::malformed(
                "annotations file",
                annotations_path,
                format!(
                    "question_id {}: image_id {} in questions file but {} in annotations",
                    ann.question_id, q.image_id, ann.image_id
                ),
            ));
        }
        examples.push(VqaExample {
            question_id: ann.question_id,
            image_id: ann.image_id,
            question: q.question,
            answers: ann.answers.into_iter().map(|a| a.answer).collect(),
            multiple_choice_answer: ann.multiple_choice_answer,
            answer_type: ann.answer_type,
            question_type: ann.question_type,
        });
    }
    if let Some((id, _)) = questions.iter().next() {
        return Err(Error::malformed(
            "annotations file",
            annotations_path,
            format!("question_id {id} has no annotation"),
        ));
    }

    examples.sort_by_key(|e| e.question_id);
    Ok(examples)
}
