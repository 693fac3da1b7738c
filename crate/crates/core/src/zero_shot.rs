//! Cold-start zero-shot pseudo-labeling against ID and OOD class prompts.

use crate::config::ClassCatalog;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, ProbVector};

pub const CLASS_PLACEHOLDER: &str = "{class}";

/// OOD suggestions requested when the catalog has none yet.
pub const DEFAULT_OOD_SUGGESTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTexts {
    /// One prompt per class, ID classes first.
    pub prompts: Vec<String>,
    /// Question for an external language model asking for likely non-target classes.
    pub gpt_question: String,
}

/// Question asking an external assistant for `k` plausible non-target classes.
pub fn gpt_question(task: &str, id_names: &[String], k: usize) -> String {
    format!(
        "The task is {task}, focusing on target classes including {}. \
         Please provide {k} other tissue categories that may be present in this task",
        id_names.join(", ")
    )
}

pub fn build_prompt_texts(catalog: &ClassCatalog, template: &str) -> Result<PromptTexts> {
    let placeholders = template.matches(CLASS_PLACEHOLDER).count();
    if placeholders != 1 {
        return Err(Error::Template(format!(
            "template {template:?} has {placeholders} {CLASS_PLACEHOLDER} placeholders, expected 1"
        )));
    }
    let prompts = catalog
        .all_names()
        .map(|name| template.replace(CLASS_PLACEHOLDER, name))
        .collect();
    let k = match catalog.ood_class_names.len() {
        0 => DEFAULT_OOD_SUGGESTIONS,
        n => n,
    };
    Ok(PromptTexts {
        prompts,
        gpt_question: gpt_question(&catalog.task_description, &catalog.id_class_names, k),
    })
}

/// Prompt embeddings `g_c`, the first `id_count` rows belonging to ID classes.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub prompts: Vec<String>,
    pub embeddings: Matrix,
    pub id_count: usize,
}

impl PromptSet {
    pub fn new(prompts: Vec<String>, embeddings: Matrix, id_count: usize) -> Result<Self> {
        if prompts.len() != embeddings.rows() {
            return Err(Error::Shape(format!(
                "{} prompts for {} embeddings",
                prompts.len(),
                embeddings.rows()
            )));
        }
        if id_count < 1 || id_count > prompts.len() {
            return Err(Error::Parameter(format!(
                "id_count {id_count} out of range for {} prompts",
                prompts.len()
            )));
        }
        Ok(Self {
            prompts,
            embeddings,
            id_count,
        })
    }

    /// Builds the set from a prompt-embedding dataset whose rows carry class names,
    /// checking they follow the catalog's order.
    pub fn from_dataset(dataset: &Dataset, catalog: &ClassCatalog) -> Result<Self> {
        let names: Vec<&str> = catalog.all_names().collect();
        let found: Vec<&str> = dataset.records.iter().map(|r| r.sample_id.as_str()).collect();
        if names != found {
            return Err(Error::Shape(format!(
                "prompt rows {found:?} do not match catalog classes {names:?}"
            )));
        }
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            dataset.embeddings.clone(),
            catalog.id_count(),
        )
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Per-sample class probabilities from temperature-scaled cosine similarity.
pub fn zero_shot_probabilities(
    embeddings: &Matrix,
    prompts: &PromptSet,
    tau: f64,
) -> Result<Vec<ProbVector>> {
    if embeddings.cols() != prompts.embeddings.cols() {
        return Err(Error::Shape(format!(
            "image embeddings are {}-d, prompt embeddings {}-d",
            embeddings.cols(),
            prompts.embeddings.cols()
        )));
    }
    embeddings
        .iter_rows()
        .map(|z| {
            let sims = prompts
                .embeddings
                .iter_rows()
                .map(|g| numerics::cosine_similarity(z, g))
                .collect::<Result<Vec<_>>>()?;
            numerics::softmax_temperature(&sims, tau)
        })
        .collect()
}

/// Samples whose pseudo-label (argmax, lowest index on ties) is an ID class.
pub fn select_id_candidates_round1(probs: &[ProbVector], id_count: usize) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.argmax() < id_count)
        .map(|(i, _)| i)
        .collect()
}
