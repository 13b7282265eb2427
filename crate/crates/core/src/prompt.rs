//! Prompt assembly for retrieval-augmented question answering and
//! molecule generation. No language model is called here; the output is
//! the prompt text.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    MoleculeQa,
    ProteinQa,
    MoleculeGeneration,
}

impl TemplateKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "molecule-qa" => Ok(TemplateKind::MoleculeQa),
            "protein-qa" => Ok(TemplateKind::ProteinQa),
            "molecule-generation" => Ok(TemplateKind::MoleculeGeneration),
            _ => Err(Error::Config(alloc::format!("unknown template `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievedLists {
    pub proteins: Vec<String>,
    pub diseases: Vec<String>,
    pub go_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBundle {
    pub kind: TemplateKind,
    /// SMILES for molecules, amino-acid sequence for proteins.
    #[serde(default)]
    pub structure: Option<String>,
    #[serde(default)]
    pub lists: RetrievedLists,
    /// Question for the QA templates, text guidance for generation.
    #[serde(default)]
    pub text: Option<String>,
}

fn bound<'a>(v: &'a Option<String>, name: &'static str) -> Result<&'a str> {
    match v.as_deref() {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::UnboundPlaceholder(name)),
    }
}

fn listing(items: &[String], indent: &str, name: &'static str) -> Result<String> {
    if items.is_empty() || items.iter().any(|s| s.is_empty()) {
        return Err(Error::UnboundPlaceholder(name));
    }
    let sep = alloc::format!("\n{indent}");
    Ok(items.join(&sep))
}

pub fn assemble_prompt(bundle: &PromptBundle) -> Result<String> {
    let l = &bundle.lists;
    match bundle.kind {
        TemplateKind::MoleculeQa => {
            let smiles = bound(&bundle.structure, "smiles")?;
            let proteins = listing(&l.proteins, "   ", "protein_names")?;
            let diseases = listing(&l.diseases, "   ", "disease_names")?;
            let question = bound(&bundle.text, "input_question")?;
            Ok(alloc::format!(
                "Drug molecule structure: [START_I_SMILES] {smiles} [END_I_SMILES]\n\
                 \n\
                 Target proteins:\n   {proteins}\n\
                 \n\
                 Associated diseases:\n   {diseases}\n\
                 \n\
                 Consider the associated diseases and the proteins this molecule targets,  {question}\n"
            ))
        }
        TemplateKind::ProteinQa => {
            let sequence = bound(&bundle.structure, "sequence")?;
            let terms = listing(&l.go_terms, "   ", "go_terms")?;
            let proteins = listing(&l.proteins, "   ", "protein_names")?;
            let question = bound(&bundle.text, "input_question")?;
            Ok(alloc::format!(
                "Protein sequence: {sequence}\n\
                 \n\
                 Associated biological functions:\n   {terms}\n\
                 \n\
                 Interacting proteins:\n   {proteins}\n\
                 \n\
                 Consider the associated functions and the proteins this protein interacts with,  {question}\n"
            ))
        }
        TemplateKind::MoleculeGeneration => {
            let proteins = listing(&l.proteins, "    ", "protein_names")?;
            let guidance = bound(&bundle.text, "text_guidance")?;
            Ok(alloc::format!(
                "The drug may be targeting the proteins:\n\
                 \n    {proteins}\n\
                 \n\
                 {guidance}\n\
                 \n\
                 Generate the most possible SMILES structure of this drug.\n"
            ))
        }
    }
}
