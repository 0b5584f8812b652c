//! Prompt templates. Defaults ship as text files next to the crate and can
//! be overridden per run.

use std::path::Path;

use super::{ChatMessage, GroupItem};

pub const DEFAULT_CODER: &str = include_str!("../../prompts/coder.txt");
pub const DEFAULT_MODERATOR: &str = include_str!("../../prompts/moderator.txt");
pub const DEFAULT_GROUPER: &str = include_str!("../../prompts/grouper.txt");
pub const DEFAULT_REPAIR: &str = include_str!("../../prompts/repair.txt");
pub const DEFAULT_LABELER: &str = include_str!("../../prompts/labeler.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub coder: String,
    pub moderator: String,
    pub grouper: String,
    pub repair: String,
    pub labeler: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            coder: DEFAULT_CODER.into(),
            moderator: DEFAULT_MODERATOR.into(),
            grouper: DEFAULT_GROUPER.into(),
            repair: DEFAULT_REPAIR.into(),
            labeler: DEFAULT_LABELER.into(),
        }
    }
}

impl PromptTemplates {
    /// Load overrides from `dir`; any of `coder.txt`, `moderator.txt`,
    /// `grouper.txt`, `repair.txt`, `labeler.txt` that exists replaces the
    /// default.
    pub fn load_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (file, slot) in [
            ("coder.txt", &mut t.coder),
            ("moderator.txt", &mut t.moderator),
            ("grouper.txt", &mut t.grouper),
            ("repair.txt", &mut t.repair),
            ("labeler.txt", &mut t.labeler),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }

    pub fn coder_messages(&self, utterance: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::user(self.coder.replace("{utterance}", utterance))]
    }

    pub fn moderator_messages(&self, utterance: &str, candidates: &[String]) -> Vec<ChatMessage> {
        let list = candidates.iter().enumerate().map(|(i, c)| format!("{}. {c}", i + 1)).collect::<Vec<_>>().join("\n");
        vec![ChatMessage::user(self.moderator.replace("{utterance}", utterance).replace("{candidates}", &list))]
    }

    pub fn grouper_messages(&self, formatted_items: &[String]) -> Vec<ChatMessage> {
        vec![ChatMessage::user(self.grouper.replace("{items}", &formatted_items.join("\n")))]
    }

    /// The original grouping exchange followed by the repair instruction.
    pub fn repair_messages(&self, formatted_items: &[String], bad_answer: &str) -> Vec<ChatMessage> {
        let mut m = self.grouper_messages(formatted_items);
        m.push(ChatMessage::assistant(bad_answer));
        m.push(ChatMessage::user(self.repair.clone()));
        m
    }

    pub fn labeler_messages(&self, codes: &[String], snippets: &[String]) -> Vec<ChatMessage> {
        let snippet_block = if snippets.is_empty() {
            String::new()
        } else {
            format!("\nExample utterances:\n{}", snippets.join("\n"))
        };
        vec![ChatMessage::user(self.labeler.replace("{codes}", &codes.join("\n")).replace("{snippets}", &snippet_block))]
    }
}

pub fn items_of(pairs: &[(String, String)]) -> Vec<GroupItem> {
    pairs.iter().map(|(c, t)| GroupItem { code: c.clone(), text: t.clone() }).collect()
}
