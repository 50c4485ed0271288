use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{MaskQuery, PromptContext, PromptKind};

pub const MASK_TOKEN: &str = "[M]";

/// Plain-text prompt templates, one per prompt kind.
///
/// Placeholders: `{query}`, `{docs}`, `{n}` and `{response}`. The response
/// section is rendered from the mask query, with `[M]` at masked slots.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: HashMap<PromptKind, String>,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let templates = HashMap::from([
            (
                PromptKind::Pointwise,
                include_str!("../../templates/pointwise.txt").to_string(),
            ),
            (
                PromptKind::LogitsList,
                include_str!("../../templates/logits_list.txt").to_string(),
            ),
            (
                PromptKind::Permutation,
                include_str!("../../templates/permutation.txt").to_string(),
            ),
        ]);
        PromptTemplates { templates }
    }

    /// Reads `pointwise.txt`, `logits_list.txt` and `permutation.txt` from
    /// `dir`; missing files fall back to the builtin text.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut out = Self::builtin();
        for (kind, file) in [
            (PromptKind::Pointwise, "pointwise.txt"),
            (PromptKind::LogitsList, "logits_list.txt"),
            (PromptKind::Permutation, "permutation.txt"),
        ] {
            let path = dir.join(file);
            if path.exists() {
                out.templates.insert(kind, fs::read_to_string(path)?);
            }
        }
        Ok(out)
    }

    pub fn render(&self, ctx: &PromptContext, mq: &MaskQuery) -> String {
        let docs = match ctx.kind {
            PromptKind::Pointwise => ctx.tagged_docs[0].doc.text.clone(),
            _ => ctx
                .tagged_docs
                .iter()
                .map(|t| format!("[{}] {}", t.label, t.doc.text))
                .collect::<Vec<_>>()
                .join("\n"),
        };
        self.templates[&ctx.kind]
            .replace("{query}", &ctx.query.text)
            .replace("{n}", &ctx.len().to_string())
            .replace("{docs}", &docs)
            .replace("{response}", &render_response(ctx, mq))
    }
}

fn render_response(ctx: &PromptContext, mq: &MaskQuery) -> String {
    match ctx.kind {
        PromptKind::Pointwise => MASK_TOKEN.to_string(),
        PromptKind::LogitsList => (0..ctx.len())
            .map(|i| format!("Doc {}: {MASK_TOKEN}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"),
        PromptKind::Permutation => {
            let mut slots = vec![MASK_TOKEN.to_string(); ctx.len()];
            for (pos, label) in &mq.filled_slots {
                if let Some(slot) = slots.get_mut(*pos) {
                    *slot = format!("[{label}]");
                }
            }
            slots.join(" > ")
        }
    }
}
