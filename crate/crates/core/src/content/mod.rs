//! Scenario definitions, prompt templates, few-shot exemplars and the
//! prompt-policy linter.
//!
//! Content lives in TOML documents under `content/` (see
//! `content/README.md` for the schema). The bundled copy is compiled in;
//! [`ContentBundle::load_dir`] reads an edited copy from disk instead.

mod lint;
mod seeds;
mod template;

pub use lint::{lint_prompt, BannedTerms, LintReport, LintViolation, Linter};
pub use seeds::{builtin_scenario_seed, ScenarioBrief, ScenarioSeed};
pub use template::{
    render_prompt, substitute, Exemplar, ExemplarBank, ExemplarKey, PromptContext, PromptTemplate,
    PromptText, TaskId, PLACEHOLDERS,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::ScenarioKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContentError {
    #[error("missing value for placeholder `{name}`")]
    MissingPlaceholder { name: String },
    #[error("template `{task}` uses unknown placeholder `{name}`")]
    UnknownPlaceholder { task: TaskId, name: String },
    #[error("no template for task `{0}`")]
    MissingTemplate(TaskId),
    #[error("cannot parse {document}: {message}")]
    Parse { document: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

macro_rules! bundled {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!(concat!("../../content/", $path)))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled![
    "kinds.toml",
    "brief.toml",
    "templates/scenario.toml",
    "templates/options.toml",
    "templates/response.toml",
    "templates/blunt_trigger.toml",
    "templates/feedback.toml",
    "templates/continue_reply.toml",
    "exemplars/scenario.any.toml",
    "exemplars/response.free.toml",
    "exemplars/options.indirect_speech_act.toml",
    "exemplars/options.figurative_expression.toml",
    "exemplars/options.emoji_variable.toml",
    "exemplars/options.misperceived_blunt.toml",
    "exemplars/response.indirect_speech_act.toml",
    "exemplars/response.figurative_expression.toml",
    "exemplars/response.emoji_variable.toml",
    "exemplars/response.misperceived_blunt.toml",
    "exemplars/blunt_trigger.misperceived_blunt.toml",
    "exemplars/feedback.indirect_speech_act.toml",
    "exemplars/feedback.figurative_expression.toml",
    "exemplars/feedback.emoji_variable.toml",
    "exemplars/feedback.misperceived_blunt.toml",
    "exemplars/continue_reply.indirect_speech_act.toml",
    "exemplars/continue_reply.figurative_expression.toml",
    "exemplars/continue_reply.emoji_variable.toml",
    "exemplars/continue_reply.misperceived_blunt.toml",
];

#[derive(Deserialize)]
struct ExemplarDoc {
    task: TaskId,
    kind: Option<ScenarioKind>,
    #[serde(rename = "sample", default)]
    samples: Vec<Exemplar>,
}

#[derive(Deserialize)]
struct KindsDoc {
    free: String,
    guidance: BTreeMap<ScenarioKind, String>,
}

#[derive(Deserialize)]
struct BriefDoc {
    instruction: String,
    character_names: Vec<String>,
}

/// Every (task, kind) pair a full session can render.
pub fn session_task_table() -> Vec<(TaskId, Option<ScenarioKind>)> {
    let mut table = vec![(TaskId::Scenario, None), (TaskId::Response, None)];
    for kind in ScenarioKind::ALL {
        table.push((TaskId::Options, Some(kind)));
        table.push((TaskId::Response, Some(kind)));
        table.push((TaskId::Feedback, Some(kind)));
        table.push((TaskId::ContinueReply, Some(kind)));
    }
    table.push((TaskId::BluntTrigger, Some(ScenarioKind::MisperceivedBlunt)));
    table
}

/// Immutable prompt content loaded at startup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentBundle {
    templates: BTreeMap<TaskId, PromptTemplate>,
    exemplars: ExemplarBank,
    free_guidance: String,
    guidance: BTreeMap<ScenarioKind, String>,
    instruction: String,
    character_names: Vec<String>,
}

impl ContentBundle {
    pub fn builtin() -> Self {
        Self::from_documents(BUNDLED.iter().map(|(p, t)| (p.to_string(), t.to_string())))
            .expect("bundled content is well-formed")
    }

    /// Loads content from a directory laid out like the bundled `content/`.
    pub fn load_dir(dir: &Path) -> Result<Self, ContentError> {
        let mut docs = Vec::new();
        for name in ["kinds.toml", "brief.toml"] {
            docs.push((name.to_string(), read(&dir.join(name))?));
        }
        for sub in ["templates", "exemplars"] {
            let path = dir.join(sub);
            let entries = std::fs::read_dir(&path).map_err(|e| ContentError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let mut files: Vec<_> = entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            for file in files {
                let name = format!(
                    "{sub}/{}",
                    file.file_name().unwrap_or_default().to_string_lossy()
                );
                docs.push((name, read(&file)?));
            }
        }
        Self::from_documents(docs)
    }

    fn from_documents(
        docs: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ContentError> {
        fn parse<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<T, ContentError> {
            toml::from_str(text).map_err(|e| ContentError::Parse {
                document: name.to_string(),
                message: e.to_string(),
            })
        }

        let mut templates = BTreeMap::new();
        let mut exemplars = ExemplarBank::default();
        let mut kinds: Option<KindsDoc> = None;
        let mut brief: Option<BriefDoc> = None;

        for (name, text) in docs {
            if name == "kinds.toml" {
                kinds = Some(parse(&name, &text)?);
            } else if name == "brief.toml" {
                brief = Some(parse(&name, &text)?);
            } else if name.starts_with("templates/") {
                let template: PromptTemplate = parse(&name, &text)?;
                template.check_placeholders()?;
                templates.insert(template.task_id, template);
            } else if name.starts_with("exemplars/") {
                let doc: ExemplarDoc = parse(&name, &text)?;
                exemplars.insert(doc.task, doc.kind, doc.samples);
            }
        }

        let missing = |document: &str| ContentError::Parse {
            document: document.to_string(),
            message: "document not found".to_string(),
        };
        let kinds = kinds.ok_or_else(|| missing("kinds.toml"))?;
        let brief = brief.ok_or_else(|| missing("brief.toml"))?;
        if let Some(task) = TaskId::ALL.into_iter().find(|t| !templates.contains_key(t)) {
            return Err(ContentError::MissingTemplate(task));
        }
        if brief.character_names.is_empty() {
            return Err(ContentError::Parse {
                document: "brief.toml".to_string(),
                message: "character_names is empty".to_string(),
            });
        }
        if let Some(kind) = ScenarioKind::ALL.into_iter().find(|k| !kinds.guidance.contains_key(k)) {
            return Err(ContentError::Parse {
                document: "kinds.toml".to_string(),
                message: format!("no guidance for {kind}"),
            });
        }

        Ok(Self {
            templates,
            exemplars,
            free_guidance: kinds.free.trim().to_string(),
            guidance: kinds
                .guidance
                .into_iter()
                .map(|(k, v)| (k, v.trim().to_string()))
                .collect(),
            instruction: brief.instruction,
            character_names: brief.character_names,
        })
    }

    pub fn template(&self, task: TaskId) -> &PromptTemplate {
        &self.templates[&task]
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    pub fn exemplars(&self) -> &ExemplarBank {
        &self.exemplars
    }

    pub fn render(&self, task: TaskId, context: &PromptContext) -> Result<PromptText, ContentError> {
        render_prompt(self.template(task), context, &self.exemplars)
    }

    /// Text substituted for the `{kind}` placeholder.
    pub fn kind_guidance(&self, kind: Option<ScenarioKind>) -> &str {
        match kind {
            Some(k) => &self.guidance[&k],
            None => &self.free_guidance,
        }
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn character_name(&self, seed: u64) -> &str {
        &self.character_names[(seed % self.character_names.len() as u64) as usize]
    }

    /// (task, kind) pairs from `table` that have no exemplar.
    pub fn coverage_gaps(
        &self,
        table: &[(TaskId, Option<ScenarioKind>)],
    ) -> Vec<(TaskId, Option<ScenarioKind>)> {
        table
            .iter()
            .copied()
            .filter(|(task, kind)| self.exemplars.get(*task, *kind).is_empty())
            .collect()
    }

    /// Lints every template, guidance text and exemplar as shipped.
    pub fn lint_all(&self, linter: &Linter) -> Vec<(String, LintViolation)> {
        let mut out = Vec::new();
        let mut check = |origin: String, text: &str| {
            for v in linter.lint(text).violations {
                out.push((origin.clone(), v));
            }
        };
        for t in self.templates.values() {
            check(format!("template {}", t.task_id), &t.template_text);
        }
        check("guidance free".to_string(), &self.free_guidance);
        for (k, g) in &self.guidance {
            check(format!("guidance {k}"), g);
        }
        check("instruction".to_string(), &self.instruction);
        for (key, samples) in &self.exemplars.entries {
            for s in samples {
                let origin = format!("exemplar {}/{:?}", key.task, key.kind);
                check(origin.clone(), &s.input);
                check(origin, &s.sample_output);
            }
        }
        out
    }
}

impl Default for ContentBundle {
    fn default() -> Self {
        Self::builtin()
    }
}

fn read(path: &Path) -> Result<String, ContentError> {
    std::fs::read_to_string(path).map_err(|e| ContentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
