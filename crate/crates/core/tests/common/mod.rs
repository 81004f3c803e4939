#![allow(dead_code)]

use std::path::PathBuf;
use std::str::FromStr;

use cofix_core::agents::prompts::{shipped_prompts_dir, PromptSet};
use cofix_core::evalkit::{self, CorpusManifest};
use cofix_core::gateway::{Gateway, PricingConfig, Script, ScriptToolCall, ScriptTurn, ScriptedBackend};
use cofix_core::model::{AgentKind, IssueTask};
use cofix_core::orchestrator::{Resolver, StageConfig};
use cofix_core::workspace::SandboxConfig;
use rust_decimal::Decimal;
use serde_json::json;

pub mod oracle;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus() -> CorpusManifest {
    evalkit::load_corpus(&evalkit::shipped_corpus_dir()).expect("shipped corpus loads")
}

pub fn happy_scripts() -> PathBuf {
    repo_root().join("fixtures/scripts/happy")
}

pub fn prompts() -> PromptSet {
    PromptSet::load(&shipped_prompts_dir()).expect("shipped prompts load")
}

pub fn sandbox() -> SandboxConfig {
    SandboxConfig::default()
}

pub fn pricing() -> PricingConfig {
    PricingConfig::new(Decimal::from_str("0.27").unwrap(), Decimal::from_str("1.10").unwrap()).unwrap()
}

pub fn happy_gateway() -> Gateway {
    Gateway::new(Box::new(ScriptedBackend::from_dir(&happy_scripts()).unwrap()), pricing())
}

pub fn script_gateway(toml: &str) -> Gateway {
    Gateway::new(Box::new(ScriptedBackend::single(Script::parse(toml).unwrap())), pricing())
}

/// Builds scripts turn by turn.
#[derive(Default)]
pub struct ScriptBuilder {
    script: Script,
}

impl ScriptBuilder {
    pub fn new(task: &str) -> Self {
        ScriptBuilder {
            script: Script {
                task: Some(task.into()),
                turns: Vec::new(),
            },
        }
    }

    pub fn turn(mut self, role: AgentKind, content: &str, calls: Vec<(&str, serde_json::Value)>) -> Self {
        self.script.turns.push(ScriptTurn {
            role,
            content: content.into(),
            tool_calls: calls
                .into_iter()
                .map(|(name, arguments)| ScriptToolCall {
                    id: None,
                    name: name.into(),
                    arguments,
                })
                .collect(),
            prompt_tokens: None,
            completion_tokens: None,
        });
        self
    }

    pub fn say(self, role: AgentKind, content: &str) -> Self {
        self.turn(role, content, Vec::new())
    }

    pub fn create(self, role: AgentKind, path: &str, content: &str) -> Self {
        self.turn(role, "Writing a file.", vec![create_call(path, content)])
    }

    pub fn replace(self, role: AgentKind, path: &str, old: &str, new: &str) -> Self {
        self.turn(role, "Editing.", vec![replace_call(path, old, new)])
    }

    pub fn submit(self, role: AgentKind) -> Self {
        self.turn(role, "Done.", vec![("submitter", json!({}))])
    }

    pub fn build(self) -> Script {
        self.script
    }

    pub fn gateway(self) -> Gateway {
        Gateway::new(Box::new(ScriptedBackend::single(self.script)), pricing())
    }
}

pub fn create_call(path: &str, content: &str) -> (&'static str, serde_json::Value) {
    ("editor", json!({"subcommand": "create", "path": path, "content": content}))
}

pub fn replace_call(path: &str, old: &str, new: &str) -> (&'static str, serde_json::Value) {
    ("editor", json!({"subcommand": "str_replace", "path": path, "old_str": old, "new_str": new}))
}

/// A fixture-style Python test whose `main` holds `body` (4-space indented lines).
pub fn py_test(body: &str) -> String {
    let body: String = body.lines().map(|l| format!("    {l}\n")).collect();
    format!(
        "import sys\n\nsys.path.insert(0, \".\")\n\n\ndef main():\n{body}\n\nif __name__ == \"__main__\":\n    try:\n        main()\n    except Exception as exc:\n        print(f\"FAIL: {{type(exc).__name__}}: {{exc}}\")\n        sys.exit(1)\n    print(\"ok\")\n"
    )
}

pub fn task(id: &str) -> IssueTask {
    corpus().get(id).unwrap().task.clone()
}

pub fn resolver<'a>(gateway: &'a Gateway, prompts: &'a PromptSet, sandbox: &'a SandboxConfig, config: StageConfig) -> Resolver<'a> {
    Resolver::new(gateway, prompts, sandbox, config)
}
