//! Prompt templates, one text file per role.
//!
//! A template may start with a `# prompt-version: N` line; placeholders are
//! written `{{name}}`. The built-in set is compiled in and any role can be
//! overridden from a directory holding `<role>.txt` files.

use std::collections::HashMap;
use std::path::Path;

use super::RoleTag;

const VERSION_PREFIX: &str = "# prompt-version:";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: u32,
    pub body: String,
}

impl PromptTemplate {
    pub fn parse(raw: &str) -> Self {
        let mut version = 0;
        let mut body = raw;
        if let Some(first) = raw.lines().next() {
            if let Some(v) = first.trim().strip_prefix(VERSION_PREFIX) {
                version = v.trim().parse().unwrap_or(0);
                body = raw[first.len()..].trim_start_matches(['\r', '\n']);
            }
        }
        Self {
            version,
            body: body.to_string(),
        }
    }

    /// Substitutes `{{name}}` for every pair in `vars`.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: HashMap<RoleTag, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let raw = [
            (RoleTag::Match, include_str!("../../prompts/match.txt")),
            (RoleTag::Generate, include_str!("../../prompts/generate.txt")),
            (RoleTag::Extract, include_str!("../../prompts/extract.txt")),
            (RoleTag::Critic, include_str!("../../prompts/critic.txt")),
            (RoleTag::Summarize, include_str!("../../prompts/summarize.txt")),
            (RoleTag::Merge, include_str!("../../prompts/merge.txt")),
            (RoleTag::Review, include_str!("../../prompts/review.txt")),
        ];
        Self {
            templates: raw.into_iter().map(|(r, t)| (r, PromptTemplate::parse(t))).collect(),
        }
    }

    /// Built-in templates with any `<role>.txt` found in `dir` taking over.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for role in RoleTag::ALL {
            let path = dir.join(format!("{}.txt", role.as_str()));
            if path.exists() {
                let raw = std::fs::read_to_string(&path)?;
                set.templates.insert(role, PromptTemplate::parse(&raw));
            }
        }
        Ok(set)
    }

    pub fn get(&self, role: RoleTag) -> &PromptTemplate {
        &self.templates[&role]
    }

    pub fn render(&self, role: RoleTag, vars: &[(&str, &str)]) -> String {
        self.get(role).render(vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_header_is_stripped() {
        let t = PromptTemplate::parse("# prompt-version: 3\nHello {{who}}");
        assert_eq!(t.version, 3);
        assert_eq!(t.render(&[("who", "agent")]), "Hello agent");
    }

    #[test]
    fn builtins_cover_every_role() {
        let set = PromptSet::builtin();
        for role in RoleTag::ALL {
            assert!(set.get(role).version >= 1, "{role:?}");
        }
        assert!(set.get(RoleTag::Generate).body.contains("{{window}}"));
        assert!(set.get(RoleTag::Critic).body.contains("{{batch}}"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("generate.txt"), "custom {{window}}").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.render(RoleTag::Generate, &[("window", "w")]), "custom w");
        assert_eq!(set.get(RoleTag::Match), PromptSet::builtin().get(RoleTag::Match));
    }
}
