use std::collections::HashSet;

use rust_stemmers::{Algorithm, Stemmer};

const BUNDLED_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextKind {
    /// Short names; left untouched.
    ActorName,
    GoalText,
}

/// Stopword removal and stemming applied to goal texts before embedding.
pub struct Preprocessor {
    stopwords: HashSet<String>,
    stemmer: Stemmer,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::with_stopwords(parse_stopwords(BUNDLED_STOPWORDS))
    }
}

impl std::fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preprocessor")
            .field("stopwords", &self.stopwords.len())
            .finish()
    }
}

/// One word per line; `#` starts a comment.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

impl Preprocessor {
    pub fn with_stopwords(stopwords: HashSet<String>) -> Self {
        Self {
            stopwords,
            stemmer: Stemmer::create(Algorithm::English),
        }
    }

    pub fn preprocess(&self, text: &str, kind: TextKind) -> String {
        match kind {
            TextKind::ActorName => text.to_string(),
            TextKind::GoalText => self.goal_tokens(text).join(" "),
        }
    }

    fn goal_tokens(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .filter_map(|t| self.normalise(t))
            .collect()
    }

    /// Stems until a fixed point so that preprocessing is idempotent;
    /// tokens that are (or stem into) stopwords are dropped.
    fn normalise(&self, token: &str) -> Option<String> {
        let mut current = token.to_string();
        loop {
            if self.stopwords.contains(&current) {
                return None;
            }
            let next = self.stemmer.stem(&current);
            if next.is_empty() {
                return None;
            }
            if next == current {
                return Some(current);
            }
            current = next.into_owned();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_names_are_unchanged() {
        let p = Preprocessor::default();
        assert_eq!(
            p.preprocess("Municipal Operators", TextKind::ActorName),
            "Municipal Operators"
        );
    }

    #[test]
    fn empty_goal() {
        assert_eq!(Preprocessor::default().preprocess("", TextKind::GoalText), "");
    }

    #[test]
    fn golden_goal_text() {
        // Frozen from one run of the bundled stemmer on ["user", "logs", "quickly"].
        let p = Preprocessor::default();
        assert_eq!(p.preprocess("The user logs in quickly", TextKind::GoalText), "user log quick");
    }

    #[test]
    fn punctuation_and_case() {
        let p = Preprocessor::default();
        assert_eq!(
            p.preprocess("Register a NEW hospital, with essential details!", TextKind::GoalText),
            "regist new hospit essenti detail"
        );
    }

    #[test]
    fn stopword_file_comments() {
        let s = parse_stopwords("# header\nthe\n  And  # trailing\n\n");
        assert_eq!(s.len(), 2);
        assert!(s.contains("and"));
    }
}
