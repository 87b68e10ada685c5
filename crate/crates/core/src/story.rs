//! Story and scene-description generation.
//!
//! The story prompt asks the text backend for a short children's story about
//! two subjects. Each sentence of that story is then sent back, together with
//! the whole story, to obtain a one-line picture description that drives the
//! image backend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Gateway, TextParams};
use crate::parallel::par_map;

/// Words ending in a period that never close a sentence.
const ABBREVIATIONS: &[&str] = &["Mr", "Mrs", "Ms", "Dr", "St"];

/// Characters that may trail a terminator and still belong to its sentence.
const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];

pub const DEFAULT_STYLE_TERMS: [&str; 4] = ["extremely detailed", "textured", "high detail", "4k"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "prefix")]
pub enum GenrePreset {
    #[default]
    Children,
    /// Replaces "children's story" in the prompt, e.g. `horror story`.
    Custom(String),
}

impl GenrePreset {
    /// Parses `children` or `custom:<prefix>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "children" | "" => Ok(Self::Children),
            other => match other.strip_prefix("custom:") {
                Some(prefix) if !prefix.trim().is_empty() => Ok(Self::Custom(prefix.trim().to_string())),
                _ => Err(Error::InvalidRequest(format!(
                    "unknown genre preset `{other}` (expected `children` or `custom:<prefix>`)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRequest {
    pub subject_x: String,
    pub subject_y: String,
    pub seed: u64,
    pub genre_preset: GenrePreset,
}

impl StoryRequest {
    /// Normalizes subjects to lowercase with single spaces and validates them.
    pub fn new(subject_x: &str, subject_y: &str, seed: u64, genre_preset: GenrePreset) -> Result<Self> {
        let req = Self {
            subject_x: normalize_subject(subject_x),
            subject_y: normalize_subject(subject_y),
            seed,
            genre_preset,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, subject) in [("x", &self.subject_x), ("y", &self.subject_y)] {
            if subject.trim().is_empty() {
                return Err(Error::InvalidRequest(format!("subject {name} is empty")));
            }
            if *subject != normalize_subject(subject) {
                return Err(Error::InvalidRequest(format!(
                    "subject {name} `{subject}` must be a lowercase noun phrase"
                )));
            }
        }
        if let GenrePreset::Custom(prefix) = &self.genre_preset {
            if prefix.trim().is_empty() {
                return Err(Error::InvalidRequest("custom preset prefix is empty".into()));
            }
        }
        Ok(())
    }
}

fn normalize_subject(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Byte offsets `(start, end)` into the story text.
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub full_text: String,
    pub sentences: Vec<Sentence>,
    pub prompt_used: String,
}

impl Story {
    /// Builds a story from a raw completion: trims it, drops a leading title
    /// line ending in `:` and segments the rest.
    pub fn from_completion(prompt: &str, completion: &str) -> Result<Self> {
        let full_text = strip_title(completion.trim()).to_string();
        if full_text.is_empty() {
            return Err(Error::EmptyStory);
        }
        let sentences = segment_sentences(&full_text);
        if sentences.is_empty() {
            return Err(Error::EmptyStory);
        }
        Ok(Self {
            full_text,
            sentences,
            prompt_used: prompt.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub sentence_index: usize,
    pub description_text: String,
    pub augmented_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleConfig {
    pub terms: Vec<String>,
    pub theme: Option<String>,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            terms: DEFAULT_STYLE_TERMS.iter().map(|s| s.to_string()).collect(),
            theme: None,
        }
    }
}

pub fn build_story_prompt(req: &StoryRequest) -> Result<String> {
    req.validate()?;
    let kind = match &req.genre_preset {
        GenrePreset::Children => "children's story",
        GenrePreset::Custom(prefix) => prefix.as_str(),
    };
    Ok(format!(
        "The following is a {kind} about a {} and a {}:",
        req.subject_x, req.subject_y
    ))
}

pub fn build_description_prompt(story: &Story, sentence: &Sentence) -> Result<String> {
    match story.sentences.get(sentence.index) {
        Some(own) if own == sentence => {}
        _ => {
            return Err(Error::Contract(format!(
                "sentence {} `{}` does not belong to the story",
                sentence.index, sentence.text
            )))
        }
    }
    Ok(format!(
        "{}\nThe story has pictures accompanying it. From the sentence {}, here is what the picture looks like:",
        story.full_text, sentence.text
    ))
}

pub fn augment_image_prompt(description: &str, style: &StyleConfig) -> String {
    let suffix: Vec<&str> = style
        .terms
        .iter()
        .map(String::as_str)
        .chain(style.theme.as_deref())
        .filter(|t| !t.trim().is_empty())
        .collect();
    if suffix.is_empty() {
        description.to_string()
    } else {
        format!("{description}, {}", suffix.join(", "))
    }
}

/// Removes a first line that ends in `:` when more text follows it.
fn strip_title(text: &str) -> &str {
    match text.split_once('\n') {
        Some((first, rest)) if first.trim_end().ends_with(':') && !rest.trim().is_empty() => rest.trim(),
        _ => text,
    }
}

/// Splits text into sentences.
///
/// A sentence ends at `.`, `!` or `?` (plus any run of further terminators and
/// closing quotes) when followed by whitespace or the end of the text. A period
/// after a known abbreviation does not end a sentence. Text without any
/// terminator becomes a single sentence.
pub fn segment_sentences(full_text: &str) -> Vec<Sentence> {
    let bytes = full_text.as_bytes();
    let mut sentences = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = full_text.char_indices().peekable();

    let push = |sentences: &mut Vec<Sentence>, s: usize, e: usize| {
        let text = full_text[s..e].trim_end();
        if !text.is_empty() {
            sentences.push(Sentence {
                index: sentences.len(),
                text: text.to_string(),
                char_span: (s, s + text.len()),
            });
        }
    };

    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if matches!(next, '.' | '!' | '?') || CLOSERS.contains(&next) {
                end = j + next.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let at_boundary = end == bytes.len() || full_text[end..].starts_with(char::is_whitespace);
        if !at_boundary {
            continue;
        }
        if c == '.' && end == i + 1 && follows_abbreviation(&full_text[..i]) {
            continue;
        }
        let s = start.take().expect("sentence start set above");
        push(&mut sentences, s, end);
    }
    if let Some(s) = start {
        push(&mut sentences, s, full_text.len());
    }
    sentences
}

fn follows_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .next()
        .unwrap_or("");
    ABBREVIATIONS.contains(&word)
}

/// Whitespace-collapsed form used by the segmentation round-trip property.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn generate_story(req: &StoryRequest, gateway: &Gateway, max_tokens: u32) -> Result<Story> {
    let prompt = build_story_prompt(req)?;
    let completion = gateway.complete_text(
        &prompt,
        &TextParams {
            max_tokens,
            seed: req.seed,
        },
    )?;
    Story::from_completion(&prompt, &completion)
}

pub fn generate_scene_description(
    story: &Story,
    sentence: &Sentence,
    style: &StyleConfig,
    gateway: &Gateway,
    params: &TextParams,
) -> Result<SceneDescription> {
    let prompt = build_description_prompt(story, sentence)?;
    let completion = gateway.complete_text(&prompt, params)?;
    let description_text = completion.trim().to_string();
    if description_text.is_empty() {
        return Err(Error::Contract(format!(
            "text backend returned an empty description for sentence {}",
            sentence.index
        )));
    }
    Ok(SceneDescription {
        sentence_index: sentence.index,
        augmented_prompt: augment_image_prompt(&description_text, style),
        description_text,
    })
}

/// One description per sentence, in sentence order.
pub fn generate_scene_descriptions(
    story: &Story,
    style: &StyleConfig,
    gateway: &Gateway,
    params: &TextParams,
    parallelism: usize,
) -> Result<Vec<SceneDescription>> {
    par_map(&story.sentences, parallelism, |_, sentence| {
        generate_scene_description(story, sentence, style, gateway, params)
    })
    .into_iter()
    .collect()
}
