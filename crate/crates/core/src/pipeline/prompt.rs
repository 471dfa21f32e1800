use std::path::Path;

use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::corpus::CueBundle;

pub const FUSION_PLACEHOLDERS: [&str; 5] = [
    "audio_tags",
    "audio_description",
    "speech_content",
    "music_description",
    "video_description",
];

/// A prompt template with its content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
    pub hash: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            name: name.into(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
            text,
        }
    }

    pub fn load(name: &str, path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Template {
            name: name.to_owned(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Ok(Self::new(name, text))
    }
}

/// The built-in templates.
pub mod builtin {
    pub const ASR: &str = include_str!("../../prompts/asr.txt");
    pub const AUDIO_CAPTION: &str = include_str!("../../prompts/audio_caption.txt");
    pub const MUSIC_CAPTION: &str = include_str!("../../prompts/music_caption.txt");
    pub const VIDEO_CAPTION: &str = include_str!("../../prompts/video_caption.txt");
    pub const FUSION: &str = include_str!("../../prompts/fusion.txt");
}

/// The prompt set used by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub asr: PromptTemplate,
    pub audio_caption: PromptTemplate,
    pub music_caption: PromptTemplate,
    pub video_caption: PromptTemplate,
    pub fusion: FusionTemplate,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            asr: PromptTemplate::new("asr", builtin::ASR),
            audio_caption: PromptTemplate::new("audio_caption", builtin::AUDIO_CAPTION),
            music_caption: PromptTemplate::new("music_caption", builtin::MUSIC_CAPTION),
            video_caption: PromptTemplate::new("video_caption", builtin::VIDEO_CAPTION),
            fusion: FusionTemplate::new(PromptTemplate::new("fusion", builtin::FUSION)).expect("built-in fusion template"),
        }
    }
}

/// The five fusion input slots; any may be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FusionPromptInputs {
    pub tag_line: String,
    pub audio_caption: String,
    pub speech_transcript: String,
    pub music_caption: String,
    pub video_caption: String,
}

impl FusionPromptInputs {
    pub fn from_cues(cues: &CueBundle) -> Self {
        let s = |v: &Option<String>| v.clone().unwrap_or_default();
        Self {
            tag_line: cues.tag_line.clone(),
            audio_caption: s(&cues.audio_caption),
            speech_transcript: s(&cues.speech_transcript),
            music_caption: s(&cues.music_caption),
            video_caption: s(&cues.video_caption),
        }
    }

    fn slot(&self, name: &str) -> &str {
        match name {
            "audio_tags" => &self.tag_line,
            "audio_description" => &self.audio_caption,
            "speech_content" => &self.speech_transcript,
            "music_description" => &self.music_caption,
            "video_description" => &self.video_caption,
            _ => unreachable!("unknown placeholder {name}"),
        }
    }
}

/// A fusion template known to contain each placeholder exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTemplate {
    template: PromptTemplate,
}

impl FusionTemplate {
    pub fn new(template: PromptTemplate) -> Result<Self, PipelineError> {
        for name in FUSION_PLACEHOLDERS {
            let n = template.text.matches(&format!("{{{name}}}")).count();
            if n != 1 {
                return Err(PipelineError::Template {
                    name: template.name.clone(),
                    message: format!("placeholder {{{name}}} occurs {n} times, expected exactly once"),
                });
            }
        }
        Ok(Self { template })
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    /// Substitutes all slots in one pass, so slot values that happen to
    /// contain placeholder text are left alone.
    pub fn render(&self, inputs: &FusionPromptInputs) -> String {
        let text = &self.template.text;
        let mut out = String::with_capacity(text.len() + 1024);
        let mut rest = text.as_str();
        'scan: while let Some(open) = rest.find('{') {
            for name in FUSION_PLACEHOLDERS {
                let tail = &rest[open + 1..];
                if tail.starts_with(name) && tail[name.len()..].starts_with('}') {
                    out.push_str(&rest[..open]);
                    out.push_str(inputs.slot(name));
                    rest = &tail[name.len() + 1..];
                    continue 'scan;
                }
            }
            out.push_str(&rest[..=open]);
            rest = &rest[open + 1..];
        }
        out.push_str(rest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> FusionPromptInputs {
        FusionPromptInputs {
            tag_line: "Speech(100%), Rain(80%)".into(),
            audio_caption: "rain on a roof".into(),
            speech_transcript: String::new(),
            music_caption: "{music_description}".into(),
            video_caption: "00:01 - a window".into(),
        }
    }

    #[test]
    fn builtin_template_renders_every_slot_once() {
        let p = Prompts::default();
        let out = p.fusion.render(&inputs());
        for name in FUSION_PLACEHOLDERS {
            if name != "music_description" {
                assert!(!out.contains(&format!("{{{name}}}")), "{name} left in output");
            }
        }
        assert_eq!(out.matches("Speech(100%), Rain(80%)").count(), 1);
        assert_eq!(out.matches("rain on a roof").count(), 1);
        // A slot value that looks like a placeholder is not re-expanded.
        assert_eq!(out.matches("{music_description}").count(), 1);
    }

    #[test]
    fn empty_slots_keep_section_headers() {
        let p = Prompts::default();
        let out = p.fusion.render(&FusionPromptInputs::default());
        assert!(out.contains("Speech Content:\n\n\nMusic Description:"));
        assert!(out.ends_with("Video Description:\n") || out.ends_with("Video Description:\n\n"));
    }

    #[test]
    fn template_validation() {
        let bad = PromptTemplate::new("f", "{audio_tags} {audio_tags}");
        let err = FusionTemplate::new(bad).unwrap_err();
        assert!(err.to_string().contains("{audio_tags} occurs 2 times"));
        let ok = PromptTemplate::new(
            "f",
            "{a} {audio_tags}|{audio_description}|{speech_content}|{music_description}|{video_description}",
        );
        let out = FusionTemplate::new(ok).unwrap().render(&inputs());
        assert_eq!(out, "{a} Speech(100%), Rain(80%)|rain on a roof||{music_description}|00:01 - a window");
    }

    #[test]
    fn hash_tracks_content() {
        assert_eq!(PromptTemplate::new("a", "x").hash, PromptTemplate::new("b", "x").hash);
        assert_ne!(PromptTemplate::new("a", "x").hash, PromptTemplate::new("a", "y").hash);
    }
}
