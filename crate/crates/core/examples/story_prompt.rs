//! Prompt templates and sentence segmentation, no backends involved.

use storyreel::story::{
    augment_image_prompt, build_story_prompt, segment_sentences, GenrePreset, StoryRequest, StyleConfig,
};

fn main() -> storyreel::Result<()> {
    let req = StoryRequest::new("boy", "horse", 42, GenrePreset::Children)?;
    println!("story prompt:  {}", build_story_prompt(&req)?);
    let custom = StoryRequest::new("robot", "cat", 7, GenrePreset::parse("custom:bedtime tale")?)?;
    println!("custom prompt: {}", build_story_prompt(&custom)?);

    let text = "Mr. Smith had a horse named Pip. Pip ate 2.5 apples!  \"Where is the boy?\" asked Dr. Lee.\nThe boy laughed.";
    for s in segment_sentences(text) {
        println!("[{}] {:?} at bytes {:?}", s.index, s.text, s.char_span);
    }
    println!("{}", augment_image_prompt("a boy feeding a horse", &StyleConfig::default()));
    Ok(())
}
