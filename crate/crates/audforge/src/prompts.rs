//! Prompt templates and the placeholder substitution used to instantiate
//! them. Templates are fixed artifact content; the pipeline fills their
//! placeholders but never rewords them.

use std::collections::BTreeMap;

/// Instruction block sent to the caption-mining judge. The candidate caption
/// is appended after this text, separated by a blank line.
pub const MINING_FILTER_PROMPT: &str = r#"You are a friendly chatbot whose task it is to filter out bad data.
You will get a closed caption corresponding to a video clip.
Your task is to state whether the caption is a correct subtitle for deaf or hard-of-hearing people.
Correct captions in this task are those that correspond to words that could represent an actual sound being made.
This could either include a verb that states an impact or sound types or properties like "sound", "noise" or "music".
Incorrect closed captions include sentences that someone is saying in the video clip, or sentences that are not related to the video clip at all.
All captions are in English. All captions are within curly brackets or square brackets [].
Examples of correct captions include:
- "(laughs)" or "(laughter)"
- "[XBOX SOUND]"
- "[chicken bocking imitation]"
- "(cereal grains smacking onto wood)"
- "(collision)"

Examples of incorrect captions include:
- "[ transport ]"
- "(Wishes are left to wither by time.)"
- "(look, I like my nightmareless sleep; I'll play some scary games when I feel too peaceful)"
- "[A calm navy color] [TinyTAN character detail]"
- "[Haotian Sword Tower]"

Is the following caption correct? Please only answer "yes" or "no""#;

/// Full prompt for one mining-judge call.
pub fn mining_judge_prompt(caption: &str) -> String {
    format!("{MINING_FILTER_PROMPT}\n\n{caption}")
}

/// Template for the caption synthesis call. Placeholders: {video_id},
/// {start}, {end}, {text}, {audio_caption}, {audio_tags},
/// {conette_candidates}, {sat_predictions}, {music_caption_section},
/// {caption}, {objects}, {places}.
pub const GENERATION_PROMPT_TEMPLATE: &str = r#"You are an expert audio caption generator to create training data for an audio model. Your task is to create a detailed caption that describes what happens in an audio segment, including a Chain-of-Thought (CoT) reasoning process. You will be provided with various types of information extracted from audio processing models and supporting visual context. Your goal is to write a thinking process and answer as if you would only have the audio itself, without any of the following information.

Given Information:
1. Basic Information:
    - Video ID: {video_id}
    - Time Segment: {start} to {end} seconds
    - Original Closed Caption: {text} (This is the most important information to keep in mind)

2. Model-Generated Audio Information:
    - Audio Caption: {audio_caption}
    - Audio Tags (each with a confidence score): {audio_tags}
    - Short Audio Caption: {conette_candidates}
    - Predictions Per Second (key is the second, value is dict of sound and confidence score): {sat_predictions}
    {music_caption_section}

3. Supporting Visual Context:
    Scene Description: {caption}
    Detected Objects (COCO labels): {objects}
    Scene Classification (Places365): {places}

Context Evaluation Guidelines:
1. Use visual information ONLY if it:
    a) Strongly aligns with AND confirms audio evidence
    b) Provides essential acoustic environment context unavailable from audio
2. Ignore visual information if:
    a) Contradicts audio evidence
    b) Talks about text/graphics/static images
    c) Describes visual-only elements
NEVER mention the visual context or visual elements in the thinking step, ONLY use it to infer the audio context.

In your output in the thinking step, analyze the audio scene in detail, reason about the primary and background sounds, and describe what happens in the audio. Include key events and activities, and the environment and context.

Guidelines:
- Use natural, descriptive language
- The thinking should be at least 50 words
- Keep the final caption under 50 words
- Do not include timestamps
- Do not mention specific speech content unless crucial to understanding the audio scene
- Use the prediction per second to determine the order of the sounds in the caption
- The reasoning process MUST include thought expressions in natural language. This includes discourse markers, hesitation phrases, cognitive markers and casual suggestions.
- NEVER describe or mention the original data fields directly in your reasoning process. You are generating training data for an audio model, and the model should learn to reason from the audio itself and NOT from the extracted data given including any of the visual context.

DO NOT mention any of the outputs of the models in the thinking step.

Please provide your response as a JSON object with the following keys:
- thinking: The thinking process
- answer: The caption"#;

/// Line substituted for {music_caption_section} when a music caption exists.
pub fn music_caption_section(music_caption: &str) -> String {
    format!("- Music Caption: {music_caption}")
}

/// Template for the synthesis judge call. Placeholder: {generated_output}.
pub const JUDGE_PROMPT_TEMPLATE: &str = r#"You are a strict judge for an audio caption generator. Your task is to verify whether the generated output adheres to all the rules from the original prompt. In particular, check the following:
1. The 'thinking' process should contain a Chain-of-Thought (CoT) reasoning process.
2. The 'thinking' process must not mention "predictions per second" or any similar phrasing.
3. The 'thinking' process must not include any of the original data fields directly.
4. The 'answer' should be a valid audio caption containing no visual elements or contexts.

Examine the generated output below carefully and respond with a JSON object that includes:
    - "valid": set to true if all rules are followed, or false if any rule is broken.
    - "reason": if false, a brief explanation of which rule(s) were violated.

--- Generated Output Start ---
{generated_output}
--- Generated Output End ---"#;

/// Full prompt for one synthesis-judge call.
pub fn judge_validation_prompt(generated_output: &str) -> String {
    fill_template(
        JUDGE_PROMPT_TEMPLATE,
        &BTreeMap::from([("generated_output", generated_output.to_string())]),
    )
}

/// System prompt that elicits three-phase tagged responses at generation
/// time.
pub const PREPENDED_PROMPT_SEMANTIC: &str = "You are given a question and an audio clip. Your task is to answer the question based on the audio clip. First, think about the question and the audio clip and put your thoughts in <think> and </think> tags. Then reason about the semantic elements involved in the audio clip and put your reasoning in <semantic_elements> and </semantic_elements> tags. Then answer the question based on the audio clip, put your answer in <answer> and </answer> tags.";

/// System prompt that elicits two-phase tagged responses at generation time.
pub const PREPENDED_PROMPT_SIMPLE: &str = "You are given a question and an audio clip. Your task is to answer the question based on the audio clip. First, think about the question and the audio clip and put your thoughts in <think> and </think> tags. Then answer the question based on the audio clip, put your answer in <answer> and </answer> tags.";

/// Replaces `{name}` placeholders with values from `fields` in a single
/// pass. Unknown placeholders and unmatched braces pass through verbatim;
/// substituted values are never rescanned, so field content can safely
/// contain braces or placeholder-like text.
pub fn fill_template(template: &str, fields: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(rel_end) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + rel_end];
                if let Some(value) = fields.get(name) {
                    out.push_str(value);
                    i += rel_end + 2;
                    continue;
                }
            }
        }
        let ch = template[i..].chars().next().expect("in-bounds char");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}
