//! Dialogue segmentation, transcript serialization, monologue slicing and
//! simulated dialogues built from monologues.

mod dialogue;
mod monologue;
mod utterance;

pub use dialogue::{prepare_dialogues, serialize_transcript, DialogueSample, DEFAULT_MAX_DURATION};
pub use monologue::{
    simulate_dialogues, slice_monologues, MonologueSample, SimConfig, SimulatedDialogue,
};
pub use utterance::{read_utterances, sort_chronological, Utterance};
