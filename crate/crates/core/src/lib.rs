//! Interactive score inpainting: the score model, its MusicXML wire form, a
//! constrained Markov reference model, looped MIDI playback and a LAN tempo
//! synchronization protocol.

pub mod engine;
pub mod musicxml;
pub mod playback;
pub mod score;
pub mod sync;
pub mod corpus;
pub mod modelfile;
