//! Versioned prompt assets. Tests pin these byte-for-byte.

/// Judge prompt for methods that take the two input images separately.
pub const JUDGE_TWO_INPUT: &str = include_str!("../assets/prompts/judge_two_input_v1.txt");

/// Judge prompt for methods conditioned on one canvas holding both inputs.
pub const JUDGE_GRID_INPUT: &str = include_str!("../assets/prompts/judge_grid_input_v1.txt");

/// Conditioning prompt shared by combiner training and inference.
pub const COMBINE_PROMPT: &str =
    "Combine the element in the top left with the element in the bottom right to create a single object inspired by both of them.";
