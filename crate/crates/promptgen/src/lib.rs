//! k-shot prompting for class descriptions: a fixed example schedule with
//! a reserve for collisions, an HTTP or fixture-backed client, and a
//! content-addressed response cache.

pub mod client;
pub mod error;
pub mod generate;
pub mod plan;

pub use client::{HttpClient, LlmClient, LlmRequest, LlmResponse, MockClient};
pub use error::{Error, Result};
pub use generate::{cache_key, generate_views, merge_views, Cache, GenerateConfig, GenerateStats};
pub use plan::{base_schedule, mentions, plan_prompts, render_block, Example, ExamplePool, PromptPlan, Target};
