//! Backs the honest agents of the clean pipeline with a remote
//! chat-completion endpoint instead of scripted policies.
//!
//! Requires an OpenAI-compatible endpoint. Set the credential in the
//! environment; it is read at request time and never stored or logged:
//!
//! ```sh
//! FABRIC_API_KEY=... cargo run --example live_chat -- \
//!     https://api.example.com/v1/chat/completions model-name
//! ```

use agent_fabric::{run, RemoteChatSpec, Scenario};

fn main() {
    let mut args = std::env::args().skip(1);
    let (endpoint, model) = match (args.next(), args.next()) {
        (Some(e), Some(m)) => (e, m),
        _ => {
            eprintln!("usage: live_chat <endpoint> <model>");
            std::process::exit(2);
        }
    };

    let mut scenario = Scenario::clean_pipeline(7, 2);
    scenario.live = true;
    scenario.remote = Some(RemoteChatSpec {
        endpoint,
        model,
        ..Default::default()
    });

    match run(&scenario) {
        Ok(artifacts) => {
            for outcome in &artifacts.outcomes {
                println!(
                    "task {}: answer {:?} ({})",
                    outcome.task,
                    outcome.answer,
                    if outcome.correct { "correct" } else { "wrong" }
                );
            }
        }
        Err(err) => {
            eprintln!("live run failed: {err}");
            std::process::exit(1);
        }
    }
}
