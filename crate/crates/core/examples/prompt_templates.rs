//! Lists the prompt registry, renders one template and round-trips an answer
//! through the gateway, including a reprompt after a malformed reply.
//!
//! Run with `cargo run --example prompt_templates`.

use std::error::Error;
use std::sync::Arc;

use xkg::llm::{slots, Gateway, LlmProfile, StubProvider, StubRule, TemplateId, TEMPLATES};

fn main() -> Result<(), Box<dyn Error>> {
    for t in TEMPLATES.iter() {
        println!("{:<20} {:?} -> {:?}  slots {:?}", t.id.as_str(), t.role, t.contract, t.slots);
    }

    let values = slots([("description", "Train a widget encoder with a contrastive loss.".to_owned())]);
    let prompt = TemplateId::DecomposeTask.template().render(&values)?;
    println!("\n{prompt}");

    // The first reply has no fenced answer, so the gateway asks once more.
    let stub = StubProvider::new()
        .with_rule(TemplateId::DecomposeTask, StubRule { attempt: Some(0), response: "Sure, here you go!".into(), ..Default::default() })
        .with_rule(
            TemplateId::DecomposeTask,
            StubRule {
                attempt: Some(1),
                response: "```\n[(\"Widget Encoder\", \"Normalize widgets.\"), (\"Contrastive Loss\", \"Score pairs.\")]\n```".into(),
                ..Default::default()
            },
        );
    let gw = Gateway::single(Arc::new(stub), LlmProfile::default());
    println!("pairs: {:?}", gw.chat_pairs(TemplateId::DecomposeTask, &values)?);
    println!("usage: {:?}", gw.usage());
    Ok(())
}
