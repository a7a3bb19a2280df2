//! Minimal WebSocket client for a running monitor. Start the server first:
//!
//! ```bash
//! cargo run --release -- --dim 256 gen-episodes
//! cargo run --release -- --dim 256 gen-activations
//! cargo run --release -- --dim 256 sweep
//! cargo run --release -- --dim 256 serve --port 8787
//! cargo run --release --example monitor_client -- ws://127.0.0.1:8787/ws 0
//! ```

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::{connect_async, tungstenite::Message};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let url = args
        .next()
        .unwrap_or_else(|| "ws://127.0.0.1:8787/ws".into());
    let task_id: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let (mut ws, _) = connect_async(url.as_str()).await?;
    ws.send(Message::text(
        json!({"type": "start_task", "task_id": task_id}).to_string(),
    ))
    .await?;
    let mut names: Vec<String> = Vec::new();
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { continue };
        let v: Value = serde_json::from_str(text.as_str())?;
        match v["type"].as_str().unwrap_or_default() {
            "hello" => println!("session {}", v["session_id"]),
            "task_started" => {
                println!("{}", v["instruction"]);
                names = serde_json::from_value(v["atom_names"]["action"].clone())?;
            }
            "step" => {
                let active: Vec<&str> = v["action_state"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .zip(&names)
                    .filter(|(b, _)| b.as_u64() == Some(1))
                    .map(|(_, n)| n.as_str())
                    .collect();
                println!(
                    "t={:>3} events={:<2} violations={} action: {}",
                    v["timestep"],
                    v["events"].as_array().map_or(0, Vec::len),
                    v["violations"].as_array().map_or(0, Vec::len),
                    active.join(" ")
                );
            }
            "task_complete" => {
                println!("done: {} steps, success={}", v["total_steps"], v["success"]);
                break;
            }
            _ => println!("{text}"),
        }
    }
    ws.close(None).await?;
    Ok(())
}
