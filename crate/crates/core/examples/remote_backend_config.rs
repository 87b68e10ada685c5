//! Loads a live-backend configuration and shows the endpoints it resolves to.
//! Nothing is contacted.

use storyreel::config::PipelineConfig;

const CONFIG: &str = r#"
backends = "live"
seed = 7
candidates = 20

[[endpoints]]
kind = "text"
model = "text-davinci-002"
timeout_secs = 60
max_retries = 3
backoff_base_ms = 500
transport = { type = "remote_service", url = "https://llm.example/v1/completions", auth_token_env = "LLM_TOKEN" }

[[endpoints]]
kind = "image"
model = "stable-diffusion-v1-4"
timeout_secs = 120
max_retries = 2
backoff_base_ms = 1000
transport = { type = "remote_service", url = "http://gpu-box:7860/generate" }

[[endpoints]]
kind = "tts"
model = "vits-ljspeech"
timeout_secs = 60
max_retries = 0
backoff_base_ms = 100
transport = { type = "local_process", command = "tts --text-file {input} --out_path {output} --seed {seed}" }

[[endpoints]]
kind = "music"
model = "jukebox-5b"
timeout_secs = 3600
max_retries = 1
backoff_base_ms = 5000
transport = { type = "remote_service", url = "http://gpu-box:9000/music" }

[[endpoints]]
kind = "vocal_separation"
model = "spleeter-2stems"
timeout_secs = 300
max_retries = 0
backoff_base_ms = 100
transport = { type = "local_process", command = "separate {input} {output}" }
"#;

fn main() -> storyreel::Result<()> {
    let path = std::env::args().nth(1);
    let cfg = match &path {
        Some(p) => PipelineConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => PipelineConfig::from_toml(CONFIG)?,
    };
    cfg.validate()?;
    for ep in cfg.resolved_endpoints()? {
        println!("{:<17} {:<24} retries={} timeout={}s {:?}", ep.kind.to_string(), ep.model, ep.max_retries, ep.timeout_secs, ep.transport);
    }
    Ok(())
}
