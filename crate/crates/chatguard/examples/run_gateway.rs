//! Serve the HTTP moderation gateway on a local port.
//!
//! ```bash
//! cargo run -p chatguard --example run_gateway
//! curl -s localhost:8080/healthz
//! curl -s localhost:8080/v1/policies
//! curl -s localhost:8080/v1/moderate -d '{"messages":[{"role":"user","content":"hi"}]}' \
//!      -H 'content-type: application/json'
//! ```
//!
//! Set `GUARD_BACKEND_URL` to drive a real OpenAI-completions-compatible
//! endpoint instead of the mock; `GUARD_BIND` overrides the bind address.

use std::sync::Arc;

use chatguard::backend::{CompletionBackend, HttpBackend, HttpBackendConfig, MockBackend};
use chatguard::gateway::serve;
use chatguard::gateway::Gateway;
use chatguard::policy::PolicyRegistry;

#[tokio::main]
async fn main() {
    let backend: Arc<dyn CompletionBackend> = match std::env::var("GUARD_BACKEND_URL") {
        Ok(url) => {
            println!("using completion endpoint at {url}");
            Arc::new(HttpBackend::new(HttpBackendConfig::new(url)).expect("client builds"))
        }
        Err(_) => {
            println!("GUARD_BACKEND_URL unset; using the deterministic mock backend");
            Arc::new(MockBackend::new())
        }
    };

    let bind = std::env::var("GUARD_BIND")
        .unwrap_or_else(|_| "127.0.0.1:8080".to_string())
        .parse()
        .expect("GUARD_BIND is host:port");

    let gateway = Arc::new(Gateway::new(backend, PolicyRegistry::with_builtin()).with_max_in_flight(16));
    println!("listening on http://{bind} (ctrl-c to stop)");
    serve(gateway, bind).await.expect("server runs");
}
