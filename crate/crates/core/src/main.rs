use std::sync::Arc;

use biasprobe::cli::run_cli;
use biasprobe::gateway::ProviderRegistry;

fn main() {
    let code = run_cli(
        std::env::args_os(),
        Arc::new(ProviderRegistry::with_builtins()),
    );
    std::process::exit(code);
}
