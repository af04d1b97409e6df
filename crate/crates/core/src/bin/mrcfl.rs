use std::io;

use mrcfl::cli::{run, Hooks};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = run(
        std::env::args_os(),
        &mut io::stdout(),
        &mut io::stderr(),
        &Hooks::default(),
    );
    std::process::exit(code);
}
