use clap::Parser;

use igbss::cli::{self, Cli};

fn main() {
    let code = match Cli::try_parse() {
        Ok(parsed) => cli::run(parsed),
        Err(err) => {
            let code = if err.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK };
            let _ = err.print();
            code
        }
    };
    std::process::exit(code);
}
