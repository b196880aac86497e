use clap::Parser;
use dragpart::cli::{error_json, init_logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    init_logging(cli.log_json);
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{}", error_json(&e));
            std::process::exit(if matches!(e, dragpart::Error::Validation { .. }) { 3 } else { 1 });
        }
    }
}
