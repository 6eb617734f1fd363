use clap::Parser;
use hvts_cli::{run, Cli, CliError};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let err = CliError::Usage(e.to_string());
            eprintln!("{e}");
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(path) => println!("{}", path.display()),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
