use clap::Parser;

fn main() {
    let code = match hub_cli::Cli::try_parse() {
        Ok(cli) => hub_cli::run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    };
    std::process::exit(code);
}
