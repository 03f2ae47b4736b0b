use clap::Parser;

fn main() {
    let cli = match litforge::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are input errors; exit code 2 is reserved for missing upstream artifacts.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match litforge::execute(cli) {
        Ok((stdout, log)) => {
            for line in log {
                eprintln!("{line}");
            }
            print!("{stdout}");
        }
        Err(e) => {
            eprintln!("litforge: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
