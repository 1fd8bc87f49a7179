use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match codecbox::Cli::parse(args) {
        Ok(cli) => cli,
        Err(e) => {
            eprintln!("codecbox: {e}");
            eprintln!(
                "usage: codecbox [-hide_banner] [-loglevel L] [-y] -i INPUT \
                 [-c:a libmp3lame|libopus|libvorbis] [-b:a RATE] [-q:a Q] [-ar HZ] OUTPUT"
            );
            return ExitCode::from(2);
        }
    };
    match codecbox::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("codecbox: {e}");
            ExitCode::from(1)
        }
    }
}
