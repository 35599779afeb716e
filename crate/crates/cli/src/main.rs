fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(divbar_cli::run(std::env::args_os()))
}
