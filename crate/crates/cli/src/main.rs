fn main() -> std::process::ExitCode {
    crossphase_cli::run(std::env::args_os())
}
