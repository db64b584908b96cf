fn main() -> std::process::ExitCode {
    dvga_cli::main_with(std::env::args_os())
}
