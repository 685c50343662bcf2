fn main() {
    std::process::exit(tpa_cli::main_with_args(std::env::args_os()));
}
