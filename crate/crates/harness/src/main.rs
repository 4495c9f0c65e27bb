fn main() {
    std::process::exit(steerlab::cli::main_with_args(std::env::args_os()));
}
