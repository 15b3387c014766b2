fn main() {
    std::process::exit(dress::cli::main_with_args(std::env::args_os()));
}
