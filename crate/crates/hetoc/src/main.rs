fn main() {
    std::process::exit(hetoc::cli::main_with_args(std::env::args_os()));
}
