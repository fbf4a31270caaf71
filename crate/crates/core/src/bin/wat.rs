fn main() {
    std::process::exit(wat_core::cli::main_with_args(std::env::args_os()));
}
