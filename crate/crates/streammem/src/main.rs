fn main() {
    std::process::exit(streammem::cli::main_with_args(std::env::args_os()));
}
