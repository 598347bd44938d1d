fn main() {
    std::process::exit(relclean::cli::main_with_args(std::env::args_os()));
}
