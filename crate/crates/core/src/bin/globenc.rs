fn main() {
    std::process::exit(globenc::cli::main_with_args(std::env::args_os()));
}
