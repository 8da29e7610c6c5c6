fn main() {
    std::process::exit(rgfm::cli::main_with_args(std::env::args_os()));
}
