fn main() {
    std::process::exit(cmdn::cli::main_with_args(std::env::args_os()));
}
