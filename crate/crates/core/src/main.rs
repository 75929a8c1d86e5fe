fn main() {
    std::process::exit(nifm::cli::main_with_args(std::env::args_os()));
}
