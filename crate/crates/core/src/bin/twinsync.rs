fn main() {
    std::process::exit(twinsync::cli::main_with_args(std::env::args_os()));
}
