fn main() {
    std::process::exit(polyfwd::cli::main_with_args(std::env::args_os()));
}
