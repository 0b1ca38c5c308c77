fn main() {
    std::process::exit(tractmatch::cli::main_with_args(std::env::args_os()));
}
