fn main() {
    std::process::exit(spurious::cli::main_with_args(std::env::args_os()));
}
