fn main() {
    std::process::exit(floquet_ness::cli::main_with_args(std::env::args_os()));
}
