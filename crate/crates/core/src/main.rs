fn main() {
    std::process::exit(safe_manip::cli::main_with_args(std::env::args_os()));
}
