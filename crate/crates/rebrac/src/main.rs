fn main() {
    std::process::exit(rebrac::cli::main_with(std::env::args_os()));
}
