fn main() {
    std::process::exit(flywheel_core::cli::main_with(std::env::args_os()));
}
