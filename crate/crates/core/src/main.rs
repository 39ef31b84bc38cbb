fn main() {
    std::process::exit(rmac::cli::main_with(std::env::args_os()));
}
