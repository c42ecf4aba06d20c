fn main() {
    std::process::exit(hamshoot::cli::main_with_args(std::env::args_os()));
}
