fn main() {
    std::process::exit(disk::cli::main_with_args(std::env::args_os()));
}
