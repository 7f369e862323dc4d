fn main() {
    std::process::exit(bdg_cli::main_with_args(std::env::args_os()));
}
