fn main() {
    std::process::exit(vistopic::cli::main_with_args(std::env::args_os()));
}
