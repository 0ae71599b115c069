fn main() {
    std::process::exit(weaksed::cli::main_with_args(std::env::args_os()));
}
