fn main() {
    std::process::exit(unetformer::cli::main_with_args(std::env::args_os()));
}
