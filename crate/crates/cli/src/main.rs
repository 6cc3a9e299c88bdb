fn main() {
    std::process::exit(dpmil_cli::main_with_args(std::env::args_os()));
}
