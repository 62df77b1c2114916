fn main() {
    std::process::exit(dmlkit::cli::main_with(std::env::args_os()));
}
